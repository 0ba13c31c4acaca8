"""Result persistence: atomic writes, 17-digit CSV and run manifests."""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path

from . import __version__

MANIFEST_NAME = "manifest.json"


def format_value(x):
    """Stable text for one CSV cell; floats keep 17 significant digits."""
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return format(x, ".17g")
    if hasattr(x, "value"):  # enums
        return str(x.value)
    try:
        return format(float(x), ".17g")
    except (TypeError, ValueError):
        return str(x)


def atomic_write_bytes(path, data: bytes):
    """Write to a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def csv_bytes(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_value(v) for v in row])
    return buf.getvalue().encode()


def _json_default(x):
    if hasattr(x, "value"):
        return x.value
    if hasattr(x, "tolist"):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def _json_clean(x):
    # NaN/inf are not valid JSON; emit null
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _json_clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_clean(v) for v in x]
    return x


def json_bytes(obj):
    return (json.dumps(_json_clean(obj), indent=2, sort_keys=True, default=_json_default) + "\n").encode()


def write_table(path, header, rows, fmt="csv"):
    """Write a table as CSV or as a JSON list of records; returns the path."""
    rows = [list(r) for r in rows]
    if fmt == "csv":
        data = csv_bytes(header, rows)
    elif fmt == "json":
        recs = []
        for r in rows:
            recs.append({h: (v.value if hasattr(v, "value") else v) for h, v in zip(header, r)})
        data = json_bytes(recs)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return atomic_write_bytes(path, data)


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def utc_now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


class RunRecorder:
    """Collects outputs, stage timings and jitter values for one run.

    :meth:`finish` writes the manifest last; a directory without a manifest
    is an incomplete run.
    """

    def __init__(self, out_dir, command, config_echo):
        self.out_dir = Path(out_dir)
        self.command = command
        self.config_echo = config_echo
        self.files = []
        self.stages = {}
        self.jitter = []
        self.extra = {}

    def path(self, name):
        return self.out_dir / name

    def add_file(self, path):
        self.files.append(Path(path))

    def add_stage(self, name, seconds):
        self.stages[name] = self.stages.get(name, 0.0) + float(seconds)

    def finish(self):
        inventory = []
        for p in self.files:
            inventory.append({"name": p.name, "bytes": p.stat().st_size, "sha256": sha256_file(p)})
        manifest = {
            "tool": "qvarlab",
            "version": __version__,
            "command": self.command,
            "config": self.config_echo,
            "wall_time_s": self.stages,
            "jitter": self.jitter,
            "files": inventory,
            "created_at": utc_now(),
        }
        manifest.update(self.extra)
        return atomic_write_bytes(self.out_dir / MANIFEST_NAME, json_bytes(manifest))
