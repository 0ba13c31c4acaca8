"""``qvarlab`` command line.

    qvarlab <subcommand> --config <path> [--seed N] [--out DIR] [--format csv|json]

Exit codes: 0 success, 2 invalid configuration (nothing is written),
3 an assertion-bearing command found violations, 1 internal error.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
import traceback
from contextlib import contextmanager

import numpy as np

from . import __version__
from ._backend import BACKEND
from .config import ConfigError, ExperimentConfig, json_schema, load_config
from .errors import GuardError, ParameterError
from .increments import BOUND_IDS, DyadicGrid, Scheme, double_sequence, exact_moments, tri_bounds, verify_tri_bounds
from .io import RunRecorder, write_table
from .models import covariance, psi_asymptotic_coeff, structure_function, structure_function_mp
from .qvar import estimate_hk, estimate_hk_exact_proxy, qv_sweep, weighted_qv
from .simulation import simulate_increments, simulate_lei_nualart, write_ensemble

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_VIOLATIONS = 0, 1, 2, 3

HK_REFUSAL = (
    "refusing to estimate: HK = {hk:g} > 1/2. Above 1/2 the critical weight exponent "
    "of the quadratic variation saturates at 1, so -log2(sum of squared increments)/(2n) "
    "tends to 1/2 rather than HK and does not identify the self-similarity index."
)


class _Run:
    def __init__(self, cfg: ExperimentConfig, command, argv):
        self.cfg = cfg
        self.command = command
        self.rec = RunRecorder(cfg.output_dir, {"subcommand": command, "argv": list(argv)}, cfg.model_dump(mode="json"))
        self.rec.extra["backend"] = BACKEND

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        yield
        self.rec.add_stage(name, time.perf_counter() - t0)

    def table(self, stem, header, rows):
        path = self.rec.path(f"{stem}.{self.cfg.format}")
        write_table(path, header, rows, self.cfg.format)
        self.rec.add_file(path)
        return path


# ---------------------------------------------------------------------------
# validation (runs before any output is created)
# ---------------------------------------------------------------------------


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _validate(command, cfg: ExperimentConfig):
    spec = cfg.spec
    g = cfg.guards
    if command == "bounds-verify":
        _require(spec.is_tri, "bounds-verify applies to tri-fBm only; the increment bounds have no n-fBm analogue")
        if cfg.bounds.cell is None:
            _require(max(cfg.bounds.m + cfg.bounds.n) <= g.matrix_level, f"bounds levels exceed matrix guard {g.matrix_level}")
        else:
            _require(max(cfg.bounds.cell.m, cfg.bounds.cell.n) <= g.matrix_level, f"cell level exceeds matrix guard {g.matrix_level}")
    elif command == "amn-table":
        _require(cfg.amn.max_level <= g.double_sum, f"amn.max_level exceeds double-sum guard {g.double_sum}")
        _require(cfg.amn.row <= cfg.amn.max_level, "amn.row must not exceed amn.max_level")
    elif command == "moments":
        _require(cfg.levels.max <= g.mean_level, f"levels.max exceeds mean guard {g.mean_level}")
    elif command == "estimate":
        _require(spec.is_tri, "the estimator is defined for tri-fBm only")
        _require(spec.self_similarity <= 0.5, HK_REFUSAL.format(hk=spec.self_similarity))
        _require(cfg.levels.min >= 1, "estimate needs levels.min >= 1")
        _require(cfg.levels.max <= g.mean_level, f"levels.max exceeds mean guard {g.mean_level}")
    elif command == "simulate":
        _require(cfg.simulation.level <= g.simulation_level, f"simulation.level exceeds simulation guard {g.simulation_level}")
        if cfg.simulation.generator == "lei_nualart":
            _require(spec.is_tri, "the Lei-Nualart generator exists for tri-fBm only")
    elif command == "asymptotics":
        _require(not spec.is_tri and spec.order >= 2, "asymptotics needs an n-fBm process with order >= 2")
    elif command == "qv-sweep":
        _require(len(cfg.alphas) > 0, "alphas must not be empty")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_cov_table(run: _Run):
    spec = run.cfg.spec
    rows = []
    with run.stage("compute"):
        for s in run.cfg.cov_table.s:
            for t in run.cfg.cov_table.t:
                c = covariance(spec, s, t)
                css, ctt = covariance(spec, s, s), covariance(spec, t, t)
                psi = structure_function(spec, s, t)
                scale = css + ctt
                resid = abs(psi - (css + ctt - 2 * c))
                rows.append([s, t, c, psi, resid / scale if scale > 0 else resid])
    with run.stage("write"):
        run.table("cov_table", ["s", "t", "cov", "psi", "identity_residual"], rows)
    return EXIT_OK


def _simulate(run: _Run, level):
    cfg = run.cfg
    grid = DyadicGrid(level, cfg.horizon)
    if cfg.simulation.generator == "lei_nualart":
        spec = cfg.spec
        ens = simulate_lei_nualart(spec.H, spec.K, grid, cfg.simulation.quadrature.to_spec(), cfg.num_paths, cfg.seed)
    else:
        ens = simulate_increments(cfg.spec, grid, cfg.num_paths, cfg.seed, cfg.guards.to_guards())
    run.rec.jitter.append({"level": level, "generator": ens.generator_id, "epsilon": ens.jitter})
    return ens


def cmd_qv_sweep(run: _Run):
    cfg = run.cfg
    levels = cfg.levels.values()
    ens = None
    if cfg.num_paths > 0:
        with run.stage("simulate"):
            ens = _simulate(run, min(cfg.levels.max, cfg.guards.simulation_level))
    rows = []
    with run.stage("compute"):
        for alpha in cfg.alphas:
            res = qv_sweep(cfg.spec, alpha, levels, cfg.horizon, cfg.guards.to_guards(), ens, cfg.classification.to_rule())
            label = res.classification.value if res.classification else "insufficient-levels"
            for i, n in enumerate(levels):
                rows.append([n, alpha, res.exact_mean[i], res.exact_var[i], res.mc_mean[i], res.mc_se[i], label, res.notes[i]])
    with run.stage("write"):
        run.table("qv_sweep", ["n", "alpha", "exact_mean", "exact_var", "mc_mean", "mc_se", "classification", "note"], rows)
    return EXIT_OK


def cmd_moments(run: _Run):
    cfg = run.cfg
    rows = []
    with run.stage("compute"):
        for alpha in cfg.alphas:
            for n in cfg.levels.values():
                mp = exact_moments(cfg.spec, n, alpha, cfg.horizon, cfg.guards.to_guards())
                rows.append([n, alpha, mp.mean, mp.variance, mp.mean_only])
    with run.stage("write"):
        run.table("moments", ["n", "alpha", "mean", "variance", "mean_only"], rows)
    return EXIT_OK


def cmd_bounds_verify(run: _Run):
    cfg = run.cfg
    b = cfg.bounds
    if b.cell is not None:
        spec = cfg.spec
        c = b.cell
        with run.stage("compute"):
            rep = tri_bounds(spec.H, spec.K, c.m, c.n, c.j, c.k, cfg.horizon)
        cols = ["bound_2d", "bound_2d_var", "bound_1d_gt", "bound_1d2"]
        row = [rep.H, rep.K, rep.m, rep.n, rep.j, rep.k, rep.phi] + [rep.bounds[i] for i in BOUND_IDS] + [rep.variant]
        with run.stage("write"):
            run.table("bounds_cell", ["H", "K", "m", "n", "j", "k", "phi"] + cols + ["variant"], [row])
        bad = rep.violations(b.rel_tol)
        run.rec.extra["violations"] = len(bad)
        return EXIT_VIOLATIONS if bad else EXIT_OK
    rows = []
    total = 0
    checked = 0
    with run.stage("compute"):
        for H in b.H:
            for K in b.K:
                for m in b.m:
                    for n in b.n:
                        for rec in verify_tri_bounds(H, K, m, n, cfg.horizon, b.rel_tol):
                            total += rec.violations
                            checked += rec.checked
                            rows.append([rec.H, rec.K, rec.m, rec.n, rec.j, rec.k, rec.bound_id, rec.phi, rec.bound, rec.slack, rec.checked, rec.violations])
    with run.stage("write"):
        header = ["H", "K", "m", "n", "j", "k", "bound_id", "phi", "bound", "slack", "cells_checked", "violations"]
        run.table("bounds_verify", header, rows)
    run.rec.extra["violations"] = total
    run.rec.extra["cells_checked"] = checked
    if total:
        print(f"bounds-verify: {total} violation(s) in {checked} checked cells", file=sys.stderr)
        return EXIT_VIOLATIONS
    return EXIT_OK


def cmd_amn_table(run: _Run):
    cfg = run.cfg
    spec = cfg.spec
    with run.stage("compute"):
        tab = double_sequence(spec, cfg.amn.max_level, Scheme(cfg.amn.scheme), cfg.horizon, cfg.guards.to_guards())
    a = tab.entries
    rows = []
    for m in range(a.shape[0]):
        for n in range(a.shape[1]):
            if math.isfinite(a[m, n]):
                rows.append([m, n, float(a[m, n]), m == n, n == cfg.amn.row])
    diag = tab.diagonal()
    row = tab.row(cfg.amn.row)
    run.rec.extra["diagnostics"] = {
        "a00": float(a[0, 0]),
        "diagonal_nondecreasing": bool(np.all(np.diff(diag) >= 0)),
        "diagonal_last": float(diag[-1]),
        "row_last": float(row[-1]),
        "row_last_over_diagonal_last": float(row[-1] / diag[-1]),
    }
    with run.stage("write"):
        run.table("amn_table", ["m", "n", "a_mn", "diagonal", "fixed_row"], rows)
    return EXIT_OK


def cmd_estimate(run: _Run):
    cfg = run.cfg
    spec = cfg.spec
    guards = cfg.guards.to_guards()
    levels = cfg.levels.values()
    sp = {}
    if cfg.num_paths > 0:
        with run.stage("simulate"):
            top = min(cfg.levels.max, guards.simulation_level)
            ens = _simulate(run, top)
        for n in levels:
            if n <= top:
                inc = ens.coarsen(n).increments
                sp[n] = np.array([estimate_hk(row, n).value for row in inc])
    rows = []
    with run.stage("compute"):
        for n in levels:
            proxy = estimate_hk_exact_proxy(spec, n, cfg.horizon, guards).value
            est = sp.get(n)
            rows.append([
                n, spec.self_similarity, proxy, proxy - spec.self_similarity,
                len(est) if est is not None else 0,
                float(np.mean(est)) if est is not None else None,
                float(np.std(est, ddof=1)) if est is not None and len(est) > 1 else None,
            ])
    with run.stage("write"):
        run.table("estimate", ["n", "hk", "exact_proxy", "proxy_error", "paths", "single_path_mean", "single_path_sd"], rows)
    return EXIT_OK


def cmd_simulate(run: _Run):
    cfg = run.cfg
    with run.stage("simulate"):
        ens = _simulate(run, cfg.simulation.level)
    with run.stage("write"):
        csv_path = run.rec.path("paths.csv")
        sidecar = write_ensemble(ens, csv_path)
        run.rec.add_file(csv_path)
        run.rec.add_file(sidecar)
        stats = []
        for n in range(cfg.simulation.level + 1):
            for alpha in cfg.alphas:
                vals = weighted_qv(ens.coarsen(n).increments, alpha, n)
                stats.append([n, alpha, float(np.mean(vals)) if vals.size else None,
                              float(np.std(vals, ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else None])
        run.table("simulate_qv", ["n", "alpha", "mc_mean", "mc_se"], stats)
    return EXIT_OK


def cmd_asymptotics(run: _Run):
    cfg = run.cfg
    spec = cfg.spec
    coeff = psi_asymptotic_coeff(spec.H, spec.order)
    rows = []
    with run.stage("compute"):
        for t in cfg.asymptotics.t:
            hp = structure_function_mp(spec, t - 1.0, t, dps=cfg.asymptotics.dps)
            fp = structure_function(spec, t - 1.0, t)
            lead = coeff.coefficient * t**coeff.exponent
            rows.append([t, hp, fp, coeff.coefficient, coeff.exponent, hp / lead])
    with run.stage("write"):
        run.table("asymptotics", ["t", "psi_high_precision", "psi_double", "coefficient", "exponent", "ratio"], rows)
    return EXIT_OK


COMMANDS = {
    "cov-table": cmd_cov_table,
    "qv-sweep": cmd_qv_sweep,
    "bounds-verify": cmd_bounds_verify,
    "amn-table": cmd_amn_table,
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "asymptotics": cmd_asymptotics,
    "moments": cmd_moments,
}


HELP = {
    "cov-table": "covariance and structure function on an (s, t) grid",
    "qv-sweep": "exact and Monte Carlo moments of S_n^alpha over levels, with a convergence label",
    "bounds-verify": "check the tri-fBm increment covariance bounds on a parameter grid",
    "amn-table": "double sequence a_{m,n} under unit or self-similar weights",
    "estimate": "single-path and exact-mean estimates of HK",
    "simulate": "sample paths on a dyadic grid and export them",
    "asymptotics": "large-t behaviour of psi(t, t-1) for n-fBm",
    "moments": "exact mean and variance of S_n^alpha",
}


def build_parser():
    p = argparse.ArgumentParser(prog="qvarlab", description="Quadratic-variation laboratory for tri-fBm and n-fBm.")
    p.add_argument("--version", action="version", version=f"qvarlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=HELP[name])
        sp.add_argument("--config", required=True, help="path to a JSON experiment config")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="override the output directory")
        sp.add_argument("--format", choices=["csv", "json"], default=None, help="override the table format")
    sub.add_parser("schema", help="print the config JSON schema")
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    if args.command == "schema":
        print(json.dumps(json_schema(), indent=2, sort_keys=True))
        return EXIT_OK
    try:
        cfg = load_config(args.config, {"seed": args.seed, "output_dir": args.out, "format": args.format})
        _validate(args.command, cfg)
    except (ConfigError, ParameterError, GuardError) as exc:
        print(f"qvarlab {args.command}: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run = _Run(cfg, args.command, argv)
    try:
        code = COMMANDS[args.command](run)
        run.rec.extra["exit_code"] = code
        run.rec.finish()
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
