"""Exact and quadrature-based path simulation on dyadic grids.

The primary sampler factors the increment covariance ``phi^{(n)}`` and maps
independent normals through the Cholesky factor. The Lei-Nualart sampler
discretizes a Wiener-integral representation of tri-fBm and only serves as an
independent cross-check.

Random numbers come from counter-based Philox streams: path ``p`` always
starts at counter ``(0, 0, p, stream)`` under a key derived from the seed, so
an ensemble is bit-identical however its paths are split across workers.
"""
from __future__ import annotations

import csv
import datetime as _dt
import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import gamma as gamma_fn

from ._backend import worker_count
from .errors import FactorizationError, GuardError, ParameterError
from .io import atomic_write_bytes, csv_bytes, json_bytes
from .increments import DEFAULT_GUARDS, DyadicGrid, Guards, phi_matrix
from .models import ProcessSpec

JITTER_SCHEDULE = (0.0, 1e-14, 1e-12, 1e-10)
CHOLESKY_ID = "cholesky/philox-v1"
LEI_NUALART_ID = "lei-nualart/philox-v1"

_PATH_CHUNK = 1024
_STREAM_CHOLESKY = 0
_STREAM_LEI_NUALART = 1


class CholeskyResult(NamedTuple):
    factor: np.ndarray
    jitter: float  # absolute epsilon added to the diagonal


def cholesky_with_jitter(matrix, schedule=JITTER_SCHEDULE) -> CholeskyResult:
    """Lower Cholesky factor of ``matrix + eps * I``.

    ``eps`` runs through ``schedule`` (relative to the trace) and the first
    value that factors is used. Failure at the largest jitter means the input
    is not positive semidefinite.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ParameterError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ParameterError("matrix has non-finite entries")
    if not np.allclose(a, a.T, rtol=1e-12, atol=0.0):
        raise ParameterError("matrix is not symmetric")
    if a.shape[0] == 0:
        return CholeskyResult(np.zeros((0, 0)), 0.0)
    tr = float(np.trace(a))
    eye = np.eye(a.shape[0])
    for rel in schedule:
        eps = rel * abs(tr)
        try:
            return CholeskyResult(np.linalg.cholesky(a + eps * eye), eps)
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError(
        f"matrix does not factor even with jitter {schedule[-1]:g} * trace; it is not positive semidefinite"
    )


def _philox_key(seed):
    words = np.random.SeedSequence(int(seed)).generate_state(2, np.uint64)
    return int(words[0]) | (int(words[1]) << 64)


def _normals_chunk(key, stream, start, stop, dim):
    bg = np.random.Philox(key=key)
    gen = np.random.Generator(bg)
    state = bg.state
    out = np.empty((stop - start, dim))
    for i, p in enumerate(range(start, stop)):
        state["state"]["counter"] = np.array([0, 0, p, stream], dtype=np.uint64)
        state["buffer_pos"] = 4
        state["has_uint32"] = 0
        state["uinteger"] = 0
        bg.state = state
        out[i] = gen.standard_normal(dim)
    return out


def path_normals(seed, num_paths, dim, stream=0):
    """Standard normals, one row per path, from per-path counter streams."""
    if num_paths < 0:
        raise ParameterError("num_paths must be nonnegative")
    key = _philox_key(seed)
    chunks = [(s, min(num_paths, s + _PATH_CHUNK)) for s in range(0, num_paths, _PATH_CHUNK)]
    if not chunks:
        return np.zeros((0, dim))
    workers = min(worker_count(), len(chunks))
    if workers == 1:
        parts = [_normals_chunk(key, stream, a, b, dim) for a, b in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _normals_chunk(key, stream, c[0], c[1], dim), chunks))
    return np.concatenate(parts, axis=0)


@dataclass(frozen=True)
class PathEnsemble:
    spec: ProcessSpec
    grid: DyadicGrid
    increments: np.ndarray = field(repr=False)
    seed: int
    generator_id: str
    jitter: Optional[float] = None

    @property
    def num_paths(self):
        return self.increments.shape[0]

    def values(self):
        """Path values at all grid points, starting with 0 at t = 0."""
        out = np.zeros((self.num_paths, self.grid.size + 1))
        np.cumsum(self.increments, axis=1, out=out[:, 1:])
        return out

    def coarsen(self, level):
        """Same paths observed on the coarser grid ``level``."""
        if not 0 <= level <= self.grid.level:
            raise ParameterError(f"cannot coarsen level {self.grid.level} to {level}")
        inc = self.increments
        for _ in range(self.grid.level - level):
            inc = inc[:, 0::2] + inc[:, 1::2]
        return PathEnsemble(
            spec=self.spec, grid=DyadicGrid(level, self.grid.horizon), increments=inc,
            seed=self.seed, generator_id=self.generator_id, jitter=self.jitter,
        )

    def manifest(self):
        return {
            "spec": self.spec.as_dict(),
            "grid": {"level": self.grid.level, "horizon": self.grid.horizon},
            "seed": self.seed,
            "generator_id": self.generator_id,
            "num_paths": self.num_paths,
            "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        }


def _matmul_chunked(z, lt):
    out = np.empty((z.shape[0], lt.shape[1]))
    for s in range(0, z.shape[0], _PATH_CHUNK):
        out[s : s + _PATH_CHUNK] = z[s : s + _PATH_CHUNK] @ lt
    return out


def simulate_increments(spec: ProcessSpec, grid: DyadicGrid, num_paths, seed, guards: Guards = DEFAULT_GUARDS) -> PathEnsemble:
    """Exact Gaussian increments on ``grid`` with covariance ``phi^{(n)}``."""
    if grid.level > guards.simulation_level:
        raise GuardError(f"level {grid.level} exceeds simulation guard {guards.simulation_level}")
    cov = phi_matrix(spec, grid.level, grid.level, grid.horizon, guards).entries
    factor, eps = cholesky_with_jitter(cov)
    z = path_normals(seed, num_paths, grid.size, _STREAM_CHOLESKY)
    inc = _matmul_chunked(z, factor.T)
    inc.setflags(write=False)
    return PathEnsemble(spec=spec, grid=grid, increments=inc, seed=int(seed), generator_id=CHOLESKY_ID, jitter=eps)


class QuadratureRule(str, enum.Enum):
    MIDPOINT_LOG = "midpoint-log"
    # Gauss-Legendre panels in log s
    GAUSS = "gauss-laguerre-like"


@dataclass(frozen=True)
class QuadratureSpec:
    """Discretization of the Lei-Nualart integral over ``s in (0, inf)``.

    ``s_max=None`` picks ``1e4 * (2^n / T)^{2H}`` for the grid in use, so that
    ``exp(-s t^{2H})`` has decayed at the smallest grid time. The lower cutoff
    is ``s_max * 2^{-node_count/4}``.
    """

    node_count: int = 512
    s_max: Optional[float] = None
    rule: QuadratureRule = QuadratureRule.MIDPOINT_LOG

    def __post_init__(self):
        object.__setattr__(self, "rule", QuadratureRule(self.rule))
        if int(self.node_count) != self.node_count or self.node_count < 16:
            raise ParameterError(f"node_count must be an integer >= 16, got {self.node_count!r}")
        if self.s_max is not None and not self.s_max > 0:
            raise ParameterError(f"s_max must be positive, got {self.s_max!r}")
        if self.rule is QuadratureRule.GAUSS and self.node_count % 8:
            raise ParameterError("gauss rule needs node_count divisible by 8")

    def resolve_s_max(self, H, grid: DyadicGrid):
        if self.s_max is not None:
            return float(self.s_max)
        return 1e4 * (grid.size / grid.horizon) ** (2 * H)

    def nodes(self, H, grid: DyadicGrid):
        """``(s_i, w_i)`` with ``sum_i g(s_i) w_i ~ int g(s) ds``."""
        s_max = self.resolve_s_max(H, grid)
        u_hi = math.log(s_max)
        u_lo = u_hi - self.node_count / 4 * math.log(2.0)
        if self.rule is QuadratureRule.MIDPOINT_LOG:
            du = (u_hi - u_lo) / self.node_count
            u = u_lo + (np.arange(self.node_count) + 0.5) * du
            w_u = np.full(self.node_count, du)
        else:
            x, w = np.polynomial.legendre.leggauss(8)
            panels = self.node_count // 8
            edges = np.linspace(u_lo, u_hi, panels + 1)
            half = 0.5 * np.diff(edges)
            mid = 0.5 * (edges[1:] + edges[:-1])
            u = (mid[:, None] + half[:, None] * x[None, :]).ravel()
            w_u = (half[:, None] * w[None, :]).ravel()
        s = np.exp(u)
        weights = s * w_u
        if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
            raise ParameterError("quadrature produced nonpositive or non-finite weights")
        return s, weights


def _lei_nualart_design(H, K, grid, quad):
    s, w = quad.nodes(H, grid)
    tau = grid.points()[1:] ** (2 * H)
    design = -np.expm1(-np.outer(s, tau)) * (s ** (-(1 + K) / 2) * np.sqrt(w))[:, None]
    return math.sqrt(K / gamma_fn(1 - K)) * design


def lei_nualart_variance(H, K, grid: DyadicGrid, quad: QuadratureSpec = QuadratureSpec()):
    """Marginal variance the quadrature implies at grid points ``t_1..t_N``."""
    ProcessSpec.tri(H, K)
    d = _lei_nualart_design(H, K, grid, quad)
    return np.einsum("ig,ig->g", d, d)


def simulate_lei_nualart(H, K, grid: DyadicGrid, quad: QuadratureSpec, num_paths, seed) -> PathEnsemble:
    """Approximate tri-fBm paths via the Lei-Nualart Wiener integral.

    ``Z(t) = sqrt(K / Gamma(1-K)) X_K(t^{2H})`` with
    ``X_K(u) = int (1 - e^{-s u}) s^{-(1+K)/2} dB_s`` replaced by a weighted
    sum over quadrature nodes. Biased; the bias is visible in
    :func:`lei_nualart_variance`.
    """
    spec = ProcessSpec.tri(H, K)
    design = _lei_nualart_design(H, K, grid, quad)
    z = path_normals(seed, num_paths, design.shape[0], _STREAM_LEI_NUALART)
    vals = _matmul_chunked(z, design)
    inc = np.diff(vals, axis=1, prepend=0.0) if num_paths else np.zeros((0, grid.size))
    inc.setflags(write=False)
    return PathEnsemble(spec=spec, grid=grid, increments=inc, seed=int(seed), generator_id=LEI_NUALART_ID)


def format_float(x):
    return format(float(x), ".17g")


def write_ensemble(ensemble: PathEnsemble, csv_path, sidecar_path=None):
    """CSV (one row per path, 17 significant digits) plus a JSON sidecar."""
    header = [f"dX{k}" for k in range(1, ensemble.grid.size + 1)]
    atomic_write_bytes(csv_path, csv_bytes(header, ensemble.increments.tolist()))
    if sidecar_path is None:
        sidecar_path = str(csv_path) + ".json"
    atomic_write_bytes(sidecar_path, json_bytes(ensemble.manifest()))
    return sidecar_path


def read_ensemble_csv(csv_path):
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r] for r in rows[1:]]).reshape(len(rows) - 1, len(rows[0]))
