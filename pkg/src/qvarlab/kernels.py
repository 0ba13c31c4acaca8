"""Hot loops over increment covariances.

Every kernel exists twice: a numba ``@njit`` version (``*_nb``) and a pure
numpy version (``*_np``). The public wrappers pick one according to
``qvarlab._backend.BACKEND``.

Rows are always indexed by the increments of grid ``a`` and columns by those
of grid ``b``. Row partials are returned unreduced; callers reduce them in
index order with :func:`math.fsum` so that the result does not depend on how
rows were scheduled.

Separable covariance terms (functions of one time argument only) drop out of
the four-term increment combination identically, so the kernels never form
them. What remains is

* tri-fBm: ``F(a1,b0) + F(a0,b1) - F(a1,b1) - F(a0,b0)`` with
  ``F(a,b) = (a^{2H} + b^{2H})^K``, evaluated in a regrouped form (below);
* n-fBm: ``scale * (D - sum_i c_i (dA_i dB'_i + dA'_i dB_i))`` where ``D`` is
  the mixed difference of ``|b-a|^{2H}`` and ``dA_i``/``dA'_i`` are
  increments of ``a^i`` / ``a^{2H-i}``.
"""
import numpy as np

from ._backend import USE_NUMBA, njit, prange

_CHUNK_ELEMS = 1 << 21


# ---------------------------------------------------------------------------
# trifractional Brownian motion
# ---------------------------------------------------------------------------
#
# With u = a0 + b0, p = a1 - a0, q = b1 - b0 (all in the a = s^{2H} scale),
# x = p/u, y = q/u and e(z) = (1+z)^K - 1 the combination is
#     u^K [(1+x)^K + (1+y)^K - (1+x+y)^K - 1]
#   = u^K [(1+x')^K e(w) - e(y) e(x')],   x' = x/(1+y),  w = xy/(1+x+y).
# Both terms are O(xy) and differ by a factor ~K, so only a 1/(1-K)
# cancellation remains instead of the 1/(xy) of the raw form.


@njit(cache=True)
def _tri_entry(u, p, q, K):
    if u == 0.0:
        return p**K + q**K - (p + q) ** K
    if p < q:  # order the operands so equal-level blocks come out symmetric
        p, q = q, p
    x = p / u
    y = q / u
    xp = x / (1.0 + y)
    w = x * y / (1.0 + x + y)
    exp_ = np.expm1(K * np.log1p(xp))
    return u**K * ((1.0 + exp_) * np.expm1(K * np.log1p(w)) - np.expm1(K * np.log1p(y)) * exp_)


@njit(parallel=True, cache=True)
def tri_block_nb(pa, pb, da, db, K, out):
    M = da.shape[0]
    N = db.shape[0]
    for j in prange(M):
        for k in range(N):
            out[j, k] = _tri_entry(pa[j] + pb[k], da[j], db[k], K)


@njit(parallel=True, cache=True)
def tri_rowsq_nb(pa, pb, da, db, K, rows):
    M = da.shape[0]
    N = db.shape[0]
    for j in prange(M):
        s = 0.0
        c = 0.0
        for k in range(N):
            v = _tri_entry(pa[j] + pb[k], da[j], db[k], K)
            x = v * v
            t = s + x
            if abs(s) >= abs(x):
                c += (s - t) + x
            else:
                c += (x - t) + s
            s = t
        rows[j] = s + c


def _row_chunks(M, N):
    step = max(1, _CHUNK_ELEMS // max(N + 1, 1))
    for j0 in range(0, M, step):
        yield j0, min(M, j0 + step)


def _tri_rows_np(j0, j1, pa, pb, da, db, K):
    u = pa[j0:j1, None] + pb[None, :-1]
    p = np.maximum(da[j0:j1, None], db[None, :])
    q = np.minimum(da[j0:j1, None], db[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        x = p / u
        y = q / u
        xp = x / (1.0 + y)
        w = x * y / (1.0 + x + y)
        exp_ = np.expm1(K * np.log1p(xp))
        out = u**K * ((1.0 + exp_) * np.expm1(K * np.log1p(w)) - np.expm1(K * np.log1p(y)) * exp_)
    zero = u == 0.0
    if zero.any():
        pz, qz = p[zero], q[zero]
        out[zero] = pz**K + qz**K - (pz + qz) ** K
    return out


def tri_block_np(pa, pb, da, db, K, out):
    for j0, j1 in _row_chunks(da.shape[0], db.shape[0]):
        out[j0:j1] = _tri_rows_np(j0, j1, pa, pb, da, db, K)


def tri_rowsq_np(pa, pb, da, db, K, rows):
    for j0, j1 in _row_chunks(da.shape[0], db.shape[0]):
        blk = _tri_rows_np(j0, j1, pa, pb, da, db, K)
        rows[j0:j1] = np.sum(blk * blk, axis=1)


# ---------------------------------------------------------------------------
# n-th order fractional Brownian motion
# ---------------------------------------------------------------------------


@njit(cache=True)
def _nth_entry(j, k, ra, rb, E, dal, dah, dbl, dbh, coef, scale):
    x11 = (k + 1) * rb - (j + 1) * ra
    x00 = k * rb - j * ra
    x10 = k * rb - (j + 1) * ra
    x01 = (k + 1) * rb - j * ra
    d = (E[abs(x11)] + E[abs(x00)]) - (E[abs(x10)] + E[abs(x01)])
    acc = 0.0
    for i in range(coef.shape[0]):
        acc += coef[i] * (dal[i, j] * dbh[i, k] + dah[i, j] * dbl[i, k])
    return scale * (d - acc)


@njit(parallel=True, cache=True)
def nth_block_nb(ra, rb, M, N, E, dal, dah, dbl, dbh, coef, scale, out):
    for j in prange(M):
        for k in range(N):
            out[j, k] = _nth_entry(j, k, ra, rb, E, dal, dah, dbl, dbh, coef, scale)


@njit(parallel=True, cache=True)
def nth_rowsq_nb(ra, rb, M, N, E, dal, dah, dbl, dbh, coef, scale, rows):
    for j in prange(M):
        s = 0.0
        c = 0.0
        for k in range(N):
            v = _nth_entry(j, k, ra, rb, E, dal, dah, dbl, dbh, coef, scale)
            x = v * v
            t = s + x
            if abs(s) >= abs(x):
                c += (s - t) + x
            else:
                c += (x - t) + s
            s = t
        rows[j] = s + c


def _nth_rows_np(j0, j1, ra, rb, N, E, dal, dah, dbl, dbh, coef, scale):
    kk = np.arange(N)
    jj = np.arange(j0, j1)[:, None]
    x11 = (kk + 1) * rb - (jj + 1) * ra
    x00 = kk * rb - jj * ra
    x10 = kk * rb - (jj + 1) * ra
    x01 = (kk + 1) * rb - jj * ra
    d = (E[np.abs(x11)] + E[np.abs(x00)]) - (E[np.abs(x10)] + E[np.abs(x01)])
    acc = np.zeros(d.shape)
    for i in range(coef.shape[0]):
        acc += coef[i] * (dal[i, j0:j1, None] * dbh[i, None, :] + dah[i, j0:j1, None] * dbl[i, None, :])
    return scale * (d - acc)


def nth_block_np(ra, rb, M, N, E, dal, dah, dbl, dbh, coef, scale, out):
    for j0, j1 in _row_chunks(M, N):
        out[j0:j1] = _nth_rows_np(j0, j1, ra, rb, N, E, dal, dah, dbl, dbh, coef, scale)


def nth_rowsq_np(ra, rb, M, N, E, dal, dah, dbl, dbh, coef, scale, rows):
    for j0, j1 in _row_chunks(M, N):
        blk = _nth_rows_np(j0, j1, ra, rb, N, E, dal, dah, dbl, dbh, coef, scale)
        rows[j0:j1] = np.sum(blk * blk, axis=1)


if USE_NUMBA:
    tri_block, tri_rowsq = tri_block_nb, tri_rowsq_nb
    nth_block, nth_rowsq = nth_block_nb, nth_rowsq_nb
else:
    tri_block, tri_rowsq = tri_block_np, tri_rowsq_np
    nth_block, nth_rowsq = nth_block_np, nth_rowsq_np
