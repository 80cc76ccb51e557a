"""Hot inner loops with twin numba/numpy implementations.

Every kernel here exists in two versions: a numba ``@njit`` build and a pure
numpy fallback.  The active backend is chosen once, at import time, from the
``PAPRSDR_BACKEND`` environment variable ("numba" or "numpy"; default "numba"
when numba is importable).  Random numbers are always generated by the caller
with numpy Generators so that both backends consume identical streams; the
kernels are deterministic arithmetic only.

``python -m paprsdr.kernel_bench`` times the two backends against each other.
"""

from __future__ import annotations

import os

import numpy as np

_requested = os.environ.get("PAPRSDR_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(
        f"PAPRSDR_BACKEND must be 'numba' or 'numpy', got {_requested!r}"
    )

_numba_ok = False
if _requested == "numba":
    try:
        from numba import njit

        _numba_ok = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _numba_ok = False

BACKEND = "numba" if _numba_ok else "numpy"


# ---------------------------------------------------------------------------
# candidate screening (rank reduction)
# ---------------------------------------------------------------------------

def _papr_excess_np(x_batch, n_tx, n_sc, alpha_over_nc):
    """Worst signed PAPR-row violation per candidate.

    x_batch: (C, n_tx*n_sc) complex time-domain candidates.  Returns (C,)
    with max over antennas of peak|x_m|^2/||x_m||^2 - alpha_m/n_sc; a
    candidate satisfies every per-antenna peak constraint iff the value
    is <= 0 (up to tolerance).
    """
    c = x_batch.shape[0]
    p = np.abs(x_batch.reshape(c, n_tx, n_sc)) ** 2
    peak = p.max(axis=2)
    energy = p.sum(axis=2)
    safe = energy > 0.0
    ratio = np.zeros_like(peak)
    np.divide(peak, energy, out=ratio, where=safe)
    return (ratio - alpha_over_nc[None, :]).max(axis=1)


def _make_papr_excess_nb():
    @njit(cache=True)
    def _papr_excess_nb(x_batch, n_tx, n_sc, alpha_over_nc):
        c = x_batch.shape[0]
        out = np.empty(c)
        for k in range(c):
            worst = -np.inf
            for m in range(n_tx):
                peak = 0.0
                energy = 0.0
                base = m * n_sc
                for i in range(n_sc):
                    v = x_batch[k, base + i]
                    p = v.real * v.real + v.imag * v.imag
                    energy += p
                    if p > peak:
                        peak = p
                ratio = peak / energy if energy > 0.0 else 0.0
                d = ratio - alpha_over_nc[m]
                if d > worst:
                    worst = d
            out[k] = worst
        return out

    return _papr_excess_nb


# ---------------------------------------------------------------------------
# QAM slicing
# ---------------------------------------------------------------------------

def _nearest_level_np(vals, levels):
    """Index of the nearest entry of sorted `levels` for each value."""
    mid = 0.5 * (levels[1:] + levels[:-1])
    return np.searchsorted(mid, vals).astype(np.int64)


def _make_nearest_level_nb():
    @njit(cache=True)
    def _nearest_level_nb(vals, levels):
        n = vals.shape[0]
        nl = levels.shape[0]
        out = np.empty(n, dtype=np.int64)
        for k in range(n):
            v = vals[k]
            lo = 0
            hi = nl - 1
            # levels are sorted and uniformly spaced; bisect on midpoints
            while lo < hi:
                mid = (lo + hi) // 2
                if v > 0.5 * (levels[mid] + levels[mid + 1]):
                    lo = mid + 1
                else:
                    hi = mid
            out[k] = lo
        return out

    return _nearest_level_nb


# ---------------------------------------------------------------------------
# Monte Carlo residual quadratics (channel-uncertainty sampling)
# ---------------------------------------------------------------------------

def _mui_quadratics_np(deltas, x, r):
    """||r - Delta_i x||^2 for a batch of error matrices.

    deltas: (D, n_s, n_x) complex, x: (n_x,), r: (n_s,) nominal residual.
    """
    e = r[None, :] - deltas @ x
    return np.sum(np.abs(e) ** 2, axis=1)


def _make_mui_quadratics_nb():
    @njit(cache=True)
    def _mui_quadratics_nb(deltas, x, r):
        d, n_s, n_x = deltas.shape
        out = np.empty(d)
        for k in range(d):
            acc = 0.0
            for i in range(n_s):
                s = complex(0.0, 0.0)
                for j in range(n_x):
                    s += deltas[k, i, j] * x[j]
                e = r[i] - s
                acc += e.real * e.real + e.imag * e.imag
            out[k] = acc
        return out

    return _mui_quadratics_nb


# ---------------------------------------------------------------------------
# sparse-row Schur complement pieces (interior-point solver)
# ---------------------------------------------------------------------------
# Sparse constraint rows are stored in COO form with explicit symmetric
# entries: A_k = sum_a v[a] e_{i[a]} e_{j[a]}^T over rowptr[k]:rowptr[k+1].
# With a symmetric scaling T, Tr(A T B T) = sum_{a,b} vA[a] vB[b]
# T[jA[a], iB[b]] T[jB[b], iA[a]].

def _schur_sparse_sparse_np(rowptr, ii, jj, vv, t_mat):
    p = rowptr.shape[0] - 1
    counts = np.diff(rowptr)
    seg = np.repeat(np.arange(p), counts)
    out = np.zeros((p, p))
    for k in range(p):
        ka, kb = rowptr[k], rowptr[k + 1]
        ik, jk, vk = ii[ka:kb], jj[ka:kb], vv[ka:kb]
        # entries of row k against every entry of rows l <= k, vectorized
        # over the flat entry list then segment-summed per row
        nb = rowptr[k + 1]
        contrib = np.zeros(nb)
        for a in range(ik.shape[0]):
            contrib += vk[a] * t_mat[jk[a], ii[:nb]] * t_mat[jj[:nb], ik[a]]
        contrib *= vv[:nb]
        sums = np.zeros(k + 1)
        np.add.at(sums, seg[:nb], contrib)
        out[k, : k + 1] = sums
        out[: k + 1, k] = sums
    return out


def _make_schur_sparse_sparse_nb():
    @njit(cache=True)
    def _schur_sparse_sparse_nb(rowptr, ii, jj, vv, t_mat):
        p = rowptr.shape[0] - 1
        out = np.zeros((p, p))
        for k in range(p):
            for l in range(k + 1):
                acc = 0.0
                for a in range(rowptr[k], rowptr[k + 1]):
                    ta = t_mat[jj[a]]
                    tb = t_mat[:, ii[a]]
                    va = vv[a]
                    for b in range(rowptr[l], rowptr[l + 1]):
                        acc += va * vv[b] * ta[ii[b]] * tb[jj[b]]
                out[k, l] = acc
                out[l, k] = acc
        return out

    return _schur_sparse_sparse_nb


def _sparse_congruence_cols_np(rowptr, ii, jj, vv, t_mat):
    """Columns q_l = sum_a v[a] T[:, i[a]] * T[:, j[a]] for each sparse row.

    Returns (n, p); q_l[t] = (T A_l T)[t, t], used for diag-row couplings.
    """
    p = rowptr.shape[0] - 1
    n = t_mat.shape[0]
    out = np.zeros((n, p))
    for l in range(p):
        a, b = rowptr[l], rowptr[l + 1]
        out[:, l] = (t_mat[:, ii[a:b]] * t_mat[:, jj[a:b]]) @ vv[a:b]
    return out


def _make_sparse_congruence_cols_nb():
    @njit(cache=True)
    def _sparse_congruence_cols_nb(rowptr, ii, jj, vv, t_mat):
        p = rowptr.shape[0] - 1
        n = t_mat.shape[0]
        out = np.zeros((n, p))
        for l in range(p):
            for a in range(rowptr[l], rowptr[l + 1]):
                va = vv[a]
                ca = ii[a]
                cb = jj[a]
                for t in range(n):
                    out[t, l] += va * t_mat[t, ca] * t_mat[t, cb]
        return out

    return _sparse_congruence_cols_nb


def _sparse_dot_np(rowptr, ii, jj, vv, x_mat):
    """<A_k, X> for every sparse row."""
    p = rowptr.shape[0] - 1
    out = np.zeros(p)
    seg = np.repeat(np.arange(p), np.diff(rowptr))
    np.add.at(out, seg, vv * x_mat[ii, jj])
    return out


def _make_sparse_dot_nb():
    @njit(cache=True)
    def _sparse_dot_nb(rowptr, ii, jj, vv, x_mat):
        p = rowptr.shape[0] - 1
        out = np.zeros(p)
        for k in range(p):
            acc = 0.0
            for a in range(rowptr[k], rowptr[k + 1]):
                acc += vv[a] * x_mat[ii[a], jj[a]]
            out[k] = acc
        return out

    return _sparse_dot_nb


def _sparse_accumulate_np(rowptr, ii, jj, vv, y, out):
    """out += sum_k y[k] A_k for sparse rows (in place)."""
    p = rowptr.shape[0] - 1
    counts = np.diff(rowptr)
    w = np.repeat(y[:p], counts)
    np.add.at(out, (ii, jj), w * vv)


def _make_sparse_accumulate_nb():
    @njit(cache=True)
    def _sparse_accumulate_nb(rowptr, ii, jj, vv, y, out):
        p = rowptr.shape[0] - 1
        for k in range(p):
            yk = y[k]
            if yk == 0.0:
                continue
            for a in range(rowptr[k], rowptr[k + 1]):
                out[ii[a], jj[a]] += yk * vv[a]

    return _sparse_accumulate_nb


if BACKEND == "numba":
    papr_excess = _make_papr_excess_nb()
    nearest_level = _make_nearest_level_nb()
    mui_quadratics = _make_mui_quadratics_nb()
    schur_sparse_sparse = _make_schur_sparse_sparse_nb()
    sparse_congruence_cols = _make_sparse_congruence_cols_nb()
    sparse_dot = _make_sparse_dot_nb()
    sparse_accumulate = _make_sparse_accumulate_nb()
else:
    papr_excess = _papr_excess_np
    nearest_level = _nearest_level_np
    mui_quadratics = _mui_quadratics_np
    schur_sparse_sparse = _schur_sparse_sparse_np
    sparse_congruence_cols = _sparse_congruence_cols_np
    sparse_dot = _sparse_dot_np
    sparse_accumulate = _sparse_accumulate_np

NUMPY_IMPLS = {
    "papr_excess": _papr_excess_np,
    "nearest_level": _nearest_level_np,
    "mui_quadratics": _mui_quadratics_np,
    "schur_sparse_sparse": _schur_sparse_sparse_np,
    "sparse_congruence_cols": _sparse_congruence_cols_np,
    "sparse_dot": _sparse_dot_np,
    "sparse_accumulate": _sparse_accumulate_np,
}


def active_impls():
    """Name -> callable map of the kernels the package is running with."""
    return {name: globals()[name] for name in NUMPY_IMPLS}
