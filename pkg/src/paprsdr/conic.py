"""Self-contained primal-dual interior-point solver for small and medium
semidefinite programs.

The solver works on the standard pair

    (P) min <C, X>  s.t.  <A_k, X> = b_k,  X in K
    (D) max b'y     s.t.  Z = C - sum_k y_k A_k in K

where K is a product of real PSD blocks and a nonnegative-orthant block
holding slacks of inequality rows plus any named scalar variables.
Second-order-cone rows are lowered beforehand into chains of 2x2 bordered
PSD blocks ([[t+a, c], [c, t-a]] >= 0 iff t >= ||(a, c)||), which keeps a
single cone type in the core.

The search direction is Nesterov-Todd scaled with a Mehrotra
predictor-corrector; the Schur complement M_kl = <A_k, W A_l W> is
assembled family-by-family (diagonal rows, Gram rows, sparse rows, dense
rows) so the per-antenna peak rows never exist as dense matrices.  Rows
are norm-equilibrated internally and multipliers rescaled on readback.

Interior-point iterates are infeasible-start: objective values oscillate
early on, but the complementarity gap contracts geometrically once the
iterates localize, and primal infeasibility is reported through the Farkas
direction (b'y > 0 with A*(y) + Z ~ 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from . import kernels
from .qcqp import (AffineExpr, Block, DenseTerm, DiagTerm, GramTerm, LpTerm,
                   Row, SdrProblem, SocRow, SparseTerm, derealify_block,
                   realify, re_entry, sparse_term)


@dataclass(frozen=True)
class SolverSettings:
    tol_gap: float = 1e-7        # relative duality-gap target
    tol_feas: float = 1e-8       # primal/dual residual target
    max_iter: int = 200
    step_fraction: float = 0.98  # fraction of the distance to the boundary
    max_psd_dim: int = 600       # hard cap on any real PSD block
    verbose: bool = False

    def __post_init__(self):
        if min(self.tol_gap, self.tol_feas) <= 0 or self.max_iter <= 0:
            raise ValueError("tolerances and max_iter must be positive")
        if not 0.0 < self.step_fraction < 1.0:
            raise ValueError("step_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class DualCertificate:
    lambda_im: dict            # peak-row multipliers by (antenna, sample)
    nu1: float | None          # residual-row multiplier (>= 0)
    nu2: float | None          # homogenization-row multiplier
    gap: float                 # primal - dual objective difference


@dataclass
class SdrSolution:
    X_opt: list                  # one matrix per PSD block
    lp: np.ndarray               # scalar-variable and slack values
    objective: float
    dual: DualCertificate
    status: str                  # Optimal | Infeasible | IterLimit | NumericalTrouble
    iterations: int
    eigen_spectrum: np.ndarray   # sorted eigenvalues of the main block
    multipliers: dict            # row name -> multiplier (>= 0 for inequalities)
    Z_opt: list
    gap: float
    pinf: float
    dinf: float
    trace: list = field(default_factory=list)
    lp_named: dict = field(default_factory=dict)

    @property
    def higher_rank(self) -> bool:
        """Second-to-first eigenvalue ratio above 1e-6 on the main block."""
        ev = self.eigen_spectrum
        if ev.size < 2 or ev[-1] <= 0:
            return False
        return ev[-2] / ev[-1] > 1e-6


class SolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# SOC lowering
# ---------------------------------------------------------------------------

def _neg_terms(terms):
    out = []
    for t in terms:
        if isinstance(t, LpTerm):
            out.append(LpTerm(idx=t.idx, coef=-t.coef))
        elif isinstance(t, DiagTerm):
            out.append(replace(t, vec=-t.vec))
        elif isinstance(t, SparseTerm):
            out.append(replace(t, vv=-t.vv))
        elif isinstance(t, GramTerm):
            out.append(replace(t, coef=-t.coef))
        elif isinstance(t, DenseTerm):
            out.append(replace(t, mat=-np.asarray(t.mat)))
        else:
            raise TypeError(type(t))
    return out


def lower_soc(problem: SdrProblem) -> SdrProblem:
    """Replace every SOC row by a chain of 2x2 bordered PSD blocks.

    ||(z_1..z_k)|| <= t becomes t >= ||(z_1, u_1)||, u_1 >= ||(z_2, u_2)||,
    ..., with each link a 2x2 PSD block pinned by three equality rows; the
    auxiliary u variables live in the scalar bank.
    """
    if not problem.soc_rows:
        return problem
    blocks = list(problem.blocks)
    rows = list(problem.rows)
    lp_names = list(problem.lp_names)
    lp_dim = problem.lp_dim

    for soc in problem.soc_rows:
        k = len(soc.z)
        if k == 0:
            rows.append(Row(name=f"{soc.name}:nonneg", sense="ge",
                            b=-soc.t.const, terms=tuple(soc.t.terms)))
            continue
        n_link = max(1, k - 1)
        aux = []
        for a in range(n_link - 1):
            aux.append(lp_dim)
            lp_names.append(f"{soc.name}:u{a}")
            lp_dim += 1
        for link in range(n_link):
            head = soc.t if link == 0 else AffineExpr(
                terms=(LpTerm(idx=aux[link - 1], coef=1.0),))
            za = soc.z[link]
            if link < n_link - 1:
                zb = AffineExpr(terms=(LpTerm(idx=aux[link], coef=1.0),))
            elif k >= 2:
                zb = soc.z[k - 1]
            else:
                zb = AffineExpr()
            blk = len(blocks)
            blocks.append(Block(dim=2, domain="symmetric"))
            ag = f"{soc.name}:l{link}"
            # B00 = head + za, B11 = head - za, B01 = zb
            rows.append(Row(
                name=f"{ag}:a", sense="eq", b=head.const + za.const,
                terms=(sparse_term(blk, re_entry(0, 0)),
                       *_neg_terms(head.terms), *_neg_terms(za.terms))))
            rows.append(Row(
                name=f"{ag}:b", sense="eq", b=head.const - za.const,
                terms=(sparse_term(blk, re_entry(1, 1)),
                       *_neg_terms(head.terms), *_neg_terms(_neg_terms(za.terms)))))
            rows.append(Row(
                name=f"{ag}:c", sense="eq", b=zb.const,
                terms=(sparse_term(blk, re_entry(0, 1)),
                       *_neg_terms(zb.terms))))
    return SdrProblem(
        blocks=tuple(blocks), objective=problem.objective, rows=tuple(rows),
        lp_dim=lp_dim, lp_names=tuple(lp_names), soc_rows=(),
        metadata=dict(problem.metadata), scale=problem.scale)


# ---------------------------------------------------------------------------
# compiled problem
# ---------------------------------------------------------------------------

class _BlockData:
    """Per-block constraint data grouped by structure family."""

    def __init__(self, n):
        self.n = n
        self.diag_rows = []     # (row, vec) merged per row
        self.sparse_rows = []   # (row, ii, jj, vv)
        self.gram_rows = []     # (row, V, coef, dense_cache)
        self.dense_rows = []    # (row, A)

    def finalize(self):
        self.d_idx = np.array([r for r, _ in self.diag_rows], dtype=np.int64)
        self.D = (np.array([v for _, v in self.diag_rows])
                  if self.diag_rows else np.zeros((0, self.n)))
        self.s_idx = np.array([r for r, *_ in self.sparse_rows],
                              dtype=np.int64)
        ptr = [0]
        ii, jj, vv = [], [], []
        for _, a, b, v in self.sparse_rows:
            ii.append(a)
            jj.append(b)
            vv.append(v)
            ptr.append(ptr[-1] + len(a))
        self.rowptr = np.array(ptr, dtype=np.int64)
        self.ii = (np.concatenate(ii) if ii else np.zeros(0, dtype=np.int64))
        self.jj = (np.concatenate(jj) if jj else np.zeros(0, dtype=np.int64))
        self.vv = (np.concatenate(vv) if vv else np.zeros(0))


class _Compiled:
    pass


def _term_norm(term):
    if isinstance(term, DiagTerm):
        return float(np.linalg.norm(term.vec))
    if isinstance(term, SparseTerm):
        return float(np.linalg.norm(term.vv))
    if isinstance(term, GramTerm):
        g = term.factor @ term.factor.T
        return abs(term.coef) * float(np.linalg.norm(g))
    if isinstance(term, DenseTerm):
        return float(np.linalg.norm(term.mat))
    if isinstance(term, LpTerm):
        return abs(term.coef)
    raise TypeError(type(term))


def _compile(problem: SdrProblem, settings: SolverSettings) -> _Compiled:
    if problem.domain != "real":
        raise SolverError("the conic core solves real symmetric problems; "
                          "realify the program first")
    problem = lower_soc(problem)
    for b in problem.blocks:
        if b.dim > settings.max_psd_dim:
            raise SolverError(
                f"PSD block of real dimension {b.dim} exceeds the desk-scale "
                f"cap {settings.max_psd_dim}; this build targets small and "
                f"medium instances only")

    c = _Compiled()
    c.problem = problem
    c.psd_dims = [b.dim for b in problem.blocks]
    c.n_named = problem.lp_dim
    p = len(problem.rows)
    c.p = p
    c.names = [r.name for r in problem.rows]
    c.senses = [r.sense for r in problem.rows]

    # slack layout: named vars first, one slack per inequality row after
    slack_of = {}
    n_lp = problem.lp_dim
    for k, r in enumerate(problem.rows):
        if r.sense in ("le", "ge"):
            slack_of[k] = n_lp
            n_lp += 1
    c.n_lp = n_lp
    c.slack_of = slack_of

    c.blocks = [_BlockData(n) for n in c.psd_dims]
    lp_r, lp_i, lp_v = [], [], []
    b_vec = np.zeros(p)
    scale = np.ones(p)

    for k, r in enumerate(problem.rows):
        flip = -1.0 if r.sense == "ge" else 1.0
        norms = [_term_norm(t) for t in r.terms]
        s = max(np.sqrt(float(np.sum(np.square(norms)))), 1e-10)
        scale[k] = s
        coef = flip / s
        b_vec[k] = flip * r.b / s
        merged_diag = {}
        merged_dense = {}
        for t in r.terms:
            if isinstance(t, LpTerm):
                lp_r.append(k)
                lp_i.append(t.idx)
                lp_v.append(coef * t.coef)
            elif isinstance(t, DiagTerm):
                acc = merged_diag.setdefault(
                    t.block, np.zeros(c.psd_dims[t.block]))
                acc += coef * t.vec
            elif isinstance(t, SparseTerm):
                if np.iscomplexobj(t.vv):
                    raise SolverError("complex data in a real problem")
                c.blocks[t.block].sparse_rows.append(
                    (k, t.ii, t.jj, coef * t.vv))
            elif isinstance(t, GramTerm):
                c.blocks[t.block].gram_rows.append(
                    (k, np.asarray(t.factor, dtype=float), coef * t.coef))
            elif isinstance(t, DenseTerm):
                acc = merged_dense.setdefault(
                    t.block, np.zeros((c.psd_dims[t.block],) * 2))
                acc += coef * np.asarray(t.mat, dtype=float)
            else:
                raise TypeError(type(t))
        for blk, vec in merged_diag.items():
            c.blocks[blk].diag_rows.append((k, vec))
        for blk, mat in merged_dense.items():
            c.blocks[blk].dense_rows.append((k, mat))
        if r.sense in ("le", "ge"):
            lp_r.append(k)
            lp_i.append(slack_of[k])
            lp_v.append(1.0)

    for bd in c.blocks:
        bd.finalize()
    c.lp_rows = (np.array(lp_r, dtype=np.int64),
                 np.array(lp_i, dtype=np.int64),
                 np.array(lp_v, dtype=float))
    c.b = b_vec
    c.row_scale = scale

    # objective, densified per block
    c.C_psd = [np.zeros((n, n)) for n in c.psd_dims]
    c.c_lp = np.zeros(c.n_lp)
    for t in problem.objective:
        if isinstance(t, LpTerm):
            c.c_lp[t.idx] += t.coef
        else:
            d = c.psd_dims[t.block]
            c.C_psd[t.block] += np.real(t.dense(d))
    c.norm_b = float(np.linalg.norm(c.b))
    c.norm_c = float(np.sqrt(sum(np.sum(m * m) for m in c.C_psd)
                             + np.sum(c.c_lp ** 2)))
    return c


# ---------------------------------------------------------------------------
# linear operators
# ---------------------------------------------------------------------------

def _apply_A(c: _Compiled, X, x_lp):
    out = np.zeros(c.p)
    for bd, Xb in zip(c.blocks, X):
        if bd.d_idx.size:
            np.add.at(out, bd.d_idx, bd.D @ np.diagonal(Xb))
        if bd.s_idx.size:
            np.add.at(out, bd.s_idx,
                      kernels.sparse_dot(bd.rowptr, bd.ii, bd.jj, bd.vv, Xb))
        for k, V, coef in bd.gram_rows:
            vx = V @ Xb
            out[k] += coef * float(np.sum(vx * V))
        for k, A in bd.dense_rows:
            out[k] += float(np.sum(A * Xb))
    rr, vi, vv = c.lp_rows
    if rr.size:
        np.add.at(out, rr, vv * x_lp[vi])
    return out


def _apply_AT(c: _Compiled, y):
    mats = []
    for bd in c.blocks:
        out = np.zeros((bd.n, bd.n))
        if bd.d_idx.size:
            idx = np.arange(bd.n)
            out[idx, idx] += bd.D.T @ y[bd.d_idx]
        if bd.s_idx.size:
            kernels.sparse_accumulate(bd.rowptr, bd.ii, bd.jj, bd.vv,
                                      y[bd.s_idx], out)
        for k, V, coef in bd.gram_rows:
            w = coef * y[k]
            if w != 0.0:
                out += w * (V.T @ V)
        for k, A in bd.dense_rows:
            if y[k] != 0.0:
                out += y[k] * A
        mats.append(0.5 * (out + out.T))
    rr, vi, vv = c.lp_rows
    out_lp = np.zeros(c.n_lp)
    if rr.size:
        np.add.at(out_lp, vi, vv * y[rr])
    return mats, out_lp


def _schur(c: _Compiled, T_psd, w_lp):
    M = np.zeros((c.p, c.p))
    for bd, T in zip(c.blocks, T_psd):
        grams = [(k, V, coef, V @ T) for k, V, coef in bd.gram_rows]
        if bd.d_idx.size:
            P = T * T
            DP = bd.D @ P
            M[np.ix_(bd.d_idx, bd.d_idx)] += DP @ bd.D.T
        if bd.s_idx.size:
            Q = kernels.sparse_congruence_cols(bd.rowptr, bd.ii, bd.jj,
                                               bd.vv, T)
            if bd.d_idx.size:
                cross = bd.D @ Q
                M[np.ix_(bd.d_idx, bd.s_idx)] += cross
                M[np.ix_(bd.s_idx, bd.d_idx)] += cross.T
            M[np.ix_(bd.s_idx, bd.s_idx)] += kernels.schur_sparse_sparse(
                bd.rowptr, bd.ii, bd.jj, bd.vv, T)
        for k, V, coef, VT in grams:
            if bd.d_idx.size:
                wv = coef * np.sum(VT * VT, axis=0)
                col = bd.D @ wv
                M[bd.d_idx, k] += col
                M[k, bd.d_idx] += col
            if bd.s_idx.size:
                vals = np.sum(VT[:, bd.ii] * VT[:, bd.jj], axis=0) * bd.vv
                col = np.zeros(bd.s_idx.size)
                np.add.at(col, np.repeat(np.arange(bd.s_idx.size),
                                         np.diff(bd.rowptr)), vals)
                M[bd.s_idx, k] += coef * col
                M[k, bd.s_idx] += coef * col
            for l, V2, coef2, VT2 in grams:
                if l > k:
                    continue
                cross = VT @ V2.T
                val = coef * coef2 * float(np.sum(cross * cross))
                M[k, l] += val
                if l != k:
                    M[l, k] += val
        for k, A in bd.dense_rows:
            S = T @ A @ T
            if bd.d_idx.size:
                col = bd.D @ np.diagonal(S)
                M[bd.d_idx, k] += col
                M[k, bd.d_idx] += col
            if bd.s_idx.size:
                col = kernels.sparse_dot(bd.rowptr, bd.ii, bd.jj, bd.vv, S)
                M[bd.s_idx, k] += col
                M[k, bd.s_idx] += col
            for l, V2, coef2, VT2 in grams:
                val = coef2 * float(np.sum((V2 @ S) * V2))
                M[k, l] += val
                M[l, k] += val
            for l, A2 in bd.dense_rows:
                if l > k:
                    continue
                val = float(np.sum(S * A2))
                M[k, l] += val
                if l != k:
                    M[l, k] += val
    rr, vi, vv = c.lp_rows
    if rr.size:
        order = np.argsort(vi, kind="stable")
        rs, vs, cs = rr[order], vi[order], vv[order]
        starts = np.searchsorted(vs, np.arange(c.n_lp))
        ends = np.searchsorted(vs, np.arange(c.n_lp) + 1)
        for var in range(c.n_lp):
            a, b = starts[var], ends[var]
            if a == b:
                continue
            rows = rs[a:b]
            coefs = cs[a:b]
            M[np.ix_(rows, rows)] += (w_lp[var] ** 2) * np.outer(coefs, coefs)
    return M


# ---------------------------------------------------------------------------
# cone utilities
# ---------------------------------------------------------------------------

def _chol_psd(mat, name):
    jitter = 0.0
    base = max(np.trace(mat) / mat.shape[0], 1e-30)
    for _ in range(6):
        try:
            return sla.cholesky(mat + jitter * np.eye(mat.shape[0]),
                                lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            jitter = max(10.0 * jitter, 1e-14 * base)
    raise SolverError(f"{name} iterate lost positive definiteness")


def _nt_scaling(X, Z):
    """R with R^-1 X R^-T = R^T Z R = diag(lam); W = R R^T."""
    Lx = _chol_psd(X, "primal")
    Lz = _chol_psd(Z, "dual")
    U, sv, Vt = sla.svd(Lz.T @ Lx, check_finite=False,
                        lapack_driver="gesdd")
    sv = np.maximum(sv, 1e-150)
    R = Lx @ (Vt.T / np.sqrt(sv))
    return R, sv


def _max_step(lam, dlam):
    """sup alpha with diag(lam) + alpha*dlam >= 0, in scaled coordinates."""
    s = 1.0 / np.sqrt(lam)
    m = dlam * np.outer(s, s)
    if m.shape[0] == 1:
        ev_min = float(m[0, 0])
    else:
        ev_min = float(sla.eigh(m, eigvals_only=True, subset_by_index=[0, 0],
                                driver="evr", check_finite=False)[0])
    return np.inf if ev_min >= -1e-18 else 1.0 / (-ev_min)


def _max_step_lp(x, dx):
    neg = dx < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-x[neg] / dx[neg]))


# ---------------------------------------------------------------------------
# the solver
# ---------------------------------------------------------------------------

def solve(problem: SdrProblem, settings: SolverSettings | None = None) -> SdrSolution:
    """Path-following solve of a real conic program."""
    settings = settings or SolverSettings()
    c = _compile(problem, settings)
    nb = len(c.psd_dims)
    nu = sum(c.psd_dims) + c.n_lp
    if nu == 0:
        raise SolverError("empty problem")

    rho_p = max(1.0, float(np.max(np.abs(c.b))) if c.p else 1.0)
    rho_d = max(1.0, c.norm_c / max(np.sqrt(nu), 1.0))
    X = [rho_p * np.eye(n) for n in c.psd_dims]
    Z = [rho_d * np.eye(n) for n in c.psd_dims]
    x_lp = rho_p * np.ones(c.n_lp)
    z_lp = rho_d * np.ones(c.n_lp)
    y = np.zeros(c.p)

    status = "IterLimit"
    trace = []
    it = 0
    tau = settings.step_fraction

    for it in range(1, settings.max_iter + 1):
        pobj = sum(float(np.sum(Cb * Xb)) for Cb, Xb in zip(c.C_psd, X)) \
            + float(c.c_lp @ x_lp)
        dobj = float(c.b @ y)
        ATy, aty_lp = _apply_AT(c, y)
        r_p = c.b - _apply_A(c, X, x_lp)
        R_d = [Cb - Zb - Ab for Cb, Zb, Ab in zip(c.C_psd, Z, ATy)]
        rd_lp = c.c_lp - z_lp - aty_lp
        gap = sum(float(np.sum(Xb * Zb)) for Xb, Zb in zip(X, Z)) \
            + float(x_lp @ z_lp)
        pinf = float(np.linalg.norm(r_p)) / (1.0 + c.norm_b)
        dinf = np.sqrt(sum(float(np.sum(Rb * Rb)) for Rb in R_d)
                       + float(rd_lp @ rd_lp)) / (1.0 + c.norm_c)
        relgap = gap / max(1.0, abs(pobj))
        trace.append({"iter": it, "pobj": pobj, "dobj": dobj, "gap": gap,
                      "pinf": pinf, "dinf": dinf})
        if settings.verbose:
            print(f"  it {it:3d}  pobj {pobj:+.6e} dobj {dobj:+.6e} "
                  f"gap {gap:.3e} pinf {pinf:.3e} dinf {dinf:.3e}")
        if not np.isfinite(pobj) or not np.isfinite(gap):
            status = "NumericalTrouble"
            break
        if relgap <= settings.tol_gap and pinf <= settings.tol_feas \
                and dinf <= settings.tol_feas:
            status = "Optimal"
            break
        if dobj > 0.0:
            # Farkas check: y/(b'y) with Z/(b'y) certifies primal
            # infeasibility when A*(y) + Z vanishes against b'y
            cert = np.sqrt(sum(float(np.sum((Ab + Zb) ** 2))
                               for Ab, Zb in zip(ATy, Z))
                           + float(np.sum((aty_lp + z_lp) ** 2)))
            if cert / dobj <= 1e2 * settings.tol_feas and \
                    dobj > 1e4 * max(1.0, abs(pobj)) * settings.tol_gap and \
                    gap / dobj <= 1e-4:
                status = "Infeasible"
                break

        try:
            scal = [_nt_scaling(Xb, Zb) for Xb, Zb in zip(X, Z)]
        except SolverError:
            status = "NumericalTrouble"
            break
        R_nt = [r for r, _ in scal]
        lam = [s for _, s in scal]
        T_psd = [r @ r.T for r in R_nt]
        w_lp = np.sqrt(np.maximum(x_lp, 1e-300) / np.maximum(z_lp, 1e-300))
        lam_lp = np.sqrt(np.maximum(x_lp * z_lp, 0.0))
        mu = gap / nu

        M = _schur(c, T_psd, w_lp)
        diag_reg = 0.0
        Mfac = None
        base = max(float(np.trace(M)) / max(c.p, 1), 1e-30)
        for _ in range(7):
            try:
                Mfac = sla.cho_factor(
                    M + diag_reg * np.eye(c.p), lower=True,
                    check_finite=False)
                break
            except np.linalg.LinAlgError:
                diag_reg = max(10.0 * diag_reg, 1e-14 * base)
        if Mfac is None:
            status = "NumericalTrouble"
            break

        # pieces reused by both directions
        S_d = [R.T @ Rb @ R for R, Rb in zip(R_nt, R_d)]
        WRdW = [R @ Sb @ R.T for R, Sb in zip(R_nt, S_d)]
        rhs_feas = r_p + _apply_A(c, WRdW, (w_lp ** 2) * rd_lp)

        def directions(V_psd, v_lp):
            scaled = [R @ Vb @ R.T for R, Vb in zip(R_nt, V_psd)]
            rhs = rhs_feas - _apply_A(c, scaled, w_lp * v_lp)
            dy = sla.cho_solve(Mfac, rhs, check_finite=False)
            dATy, daty_lp = _apply_AT(c, dy)
            dZ = [Rb - Ab for Rb, Ab in zip(R_d, dATy)]
            dz_lp = rd_lp - daty_lp
            dlam_z = [R.T @ dZb @ R for R, dZb in zip(R_nt, dZ)]
            dlam_x = [Vb - Db for Vb, Db in zip(V_psd, dlam_z)]
            dX = [R @ Db @ R.T for R, Db in zip(R_nt, dlam_x)]
            dlz_lp = w_lp * dz_lp
            dlx_lp = v_lp - dlz_lp
            dx_lp = w_lp * dlx_lp
            return dy, dZ, dz_lp, dX, dx_lp, dlam_x, dlam_z, dlz_lp, dlx_lp

        # predictor (affine scaling): target V with L(V) = -lam
        V_aff = [np.diag(-lb) for lb in lam]
        v_aff_lp = -lam_lp
        aff = directions(V_aff, v_aff_lp)
        (_, _, _, _, _, alx, alz, alz_lp, alx_lp) = aff
        a_p = min([tau * _max_step(lb, d) for lb, d in zip(lam, alx)]
                  + [tau * _max_step_lp(lam_lp, alx_lp), 1.0])
        a_d = min([tau * _max_step(lb, d) for lb, d in zip(lam, alz)]
                  + [tau * _max_step_lp(lam_lp, alz_lp), 1.0])
        gap_aff = sum(
            float(np.sum((np.diag(lb) + a_p * dx) * (np.diag(lb) + a_d * dz)))
            for lb, dx, dz in zip(lam, alx, alz))
        gap_aff += float((lam_lp + a_p * alx_lp) @ (lam_lp + a_d * alz_lp))
        sigma = min(max((max(gap_aff, 0.0) / gap) ** 3, 1e-10), 1.0 - 1e-10)

        # corrector: L(V) = L(sigma*mu*I - Lam^2 - H(dlx dlz))
        V_cc = []
        for lb, dx, dz in zip(lam, alx, alz):
            h = 0.5 * (dx @ dz + dz @ dx)
            v = -h
            np.fill_diagonal(v, v.diagonal() + sigma * mu - lb ** 2)
            denom = lb[:, None] + lb[None, :]
            V_cc.append(2.0 * v / denom)
        v_cc_lp = (sigma * mu - lam_lp ** 2 - alx_lp * alz_lp) \
            / np.maximum(lam_lp, 1e-300)
        comb = directions(V_cc, v_cc_lp)
        dy, dZ, dz_lp, dX, dx_lp, dlx, dlz, dlz_lp, dlx_lp = comb
        a_p = min([tau * _max_step(lb, d) for lb, d in zip(lam, dlx)]
                  + [tau * _max_step_lp(lam_lp, dlx_lp), 1.0])
        a_d = min([tau * _max_step(lb, d) for lb, d in zip(lam, dlz)]
                  + [tau * _max_step_lp(lam_lp, dlz_lp), 1.0])
        if not (np.isfinite(a_p) and np.isfinite(a_d)) or a_p <= 0 or a_d <= 0:
            status = "NumericalTrouble"
            break
        trace[-1].update({"alpha_p": a_p, "alpha_d": a_d, "sigma": sigma})
        for Xb, dXb in zip(X, dX):
            Xb += a_p * dXb
            Xb[:] = 0.5 * (Xb + Xb.T)
        x_lp += a_p * dx_lp
        y += a_d * dy
        for Zb, dZb in zip(Z, dZ):
            Zb += a_d * dZb
            Zb[:] = 0.5 * (Zb + Zb.T)
        z_lp += a_d * dz_lp

    return _finish(c, X, Z, x_lp, z_lp, y, status, it, trace)


def _finish(c, X, Z, x_lp, z_lp, y, status, it, trace):
    problem = c.problem
    pobj = sum(float(np.sum(Cb * Xb)) for Cb, Xb in zip(c.C_psd, X)) \
        + float(c.c_lp @ x_lp)
    dobj = float(c.b @ y)
    pinf = float(np.linalg.norm(c.b - _apply_A(c, X, x_lp))) / (1.0 + c.norm_b)
    ATy, aty_lp = _apply_AT(c, y)
    dinf = np.sqrt(sum(float(np.sum((Cb - Zb - Ab) ** 2))
                       for Cb, Zb, Ab in zip(c.C_psd, Z, ATy))
                   + float(np.sum((c.c_lp - z_lp - aty_lp) ** 2))) \
        / (1.0 + c.norm_c)
    gap = sum(float(np.sum(Xb * Zb)) for Xb, Zb in zip(X, Z)) \
        + float(x_lp @ z_lp)

    # multipliers in the original row orientation: nonnegative for
    # inequalities, free sign for equalities; row equilibration undone
    y_orig = y / c.row_scale
    multipliers = {}
    for k, (name, sense) in enumerate(zip(c.names, c.senses)):
        # the 'ge' flip is folded into the row data, so the slack-dual
        # relation mult = -y holds for both inequality senses
        if sense in ("le", "ge"):
            multipliers[name] = -y_orig[k]
        else:
            multipliers[name] = y_orig[k]

    lam_im = {}
    for name, v in multipliers.items():
        if name.startswith("papr:"):
            _, m, i = name.split(":")
            lam_im[(int(m), int(i))] = v
    nu1 = multipliers.get("mui")
    nu2 = multipliers.get("homog")
    dual = DualCertificate(lambda_im=lam_im, nu1=nu1, nu2=nu2,
                           gap=pobj - dobj)
    spectrum = np.linalg.eigvalsh(X[0]) if X else np.zeros(0)
    lp_named = {name: float(x_lp[i])
                for i, name in enumerate(problem.lp_names)}
    return SdrSolution(
        X_opt=X, lp=x_lp, objective=pobj, dual=dual, status=status,
        iterations=it, eigen_spectrum=spectrum, multipliers=multipliers,
        Z_opt=Z, gap=gap, pinf=pinf, dinf=dinf, trace=trace,
        lp_named=lp_named)


def solve_problem(problem: SdrProblem,
                  settings: SolverSettings | None = None) -> SdrSolution:
    """Solve a complex Hermitian program via realification and read back.

    Objectives, gaps, and block solutions are returned on the complex
    scale; multipliers carry over unchanged (right-hand sides double under
    the embedding, so the dual objective doubles exactly with the primal).
    """
    if problem.domain == "real":
        return solve(problem, settings)
    rp = realify(problem)
    sol = solve(rp, settings)
    factor = rp.scale / problem.scale
    X_c, Z_c = [], []
    for blk, Xb, Zb in zip(problem.blocks, sol.X_opt, sol.Z_opt):
        if blk.domain == "hermitian":
            X_c.append(derealify_block(Xb))
            Z_c.append(derealify_block(Zb))
        else:
            X_c.append(Xb / factor)
            Z_c.append(Zb)
    sol.X_opt = X_c
    sol.Z_opt = Z_c
    sol.objective = sol.objective / factor
    sol.gap = sol.gap / factor
    sol.dual = replace(sol.dual, gap=sol.dual.gap / factor)
    sol.eigen_spectrum = (np.linalg.eigvalsh(X_c[0]).real
                          if X_c else np.zeros(0))
    return sol


def check_strong_duality(sol: SdrSolution, delta_e: float) -> float:
    """Relative residual of the duality identity obj = nu2 - nu1 * delta_e."""
    if sol.status != "Optimal":
        raise ValueError("strong-duality check requires an Optimal solve")
    if sol.dual.nu1 is None or sol.dual.nu2 is None:
        raise ValueError("missing residual-row or homogenization multipliers")
    lhs = sol.objective
    rhs = sol.dual.nu2 - sol.dual.nu1 * delta_e
    return abs(lhs - rhs) / max(1.0, abs(lhs))


def trace_to_csv(sol: SdrSolution, path):
    """Per-iteration trace as CSV (iter, pobj, dobj, gap, pinf, dinf)."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["iter", "pobj", "dobj", "gap", "pinf", "dinf"])
        writer.writeheader()
        for row in sol.trace:
            writer.writerow(row)
