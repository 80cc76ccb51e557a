"""Channel-uncertainty variants of the precoding program and the Monte
Carlo / small-dimension oracles that validate them.

Three robustness models over the measured channel Hhat:

  * coarse (bounded error): the residual row is widened by eps_h^2 on both
    sides, Tr((Ghat + eps^2 I) X) <= delta_e + eps^2.  Cheap, but the
    widening drops the uncertainty cross term, so it under-protects: the
    exact worst case over the error ball can still exceed delta_e.
  * fine / bounded: the worst case over ||DeltaH||_F <= eps_h is encoded
    exactly through the lossless S-procedure, Schur-reduced to one linear
    row and one PSD block [[lam I - X, X], [X, -Z]] over an auxiliary
    Hermitian Z and scalar lam >= 0.
  * fine / stochastic: a Gaussian vec(DeltaH) with per-receive-dimension
    variances is handled in probability via a Bernstein-type concentration
    bound, yielding one linear row, one second-order-cone row, and one
    eigenvalue-cap PSD block with slacks lam1, lam2 and theta = -log(gamma).

The Kronecker blocks I (x) X that appear in the stochastic derivation are
never materialized: with per-receive-dimension variances they collapse to
copies of X with the homogenization row and column zeroed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .qcqp import (AffineExpr, Block, DiagTerm, GramTerm, LpTerm, Row,
                   SdrProblem, SocRow, SparseTerm, P4Instance, _homog_row,
                   _papr_rows, im_entry, im_linear, re_entry, re_linear,
                   sparse_term)


@dataclass(frozen=True)
class UncertaintyModel:
    """Bounded Frobenius ball or per-entry Gaussian channel error."""
    kind: str                      # "bounded" or "stochastic"
    eps_h: float = 0.0             # ball radius (bounded)
    r_eps: np.ndarray | float = 0.0  # per-receive-dim variances (stochastic)
    gamma: float = 1.0             # outage probability (stochastic)

    def __post_init__(self):
        if self.kind == "bounded":
            if self.eps_h <= 0:
                raise ValueError("bounded model needs eps_h > 0")
        elif self.kind == "stochastic":
            if not 0.0 < self.gamma <= 1.0:
                raise ValueError("gamma must lie in (0, 1]")
            if np.any(np.asarray(self.r_eps) < 0):
                raise ValueError("variances must be nonnegative")
        else:
            raise ValueError(f"unknown uncertainty kind {self.kind!r}")


def _variance_per_row(r_eps, n_s: int, n_x: int) -> np.ndarray:
    """Normalize the error covariance spec to one variance per receive dim.

    Accepts a scalar, a length-n_s vector, or a length n_s*n_x diagonal
    that is constant across the transmit dimensions of each receive
    dimension.  Anything richer would force dense Kronecker blocks of
    order n_s*(n_x+1) and is rejected.
    """
    r = np.asarray(r_eps, dtype=float)
    if r.ndim == 0:
        return np.full(n_s, float(r))
    if r.shape == (n_s,):
        return r.copy()
    if r.shape == (n_s * n_x,):
        per = r.reshape(n_s, n_x)
        if not np.allclose(per, per[:, :1]):
            raise ValueError(
                "per-entry variances must be constant across transmit "
                "dimensions for each receive dimension")
        return per[:, 0].copy()
    raise ValueError(f"cannot interpret error covariance of shape {r.shape}")


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def build_coarse(inst: P4Instance, eps_h: float) -> SdrProblem:
    """Widened residual row in place of the nominal one."""
    if eps_h < 0:
        raise ValueError("eps_h must be nonnegative")
    base = inst.problem
    d = base.blocks[0].dim
    factor = np.concatenate([inst.channel.dense(), -inst.symbols.s[:, None]],
                            axis=1)
    rows = [r for r in base.rows if r.name != "mui"]
    rows.append(Row(name="mui", sense="le", b=inst.delta_e + eps_h ** 2,
                    terms=(GramTerm(block=0, factor=factor),
                           DiagTerm(block=0, vec=eps_h ** 2 * np.ones(d)))))
    return SdrProblem(
        blocks=base.blocks, objective=base.objective, rows=tuple(rows),
        metadata={**base.metadata, "family": "P6", "eps_h": eps_h})


def _hermitian_coupling_rows(name, d, entry_blocks, lp_terms_diag=(),
                             b=0.0):
    """Equality rows pinning a Hermitian relation entry by entry.

    entry_blocks: list of (block_index, offset_i, offset_j, coef); every
    (i, j) with i <= j contributes a real row (and an imaginary row when
    i < j) of sum_blocks coef * X_blk[i + oi, j + oj] plus the diagonal
    scalar terms, equal to b.
    """
    rows = []
    for i in range(d):
        for j in range(i, d):
            terms = []
            for blk, oi, oj, coef in entry_blocks:
                terms.append(sparse_term(
                    blk, re_entry(i + oi, j + oj, coef)))
            if i == j:
                terms.extend(lp_terms_diag)
            rows.append(Row(name=f"{name}:re:{i}:{j}", sense="eq", b=b,
                            terms=tuple(terms)))
            if i != j:
                terms_im = [sparse_term(blk, im_entry(i + oi, j + oj, coef))
                            for blk, oi, oj, coef in entry_blocks]
                rows.append(Row(name=f"{name}:im:{i}:{j}", sense="eq", b=b,
                                terms=tuple(terms_im)))
    return rows


def _general_block_coupling_rows(name, d, blk_b, off_i, off_j, x_blk,
                                 coef=1.0):
    """Pin a full off-diagonal block of a Hermitian variable to X."""
    rows = []
    for i in range(d):
        for j in range(d):
            rows.append(Row(
                name=f"{name}:re:{i}:{j}", sense="eq", b=0.0,
                terms=(sparse_term(blk_b, re_entry(i + off_i, j + off_j)),
                       sparse_term(x_blk, re_entry(i, j, -coef)))))
            if i == j:
                # the diagonal of X is real; pin only the imaginary part
                # of the target entry
                rows.append(Row(
                    name=f"{name}:im:{i}:{j}", sense="eq", b=0.0,
                    terms=(sparse_term(blk_b,
                                       im_entry(i + off_i, j + off_j)),)))
            else:
                rows.append(Row(
                    name=f"{name}:im:{i}:{j}", sense="eq", b=0.0,
                    terms=(sparse_term(blk_b, im_entry(i + off_i, j + off_j)),
                           sparse_term(x_blk, im_entry(i, j, -coef)))))
    return rows


def sproc_residual_parts(d: int, factor: np.ndarray, eps_h: float,
                         delta_e: float, schur_blk: int, lam_idx: int):
    """Rows and block realizing the worst-case residual cap over the ball.

    Returns (rows, block) where block is the 2d Schur variable B with
    B11 = lam I - X, B12 = X, B22 free (= -Z), plus the linear row
    <Ghat, X> + <diag(0, Ghat), B> + eps^2 lam <= delta_e.
    """
    rows = []
    zero_pad = np.zeros((factor.shape[0], d), dtype=complex)
    factor_b = np.concatenate([zero_pad, factor], axis=1)
    rows.append(Row(
        name="mui", sense="le", b=delta_e,
        terms=(GramTerm(block=0, factor=factor),
               GramTerm(block=schur_blk, factor=factor_b),
               LpTerm(idx=lam_idx, coef=eps_h ** 2))))
    # B11 + X - lam I = 0
    rows.extend(_hermitian_coupling_rows(
        "sproc11", d,
        entry_blocks=[(schur_blk, 0, 0, 1.0), (0, 0, 0, 1.0)],
        lp_terms_diag=(LpTerm(idx=lam_idx, coef=-1.0),)))
    # B12 - X = 0
    rows.extend(_general_block_coupling_rows("sproc12", d, schur_blk, 0, d,
                                             x_blk=0))
    return rows, Block(dim=2 * d, domain="hermitian")


def build_sproc(inst: P4Instance, eps_h: float) -> SdrProblem:
    """Exact bounded-error robust program via the S-procedure."""
    if eps_h <= 0:
        raise ValueError("eps_h must be positive")
    base = inst.problem
    d = base.blocks[0].dim
    factor = np.concatenate([inst.channel.dense(), -inst.symbols.s[:, None]],
                            axis=1)
    rows = [r for r in base.rows if r.name != "mui"]
    extra, schur_block = sproc_residual_parts(d, factor, eps_h, inst.delta_e,
                                              schur_blk=1, lam_idx=0)
    rows.extend(extra)
    return SdrProblem(
        blocks=(base.blocks[0], schur_block),
        objective=base.objective,
        rows=tuple(rows),
        lp_dim=1, lp_names=("lam",),
        metadata={**base.metadata, "family": "P7", "eps_h": eps_h})


def build_bernstein(inst: P4Instance, r_eps, gamma: float) -> SdrProblem:
    """Chance-constrained residual cap via the Bernstein-type bound.

    With per-receive-dimension error variances c_k the Kronecker form
    collapses: the eigenvalue cap becomes lam2 I >= c_max X0, the
    Frobenius terms use sqrt(sum c_k^2) ||X0||_F and the scaled rows of
    Hhat_s X, where X0 is X with the homogenization row and column
    zeroed.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]; gamma = 0 would make "
                         "theta infinite")
    base = inst.problem
    d = base.blocks[0].dim
    n_s = inst.channel.n_s
    cvec = _variance_per_row(r_eps, n_s, inst.channel.n_x)
    theta = -np.log(gamma)
    factor = np.concatenate([inst.channel.dense(), -inst.symbols.s[:, None]],
                            axis=1)
    c_sum = float(np.sum(cvec))
    c_frob = float(np.sqrt(np.sum(cvec ** 2)))
    c_max = float(np.max(cvec)) if cvec.size else 0.0

    rows = [r for r in base.rows if r.name != "mui"]
    i0 = np.ones(d)
    i0[-1] = 0.0
    rows.append(Row(
        name="mui", sense="le", b=inst.delta_e,
        terms=(GramTerm(block=0, factor=factor),
               DiagTerm(block=0, vec=c_sum * i0),
               LpTerm(idx=0, coef=np.sqrt(2.0 * theta)),
               LpTerm(idx=1, coef=theta))))
    # eigenvalue cap: E = lam2 I - c_max X0 >= 0
    rows.extend(_hermitian_coupling_rows(
        "eigcap", d,
        entry_blocks=[(1, 0, 0, 1.0), (0, 0, 0, c_max)],
        lp_terms_diag=(LpTerm(idx=1, coef=-1.0),)))
    # zeroed row/column of X0: correct the (i, d-1) and (d-1, d-1) rows,
    # which must not carry the c_max X term
    fixed = []
    for r in rows:
        if r.name.startswith("eigcap") and \
                r.name.split(":")[-1] == str(d - 1):
            keep = tuple(t for t in r.terms
                         if not (isinstance(t, SparseTerm) and t.block == 0))
            fixed.append(Row(name=r.name, sense=r.sense, b=r.b, terms=keep))
        else:
            fixed.append(r)
    rows = fixed

    # SOC row: lam1 >= sqrt(||W||_F^2 + 2||g||^2)
    z = []
    for i in range(d - 1):
        z.append(AffineExpr(terms=(
            sparse_term(0, re_entry(i, i, c_frob)),)))
        for j in range(i + 1, d - 1):
            z.append(AffineExpr(terms=(
                sparse_term(0, re_entry(i, j, np.sqrt(2.0) * c_frob)),)))
            z.append(AffineExpr(terms=(
                sparse_term(0, im_entry(i, j, np.sqrt(2.0) * c_frob)),)))
    for k in range(n_s):
        w = np.sqrt(cvec[k]) * factor[k, :]
        for col in range(d - 1):
            z.append(AffineExpr(terms=(
                sparse_term(0, re_linear(w, col, np.sqrt(2.0))),)))
            z.append(AffineExpr(terms=(
                sparse_term(0, im_linear(w, col, np.sqrt(2.0))),)))
    soc = SocRow(name="bern_soc",
                 t=AffineExpr(terms=(LpTerm(idx=0, coef=1.0),)),
                 z=tuple(z))

    return SdrProblem(
        blocks=(base.blocks[0], Block(dim=d, domain="hermitian")),
        objective=base.objective,
        rows=tuple(rows),
        lp_dim=2, lp_names=("lam1", "lam2"),
        soc_rows=(soc,),
        metadata={**base.metadata, "family": "P8", "gamma": gamma,
                  "theta": theta})


# ---------------------------------------------------------------------------
# Monte Carlo validation
# ---------------------------------------------------------------------------

def sample_bounded_errors(n_s: int, n_x: int, eps_h: float, n_draws: int,
                          rng: np.random.Generator) -> np.ndarray:
    """Error matrices uniform on the Frobenius sphere of radius eps_h."""
    g = (rng.standard_normal((n_draws, n_s, n_x))
         + 1j * rng.standard_normal((n_draws, n_s, n_x)))
    norms = np.sqrt(np.sum(np.abs(g) ** 2, axis=(1, 2)))
    return eps_h * g / norms[:, None, None]


def sample_gaussian_errors(cvec: np.ndarray, n_x: int, n_draws: int,
                           rng: np.random.Generator) -> np.ndarray:
    """Per-entry circular Gaussians with per-receive-dim variances."""
    n_s = cvec.shape[0]
    g = (rng.standard_normal((n_draws, n_s, n_x))
         + 1j * rng.standard_normal((n_draws, n_s, n_x))) / np.sqrt(2.0)
    return g * np.sqrt(cvec)[None, :, None]


def residual_quadratics(x, inst: P4Instance, deltas: np.ndarray) -> np.ndarray:
    """||s - (Hhat + Delta) x||^2 for a batch of channel errors."""
    x = np.asarray(x, dtype=complex)
    r = inst.symbols.s - inst.channel.apply(x)
    return kernels.mui_quadratics(np.ascontiguousarray(deltas), x, r)


def violation_rate(x, inst: P4Instance, model: UncertaintyModel,
                   n_draws: int, rng: np.random.Generator,
                   chunk: int = 2000) -> float:
    """Fraction of sampled channel errors busting the residual allowance.

    Bounded errors are drawn on the ball boundary (the quadratic residual
    is convex in the error, so the worst cases sit there); stochastic
    errors follow the Gaussian model itself.
    """
    if n_draws < 1:
        raise ValueError("need at least one draw")
    n_s, n_x = inst.channel.n_s, inst.channel.n_x
    cvec = None
    if model.kind == "stochastic":
        cvec = _variance_per_row(model.r_eps, n_s, n_x)
    bad = 0
    done = 0
    while done < n_draws:
        m = min(chunk, n_draws - done)
        if model.kind == "bounded":
            deltas = sample_bounded_errors(n_s, n_x, model.eps_h, m, rng)
        else:
            deltas = sample_gaussian_errors(cvec, n_x, m, rng)
        q = residual_quadratics(x, inst, deltas)
        bad += int(np.count_nonzero(q > inst.delta_e))
        done += m
    return bad / n_draws


# ---------------------------------------------------------------------------
# small-dimension lemma oracles
# ---------------------------------------------------------------------------

def _quad(u, a, b, cc):
    return float(np.real(np.conj(u) @ (a @ u) + 2.0 * np.real(np.vdot(b, u))
                         + cc))


def _min_quadratic_on_ball(a, b, cc, radius, rng, n_samples=4000,
                           n_polish=6, iters=300):
    """Sampled + projected-gradient minimum of a quadratic over a ball."""
    n = a.shape[0]
    u_s = (rng.standard_normal((n_samples, n))
           + 1j * rng.standard_normal((n_samples, n)))
    norms = np.linalg.norm(u_s, axis=1, keepdims=True)
    surface = radius * u_s / norms
    shrink = rng.random(n_samples) ** (1.0 / (2 * n))
    interior = surface * shrink[:, None]
    pts = np.concatenate([surface, interior])
    vals = np.array([_quad(u, a, b, cc) for u in pts])
    order = np.argsort(vals)
    best_val = vals[order[0]]
    lip = 2.0 * float(np.linalg.norm(a, 2)) + 1e-9
    for idx in order[:n_polish]:
        u = pts[idx].copy()
        for _ in range(iters):
            grad = 2.0 * (a @ u) + 2.0 * b
            u = u - grad / lip
            nrm = np.linalg.norm(u)
            if nrm > radius:
                u *= radius / nrm
        best_val = min(best_val, _quad(u, a, b, cc))
    return best_val


def sproc_lemma_oracle(a1, b1, c1, a2, b2, c2, rng,
                       tol: float = 1e-6) -> dict:
    """Cross-check the quadratic-implication lemma on one small instance.

    Brute side: sampled minimum of q1 over {u : q2(u) <= 0} (supported for
    ball-shaped sets, a2 = I, b2 = 0, c2 < 0).  LMI side: existence of
    lam >= 0 making [[A1 + lam A2, b1 + lam b2], [., c1 + lam c2]] PSD,
    found by maximizing the concave minimum eigenvalue over lam.  Returns
    both verdicts and whether they agree (margins below tol are
    inconclusive).
    """
    a2 = np.asarray(a2, dtype=complex)
    if not (np.allclose(a2, np.eye(a2.shape[0])) and
            np.allclose(np.asarray(b2), 0) and c2 < 0):
        raise ValueError("the sampled side supports ball sets only")
    radius = np.sqrt(-c2)
    brute_min = _min_quadratic_on_ball(np.asarray(a1, dtype=complex),
                                       np.asarray(b1, dtype=complex),
                                       c1, radius, rng)
    brute_holds = brute_min >= -tol

    n = a2.shape[0]

    def lmi_eigmin(lam):
        top = np.concatenate(
            [np.asarray(a1) + lam * a2,
             (np.asarray(b1) + lam * np.asarray(b2))[:, None]], axis=1)
        bot = np.concatenate(
            [(np.asarray(b1) + lam * np.asarray(b2)).conj()[None, :],
             [[c1 + lam * c2]]], axis=1)
        m = np.concatenate([top, bot], axis=0)
        return float(np.linalg.eigvalsh(m)[0])

    # eigmin is concave in lam; golden-section over an expanding bracket
    hi = 1.0
    while lmi_eigmin(hi) > lmi_eigmin(hi / 1.618) and hi < 1e8:
        hi *= 4.0
    lo = 0.0
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    x1, x2 = hi - phi * (hi - lo), lo + phi * (hi - lo)
    f1, f2 = lmi_eigmin(x1), lmi_eigmin(x2)
    for _ in range(200):
        if f1 < f2:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + phi * (hi - lo)
            f2 = lmi_eigmin(x2)
        else:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - phi * (hi - lo)
            f1 = lmi_eigmin(x1)
    best = max(lmi_eigmin(0.0), f1, f2)
    lmi_holds = best >= -tol * 10
    margin = min(abs(brute_min), abs(best))
    return {"brute": brute_holds, "lmi": lmi_holds,
            "agree": brute_holds == lmi_holds, "margin": margin,
            "brute_min": brute_min, "lmi_eigmin": best}


def bernstein_lemma_oracle(w, g, cc, gamma, rng, n_draws: int = 20000) -> dict:
    """Check the concentration bound's guarantee direction by sampling.

    If the deterministic rows are satisfiable at the minimal slacks, the
    chance constraint Pr(u^H W u + 2 Re(g^H u) + c >= 0) >= 1 - gamma must
    hold up to binomial noise.  The converse is not claimed (the bound is
    conservative by construction).
    """
    w = np.asarray(w, dtype=complex)
    g = np.asarray(g, dtype=complex)
    theta = -np.log(gamma)
    lam1 = float(np.sqrt(np.linalg.norm(w, "fro") ** 2
                         + 2.0 * np.linalg.norm(g) ** 2))
    lam2 = max(0.0, float(np.linalg.eigvalsh(-w)[-1]))
    bound_ok = (np.trace(w).real - np.sqrt(2.0 * theta) * lam1
                - theta * lam2 + cc) >= 0.0
    n = w.shape[0]
    u = (rng.standard_normal((n_draws, n))
         + 1j * rng.standard_normal((n_draws, n))) / np.sqrt(2.0)
    vals = (np.einsum("ki,ij,kj->k", u.conj(), w, u).real
            + 2.0 * np.real(u @ g.conj()) + cc)
    prob = float(np.mean(vals >= 0.0))
    sigma = np.sqrt(gamma * (1.0 - gamma) / n_draws)
    consistent = (not bound_ok) or (prob >= 1.0 - gamma - 3.0 * sigma)
    return {"bound_feasible": bool(bound_ok), "mc_prob": prob,
            "consistent": bool(consistent), "sigma": sigma}
