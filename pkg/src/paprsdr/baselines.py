"""Reference methods for the comparisons: power minimization without
peak-awareness, peak-regularized least squares solved by a monotone
accelerated proximal method, and per-antenna constant-envelope
phase-only precoding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import conic, rounding
from .model import EffectiveChannel, SymbolVector, compute_mui
from .qcqp import (Block, DiagTerm, GramTerm, P4Instance, PaprConstraintSet,
                   Row, SdrProblem, _homog_row, build_mui_matrix)
from .waveform import papr_report


@dataclass
class BaselineResult:
    x: np.ndarray
    mui: float
    papr_db: np.ndarray         # per antenna, oversampled by 4
    objective: float            # ||x||^2
    method: str
    converged: bool = True
    extra: dict = field(default_factory=dict)


def _finish_result(x, ch, s, method, converged=True, extra=None):
    sv = s.s if isinstance(s, SymbolVector) else np.asarray(s, dtype=complex)
    resid = sv - ch.apply(x)
    powers = np.sum(np.abs(x.reshape(ch.n_tx, ch.n_sc)) ** 2, axis=1)
    if np.all(powers > 0):
        papr_db = papr_report(x, ch.n_tx, ch.n_sc,
                              oversample=4).per_antenna_papr_db
    else:
        papr_db = np.full(ch.n_tx, np.nan)  # silent antennas have no PAPR
    return BaselineResult(
        x=x,
        mui=float(np.vdot(resid, resid).real / np.vdot(sv, sv).real),
        papr_db=papr_db,
        objective=float(np.vdot(x, x).real), method=method,
        converged=converged, extra=extra or {})


def build_no_papr_problem(ch, s, delta_e: float) -> SdrProblem:
    """Power minimization subject only to the residual allowance."""
    mui = build_mui_matrix(ch, s, delta_e)
    d = mui.factor.shape[1]
    rows = [Row(name="mui", sense="le", b=float(delta_e),
                terms=(GramTerm(block=0, factor=mui.factor),)),
            _homog_row(d)]
    return SdrProblem(
        blocks=(Block(dim=d, domain="hermitian"),),
        objective=(DiagTerm(block=0, vec=np.ones(d)),),
        rows=tuple(rows),
        metadata={"family": "no_papr", "delta_e": float(delta_e)})


def min_power_no_papr(ch, s: SymbolVector, delta_e: float,
                      n_rand: int = 500,
                      rng: np.random.Generator | None = None,
                      settings: conic.SolverSettings | None = None
                      ) -> BaselineResult:
    """Relax-and-round power minimum without peak rows."""
    prob = build_no_papr_problem(ch, s, delta_e)
    sol = conic.solve_problem(prob, settings)
    if sol.status != "Optimal":
        raise conic.SolverError(f"baseline solve ended with {sol.status}")
    # a cap far above any peak makes the audit reduce to the residual row
    papr_free = PaprConstraintSet(alpha=np.full(ch.n_tx, 1e12))
    inst = P4Instance(channel=ch, symbols=s, papr=papr_free,
                      delta_e=float(delta_e), problem=prob)
    rng = rng or np.random.default_rng(0)
    res = rounding.randomize(sol, n_rand, inst, rng)
    out = _finish_result(res.x_opt, ch, s, "no_papr")
    out.extra["sdr_objective"] = sol.objective
    out.converged = res.feasible
    return out


# ---------------------------------------------------------------------------
# peak-regularized least squares
# ---------------------------------------------------------------------------

def _project_l1_ball(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of a complex vector onto the unit l1 ball."""
    mags = np.abs(v)
    total = mags.sum()
    if total <= 1.0:
        return v.copy()
    srt = np.sort(mags)[::-1]
    csum = np.cumsum(srt)
    k = np.arange(1, srt.size + 1)
    ok = srt - (csum - 1.0) / k > 0
    rho = int(np.nonzero(ok)[0][-1])
    tau = (csum[rho] - 1.0) / (rho + 1)
    shrunk = np.maximum(mags - tau, 0.0)
    phase = np.where(mags > 0, v / np.maximum(mags, 1e-300), 0.0)
    return phase * shrunk


def _prox_linf(v: np.ndarray, weight: float) -> np.ndarray:
    """prox of weight * max-modulus via Moreau and the l1 projection."""
    if weight <= 0.0:
        return v.copy()
    return v - weight * _project_l1_ball(v / weight)


def pmp(ch, s: SymbolVector, lambda_reg: float, max_iter: int = 20000,
        tol: float = 1e-8) -> BaselineResult:
    """Accelerated proximal solve of ||s - Hx||^2 + lambda * ||x||_inf.

    Monotone variant: the accelerated candidate is kept only when it
    improves the objective, so the per-iteration objective never
    increases.  Stops when the composite gradient mapping falls below
    tol * (1 + ||x||).
    """
    if lambda_reg < 0:
        raise ValueError("the regularization weight must be nonnegative")
    h = ch.dense()
    sv = s.s if isinstance(s, SymbolVector) else np.asarray(s, dtype=complex)
    sigma_max = np.linalg.norm(h, 2)
    lip = 2.0 * sigma_max ** 2 + 1e-12

    def f_val(x):
        r = sv - h @ x
        return float(np.vdot(r, r).real)

    def obj(x):
        return f_val(x) + lambda_reg * float(np.max(np.abs(x)))

    x = np.zeros(h.shape[1], dtype=complex)
    y = x.copy()
    t_acc = 1.0
    best = obj(x)
    hist = [best]
    converged = False
    for _ in range(max_iter):
        grad = 2.0 * (h.conj().T @ (h @ y - sv))
        z = _prox_linf(y - grad / lip, lambda_reg / lip)
        oz = obj(z)
        if oz <= best:
            x_new, o_new = z, oz
        else:
            x_new, o_new = x, best
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_acc ** 2))
        y = x_new + ((t_acc - 1.0) / t_next) * (x_new - x) \
            + (t_acc / t_next) * (z - x_new)
        t_acc = t_next
        x, best = x_new, o_new
        hist.append(best)
        # composite gradient mapping at x
        gm = (x - _prox_linf(x - 2.0 * (h.conj().T @ (h @ x - sv)) / lip,
                             lambda_reg / lip)) * lip
        if np.linalg.norm(gm) <= tol * (1.0 + np.linalg.norm(x)):
            converged = True
            break
    out = _finish_result(x, ch, s, "pmp", converged=converged)
    out.extra["objective_history"] = np.asarray(hist)
    out.extra["lambda_reg"] = lambda_reg
    out.extra["composite_objective"] = best
    return out


# ---------------------------------------------------------------------------
# per-antenna constant envelope
# ---------------------------------------------------------------------------

def constant_envelope(ch, s: SymbolVector, n_restarts: int = 8,
                      rng: np.random.Generator | None = None,
                      max_sweeps: int = 200, tol: float = 1e-12
                      ) -> BaselineResult:
    """Phase-only precoding, one independent phase vector per subcarrier.

    Coordinate descent on the phases (each update is in closed form), with
    random restarts against the nonconvex landscape; the per-antenna
    frequency-domain entries have modulus exactly 1/sqrt(n_tx).
    """
    rng = rng or np.random.default_rng(0)
    n_tx, n_sc = ch.n_tx, ch.n_sc
    n_users = ch.n_s // n_sc
    sv = s.s if isinstance(s, SymbolVector) else np.asarray(s, dtype=complex)
    per_sc = ch.channel.per_subcarrier
    scale = 1.0 / np.sqrt(n_tx)
    freq = np.empty((n_tx, n_sc), dtype=complex)
    total_res = 0.0
    for m in range(n_sc):
        h_m = per_sc[m]
        target = sv[m * n_users:(m + 1) * n_users]
        best_phase, best_val = None, np.inf
        for r in range(n_restarts):
            if r == 0:
                phase = np.zeros(n_tx)
            else:
                phase = rng.uniform(0.0, 2 * np.pi, n_tx)
            e = np.exp(1j * phase)
            resid = (h_m @ e) * scale - target
            for _ in range(max_sweeps):
                delta = 0.0
                for n in range(n_tx):
                    col = h_m[:, n] * scale
                    resid_wo = resid - col * e[n]
                    w = np.vdot(resid_wo, col)
                    new = -np.conj(w) / abs(w) if abs(w) > 0 else e[n]
                    delta = max(delta, abs(new - e[n]))
                    resid = resid_wo + col * new
                    e[n] = new
                if delta < tol:
                    break
            val = float(np.vdot(resid, resid).real)
            if val < best_val:
                best_val, best_phase = val, e.copy()
        freq[:, m] = best_phase * scale
        total_res += best_val
    x = np.fft.ifft(freq, axis=1) * np.sqrt(n_sc)
    x = x.ravel()
    out = _finish_result(x, ch, s, "constant_envelope")
    out.extra["freq_unit"] = freq * np.sqrt(n_tx)
    out.extra["residual"] = total_res
    return out
