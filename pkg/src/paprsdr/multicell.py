"""Intercell coordination: coherent transmission, fast cell selection, and
interference coordination, plus the dispatcher that solves and rounds each
scenario.

Coherent transmission broadcasts one waveform from every cooperating cell,
so the residual row uses the summed effective channel.  Fast cell
selection solves one program per cell: the serving cell runs the nominal
program for its users, every other cell adds one row capping the energy
leaked into the edge-user group at a fraction beta_s of the worst case
(the largest eigenvalue of the edge Gram times the transmit power, carried
through the homogenization as beta*lam_max*Tr(X) - <Z_e, X> >= beta*lam_max).
Interference coordination stacks the per-cell signals into one joint
variable and caps the residual of the combined downlink.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import conic, rounding
from .model import EffectiveChannel, SymbolVector, generate_channel, SystemConfig
from .qcqp import (Block, DiagTerm, GramTerm, P4Instance, PaprConstraintSet,
                   Row, SdrProblem, _homog_row, _papr_rows)
from .robust import sproc_residual_parts


@dataclass(frozen=True)
class CoordinationScenario:
    kind: str                     # coherent | fast_selection | interference
    m_cells: int
    delta_c: float | None = None  # residual allowance (coherent)
    delta_i: float | None = None  # residual allowance (interference)
    delta_e: float | None = None  # per-cell allowance (fast selection)
    beta_s: float | None = None   # leakage fraction (fast selection)
    selected_cell: int = 0
    robust_eps: float | None = None  # bounded-error radius; None = nominal

    def __post_init__(self):
        if self.kind == "coherent":
            if self.delta_c is None or self.delta_c <= 0:
                raise ValueError("coherent transmission needs delta_c > 0")
        elif self.kind == "fast_selection":
            if self.beta_s is None or not 0.0 < self.beta_s <= 1.0:
                raise ValueError("fast selection needs beta_s in (0, 1]")
            if self.delta_e is None or self.delta_e <= 0:
                raise ValueError("fast selection needs delta_e > 0")
            if not 0 <= self.selected_cell < self.m_cells:
                raise ValueError("selected cell out of range")
        elif self.kind == "interference":
            if self.delta_i is None or self.delta_i <= 0:
                raise ValueError("interference coordination needs delta_i > 0")
        else:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.m_cells < 1:
            raise ValueError("need at least one cell")


@dataclass
class MatrixChannel:
    """Duck-typed effective channel over an explicit matrix.

    Stands in for EffectiveChannel when the operator is a combination of
    per-cell channels (sums or concatenations).
    """
    mat: np.ndarray
    n_tx: int
    n_sc: int

    @property
    def n_s(self) -> int:
        return self.mat.shape[0]

    @property
    def n_x(self) -> int:
        return self.mat.shape[1]

    def apply(self, x):
        return self.mat @ x

    def dense(self):
        return self.mat


def _lifted_factor(mat: np.ndarray, s: np.ndarray) -> np.ndarray:
    return np.concatenate([mat, -np.asarray(s, dtype=complex)[:, None]],
                          axis=1)


def _residual_program(mat, s, papr: PaprConstraintSet, n_sc, delta, name,
                      robust_eps=None, metadata=None):
    """Power minimization with peak rows and one residual row over `mat`."""
    n_x = mat.shape[1]
    n_tx = papr.alpha.shape[0]
    if n_tx * n_sc != n_x:
        raise ValueError("PAPR caps inconsistent with the stacked dimensions")
    d = n_x + 1
    rows = _papr_rows(papr, n_tx, n_sc)
    factor = _lifted_factor(mat, s)
    blocks = [Block(dim=d, domain="hermitian")]
    lp_dim, lp_names = 0, ()
    if robust_eps is None:
        rows.append(Row(name="mui", sense="le", b=float(delta),
                        terms=(GramTerm(block=0, factor=factor),)))
    else:
        extra, schur_block = sproc_residual_parts(
            d, factor, robust_eps, float(delta), schur_blk=1, lam_idx=0)
        rows.extend(extra)
        blocks.append(schur_block)
        lp_dim, lp_names = 1, ("lam",)
    rows.append(_homog_row(d))
    meta = {"family": name, "n_tx": n_tx, "n_sc": n_sc, "delta_e": float(delta)}
    meta.update(metadata or {})
    return SdrProblem(
        blocks=tuple(blocks),
        objective=(DiagTerm(block=0, vec=np.ones(d)),),
        rows=tuple(rows),
        lp_dim=lp_dim, lp_names=lp_names,
        metadata=meta)


def build_coherent(cell_mats, s, delta_c, papr: PaprConstraintSet, n_sc,
                   robust_eps=None):
    """Shared-waveform program over the summed effective channel."""
    mats = [np.asarray(m, dtype=complex) for m in cell_mats]
    if len({m.shape for m in mats}) != 1:
        raise ValueError("per-cell channels must share the x dimension")
    total = np.sum(mats, axis=0)
    prob = _residual_program(total, s, papr, n_sc, delta_c, "coherent",
                             robust_eps=robust_eps,
                             metadata={"m_cells": len(mats)})
    chan = MatrixChannel(mat=total, n_tx=papr.alpha.shape[0], n_sc=n_sc)
    return prob, chan


def leakage_row(edge_mat: np.ndarray, beta_s: float, d: int) -> Row:
    """Cap on edge-user leakage at a fraction of the worst case.

    ||H_e x||^2 <= beta * lam_max(H_e^H H_e) * ||x||^2 becomes, through
    Tr(X) = ||x||^2 + 1,
        beta*lam_max*Tr(X) - <diag(H_e^H H_e, 0), X> >= beta*lam_max.
    """
    gram = edge_mat.conj().T @ edge_mat
    lam_max = float(np.linalg.eigvalsh(gram)[-1])
    lifted = np.concatenate(
        [edge_mat, np.zeros((edge_mat.shape[0], 1), dtype=complex)], axis=1)
    return Row(name="leakage", sense="ge", b=beta_s * lam_max,
               terms=(DiagTerm(block=0, vec=beta_s * lam_max * np.ones(d)),
                      GramTerm(block=0, factor=lifted, coef=-1.0)))


def build_fast_selection(cell_mats, cell_symbols, edge_mats, scenario,
                         papr: PaprConstraintSet, n_sc):
    """One program per cell: nominal for the serving cell, leakage-capped
    for the rest."""
    probs = []
    for k, (mat, s_k) in enumerate(zip(cell_mats, cell_symbols)):
        prob = _residual_program(
            np.asarray(mat, dtype=complex), s_k, papr, n_sc,
            scenario.delta_e, "fast_selection",
            robust_eps=scenario.robust_eps,
            metadata={"cell": k, "serving": k == scenario.selected_cell})
        if k != scenario.selected_cell:
            edge = np.asarray(edge_mats[k], dtype=complex)
            if np.linalg.norm(edge) > 0:
                d = prob.blocks[0].dim
                rows = list(prob.rows) + [leakage_row(edge, scenario.beta_s, d)]
                prob = SdrProblem(
                    blocks=prob.blocks, objective=prob.objective,
                    rows=tuple(rows), lp_dim=prob.lp_dim,
                    lp_names=prob.lp_names, metadata=prob.metadata)
        probs.append(prob)
    return probs


def build_interference_coordination(cell_mats, s, delta_i,
                                    paprs, n_sc, robust_eps=None):
    """Joint program over the stacked per-cell transmit vectors."""
    mats = [np.asarray(m, dtype=complex) for m in cell_mats]
    joint = np.concatenate(mats, axis=1)
    alpha = np.concatenate([p.alpha for p in paprs])
    papr_joint = PaprConstraintSet(alpha=alpha)
    prob = _residual_program(joint, s, papr_joint, n_sc, delta_i,
                             "interference", robust_eps=robust_eps,
                             metadata={"m_cells": len(mats)})
    chan = MatrixChannel(mat=joint, n_tx=alpha.shape[0], n_sc=n_sc)
    return prob, chan, papr_joint


# ---------------------------------------------------------------------------
# two-cell geometry and the dispatcher
# ---------------------------------------------------------------------------

@dataclass
class TwoCellGeometry:
    """Effective channels of a two-cell layout with shared edge users.

    to_center[k][j]: cell k to the center users of cell j; to_edge[k]:
    cell k to the edge group.  Cross-cell center links carry the
    configured power deficit; edge users see both cells at equal average
    gain.
    """
    to_center: list            # [k][j] -> (n_center*n_sc, n_x) matrices
    to_edge: list              # [k] -> (n_edge*n_sc, n_x) matrices
    n_center: int
    n_edge: int
    n_sc: int
    n_tx: int


def generate_two_cell(n_tx, n_sc, n_center, n_edge, n_taps, rng,
                      cross_gain_db=-10.0) -> TwoCellGeometry:
    cross = 10.0 ** (cross_gain_db / 20.0)

    def eff(n_users, gain=1.0):
        if n_users == 0:
            return np.zeros((0, n_tx * n_sc), dtype=complex)
        cfg = SystemConfig(n_tx=n_tx, n_users=n_users, n_sc=n_sc,
                           n_taps=n_taps)
        ch = generate_channel(cfg, rng)
        return gain * EffectiveChannel(ch).dense()

    to_center = [[None, None], [None, None]]
    for k in range(2):
        for j in range(2):
            to_center[k][j] = eff(n_center, 1.0 if k == j else cross)
    to_edge = [eff(n_edge), eff(n_edge)]
    return TwoCellGeometry(to_center=to_center, to_edge=to_edge,
                           n_center=n_center, n_edge=n_edge, n_sc=n_sc,
                           n_tx=n_tx)


@dataclass
class CoordinationResult:
    scenario: CoordinationScenario
    per_cell_x: list            # transmit vector per cell
    rounded: list               # RoundingResult per solved program
    solutions: list             # SdrSolution per solved program
    feasible: bool


def _round_program(prob, chan, s, papr, delta, n_rand, rng, settings):
    sol = conic.solve_problem(prob, settings)
    if sol.status != "Optimal":
        raise conic.SolverError(
            f"{prob.metadata.get('family')} solve ended with {sol.status}")
    inst = P4Instance(channel=chan, symbols=s, papr=papr,
                      delta_e=float(delta), problem=prob)
    res = rounding.randomize(sol, n_rand, inst, rng)
    return sol, res


def coordinate(scenario: CoordinationScenario, geom: TwoCellGeometry,
               center_symbols, edge_symbols, papr: PaprConstraintSet,
               rng, n_rand: int = 500,
               settings: conic.SolverSettings | None = None
               ) -> CoordinationResult:
    """Solve and round the configured scenario on a two-cell layout.

    center_symbols: one SymbolVector per cell; edge_symbols: the shared
    group.  Coherent transmission serves the edge group from both cells
    with one waveform; fast selection serves each cell's own users (the
    serving cell also carries the edge group); interference coordination
    serves everyone jointly.
    """
    if scenario.m_cells != 2:
        raise ValueError("the dispatcher implements the two-cell layout")
    settings = settings or conic.SolverSettings()
    n_sc = geom.n_sc

    if scenario.kind == "coherent":
        prob, chan = build_coherent(
            geom.to_edge, edge_symbols.s, scenario.delta_c, papr, n_sc,
            robust_eps=scenario.robust_eps)
        sol, res = _round_program(prob, chan, edge_symbols, papr,
                                  scenario.delta_c, n_rand, rng, settings)
        return CoordinationResult(scenario=scenario,
                                  per_cell_x=[res.x_opt, res.x_opt],
                                  rounded=[res], solutions=[sol],
                                  feasible=res.feasible)

    if scenario.kind == "fast_selection":
        j = scenario.selected_cell
        cell_mats, cell_syms = [], []
        for k in range(2):
            if k == j:
                mat = np.concatenate([geom.to_center[k][k], geom.to_edge[k]])
                sym = np.concatenate([center_symbols[k].s, edge_symbols.s])
            else:
                mat = geom.to_center[k][k]
                sym = center_symbols[k].s
            cell_mats.append(mat)
            cell_syms.append(sym)
        edge_mats = [geom.to_edge[k] for k in range(2)]
        probs = build_fast_selection(cell_mats, cell_syms, edge_mats,
                                     scenario, papr, n_sc)
        sols, results, xs = [], [], []
        for k, prob in enumerate(probs):
            chan = MatrixChannel(mat=cell_mats[k], n_tx=geom.n_tx, n_sc=n_sc)
            sym = SymbolVector(s=cell_syms[k], constellation="16qam",
                               bits=np.zeros(0, dtype=np.int64))
            sol, res = _round_program(prob, chan, sym, papr,
                                      scenario.delta_e, n_rand, rng, settings)
            sols.append(sol)
            results.append(res)
            xs.append(res.x_opt)
        return CoordinationResult(scenario=scenario, per_cell_x=xs,
                                  rounded=results, solutions=sols,
                                  feasible=all(r.feasible for r in results))

    # interference coordination: one joint program over both cells
    full_by_cell = [
        np.concatenate([geom.to_center[k][0], geom.to_center[k][1],
                        geom.to_edge[k]])
        for k in range(2)]
    s_all = np.concatenate([center_symbols[0].s, center_symbols[1].s,
                            edge_symbols.s])
    prob, chan, papr_joint = build_interference_coordination(
        full_by_cell, s_all, scenario.delta_i, [papr, papr], n_sc,
        robust_eps=scenario.robust_eps)
    sym = SymbolVector(s=s_all, constellation="16qam",
                       bits=np.zeros(0, dtype=np.int64))
    sol, res = _round_program(prob, chan, sym, papr_joint,
                              scenario.delta_i, n_rand, rng, settings)
    n_x = geom.n_tx * n_sc
    xs = [res.x_opt[:n_x], res.x_opt[n_x:]]
    return CoordinationResult(scenario=scenario, per_cell_x=xs,
                              rounded=[res], solutions=[sol],
                              feasible=res.feasible)
