"""Experiment harness: configuration, Monte Carlo orchestration,
persistence, and plot-data emission.

Every experiment is a list of independent trials; each trial derives its
own RNG substream from (seed, trial index), so results are byte-identical
regardless of the worker count.  Rows are collected by trial index,
sorted, and written with round-trip float formatting.  Failed solves are
recorded with their status and excluded from aggregates; unless the
partial-failure policy is enabled they fail the run.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__, baselines, conic, multicell, robust, rounding
from .model import (EffectiveChannel, SystemConfig, demap_symbols,
                    generate_channel, map_symbols, random_symbols)
from .qcqp import (PaprConstraintSet, build_min_mui_given_power,
                   build_mui_matrix, make_p4, problem_to_json)
from .waveform import ccdf, clip, papr_db

EXPERIMENTS = ("mui_vs_antennas", "power_vs_nmae", "papr_ccdf",
               "violation_rate", "mui_vs_eps", "multicell_ser",
               "solver_regression")

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    system: SystemConfig = field(default_factory=SystemConfig)
    methods: tuple = ()
    n_channels: int = 1
    n_symbols: int = 1            # per channel
    n_randomizations: int = 500
    seed: int = 0
    workers: int = 1
    output_dir: str = "out"
    delta_e: float = 1e-4
    papr_target_db: float = 5.0
    nmae_grid: tuple = (0.25, 0.5, 1.0, 2.0)
    eps_grid: tuple = (0.05, 0.1)
    gamma_grid: tuple = (0.05,)
    snr_grid_db: tuple = (4.0, 8.0, 12.0, 16.0, 20.0)
    n_tx_grid: tuple = (4, 8, 12)
    power_cap_rel: float = 0.7    # fraction of the least-norm power
    power_cap_lin: float = 4.0    # absolute ||x||^2 cap (mui_vs_antennas)
    beta_s: float = 0.1
    pmp_lambda: float = 0.5
    pmp_tol: float = 1e-6
    sigma_eps_sq: float = 1e-3
    n_draws: int = 10000
    n_noise: int = 8              # noise draws per precoded symbol
    multicell: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    allow_failures: bool = False
    emit_problems: bool = False
    plots: bool = True

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; "
                             f"choose one of {EXPERIMENTS}")
        if self.n_channels < 1 or self.n_symbols < 1:
            raise ValueError("n_channels and n_symbols must be >= 1")
        for name in ("nmae_grid", "eps_grid", "gamma_grid", "snr_grid_db",
                     "n_tx_grid"):
            if len(getattr(self, name)) == 0:
                raise ValueError(f"{name} must not be empty")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def settings(self) -> conic.SolverSettings:
        return conic.SolverSettings(**self.solver)

    def to_json(self) -> str:
        doc = asdict(self)
        doc["schema"] = SCHEMA_VERSION
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        doc = json.loads(text)
        if doc.pop("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ValueError("unsupported config schema version")
        sys_doc = doc.pop("system", {})
        doc = {k: tuple(v) if isinstance(v, list) else v
               for k, v in doc.items()}
        return cls(system=SystemConfig(**sys_doc), **doc)


@dataclass
class RunRecord:
    config_hash: str
    experiment: str
    n_trials: int
    n_failed: int
    statuses: dict
    elapsed_s: float
    provenance: str
    outputs: dict


def trial_rng(seed: int, trial: int, kind: int = 0) -> np.random.Generator:
    """Deterministic per-(purpose, trial) substream, worker-independent.

    kind separates the independent random inputs of one trial: 0 symbols,
    1 channels, 2 uncertainty draws, 3 noise, 4 geometry.
    """
    return np.random.default_rng(np.random.SeedSequence(
        entropy=seed, spawn_key=(kind, trial)))


def wilson_interval(k: int, n: int, z: float = 1.96):
    if n == 0:
        return 0.0, 1.0
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _instance(cfg: ExperimentConfig, system: SystemConfig, rng,
              delta_e=None, alpha_db=None):
    ch = EffectiveChannel(generate_channel(system, rng))
    s = random_symbols(system, rng)
    papr = PaprConstraintSet.from_db(
        cfg.papr_target_db if alpha_db is None else alpha_db, system.n_tx)
    return make_p4(ch, s, papr, cfg.delta_e if delta_e is None else delta_e)


def _solve_round(inst, cfg, rng, settings=None):
    sol = conic.solve_problem(inst.problem, settings or cfg.settings())
    if sol.status != "Optimal":
        return sol, None
    res = rounding.randomize(sol, cfg.n_randomizations, inst, rng)
    return sol, res


def least_norm_power(inst) -> float:
    x = np.linalg.pinv(inst.channel.dense()) @ inst.symbols.s
    return float(np.vdot(x, x).real)


def min_mui_at_power(inst, power_cap, settings) -> float:
    """Smallest residual reachable under a transmit-power cap (delta_M)."""
    mui = build_mui_matrix(inst.channel, inst.symbols, inst.delta_e)
    prob = build_min_mui_given_power(inst.papr, mui, power_cap)
    sol = conic.solve_problem(prob, settings)
    if sol.status != "Optimal":
        raise conic.SolverError(f"power-capped solve: {sol.status}")
    return max(sol.objective, 0.0)


def nmae(delta_e: float, delta_m: float) -> float:
    """Normalized allowance: the residual budget over the capped optimum."""
    if delta_m <= 0:
        raise ValueError("delta_M must be positive")
    return delta_e / delta_m


# ---------------------------------------------------------------------------
# experiment: papr_ccdf
# ---------------------------------------------------------------------------

def _trial_papr_ccdf(cfg: ExperimentConfig, trial: int):
    system = cfg.system
    n_ch = cfg.n_channels
    ch_idx, sym_idx = divmod(trial, cfg.n_symbols)
    ch_rng = trial_rng(cfg.seed, ch_idx * cfg.n_symbols)
    ch = EffectiveChannel(generate_channel(system, ch_rng))
    rng = trial_rng(cfg.seed, trial)
    s = random_symbols(system, rng)
    papr = PaprConstraintSet.from_db(cfg.papr_target_db, system.n_tx)
    inst = make_p4(ch, s, papr, cfg.delta_e)
    methods = cfg.methods or ("none", "clip", "pmp", "sdr")
    settings = cfg.settings()
    rows = []
    base = None
    for method in methods:
        status, feasible, power, mui_val = "Optimal", True, np.nan, np.nan
        if method in ("none", "clip"):
            if base is None:
                base = baselines.min_power_no_papr(
                    ch, s, cfg.delta_e, n_rand=cfg.n_randomizations,
                    rng=rng, settings=settings)
            x = base.x
            if method == "clip":
                xm = x.reshape(system.n_tx, system.n_sc)
                x = np.concatenate([clip(xm[m], cfg.papr_target_db)
                                    for m in range(system.n_tx)])
            power = float(np.vdot(x, x).real)
            mui_val = float(np.linalg.norm(s.s - ch.apply(x)) ** 2)
        elif method == "pmp":
            r = baselines.pmp(ch, s, cfg.pmp_lambda, tol=cfg.pmp_tol)
            x, power, mui_val = r.x, r.objective, r.mui
        elif method == "sdr":
            sol, res = _solve_round(inst, cfg, rng, settings)
            if res is None:
                rows.append({"trial": trial, "channel": ch_idx,
                             "symbol": sym_idx, "method": method,
                             "papr_db": np.nan, "power": np.nan,
                             "mui": np.nan, "feasible": False,
                             "status": sol.status})
                continue
            x, power, mui_val, feasible = (res.x_opt, res.objective, res.mui,
                                           res.feasible)
        else:
            raise ValueError(f"unknown method {method!r}")
        x0 = x[:system.n_sc]  # first antenna
        rows.append({"trial": trial, "channel": ch_idx, "symbol": sym_idx,
                     "method": method,
                     "papr_db": papr_db(x0, system.oversample),
                     "power": power, "mui": mui_val, "feasible": feasible,
                     "status": status})
    return rows


def _aggregate_papr_ccdf(cfg, rows, outdir):
    methods = sorted({r["method"] for r in rows})
    table = {}
    for method in methods:
        samples = [r["papr_db"] for r in rows
                   if r["method"] == method and np.isfinite(r["papr_db"])]
        if samples:
            table[method] = ccdf(samples)
    path = os.path.join(outdir, "ccdf.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold_db"] + [f"ccdf_{m}" for m in methods])
        grid = next(iter(table.values())).thresholds_db
        for i, t in enumerate(grid):
            w.writerow([repr(float(t))] +
                       [repr(float(table[m].prob[i])) for m in methods])
    summary = {m: {"ccdf_at_1e-1": table[m].value_at(0.1),
                   "ccdf_at_1e-2": table[m].value_at(0.01),
                   "n_samples": table[m].n_samples} for m in table}
    return summary, {"ccdf_csv": path}


# ---------------------------------------------------------------------------
# experiment: power_vs_nmae
# ---------------------------------------------------------------------------

def _trial_power_vs_nmae(cfg: ExperimentConfig, trial: int):
    rng = trial_rng(cfg.seed, trial)
    inst = _instance(cfg, cfg.system, rng)
    settings = cfg.settings()
    cap = cfg.power_cap_rel * least_norm_power(inst)
    delta_m = min_mui_at_power(inst, cap, settings)
    rows = []
    for alpha in cfg.nmae_grid:
        delta_e = alpha * delta_m
        inst_a = make_p4(inst.channel, inst.symbols, inst.papr, delta_e)
        sol, res = _solve_round(inst_a, cfg, rng, settings)
        lower = baselines.build_no_papr_problem(inst.channel, inst.symbols,
                                                delta_e)
        sol_lb = conic.solve_problem(lower, settings)
        rows.append({
            "trial": trial, "nmae": alpha, "delta_e": delta_e,
            "delta_m": delta_m,
            "sdr_power": res.objective if res else np.nan,
            "sdr_feasible": bool(res.feasible) if res else False,
            "lower_bound_power": (sol_lb.objective - 1.0
                                  if sol_lb.status == "Optimal" else np.nan),
            "status": sol.status,
        })
    pmp_res = baselines.pmp(inst.channel, inst.symbols, cfg.pmp_lambda,
                            tol=cfg.pmp_tol)
    ce_res = baselines.constant_envelope(inst.channel, inst.symbols, rng=rng)
    for r in rows:
        r["pmp_power"] = pmp_res.objective
        r["pmp_nmae"] = pmp_res.mui * float(
            np.vdot(inst.symbols.s, inst.symbols.s).real) / r["delta_m"]
        r["ce_power"] = ce_res.objective
        r["ce_nmae"] = ce_res.mui * float(
            np.vdot(inst.symbols.s, inst.symbols.s).real) / r["delta_m"]
    return rows


def _aggregate_power_vs_nmae(cfg, rows, outdir):
    ok = [r for r in rows if r["sdr_feasible"]]
    mono = 0
    for t in {r["trial"] for r in rows}:
        tr = sorted((r for r in rows if r["trial"] == t),
                    key=lambda r: r["nmae"])
        powers = [r["sdr_power"] for r in tr]
        if all(np.isfinite(powers)) and \
                all(b <= a + 1e-9 for a, b in zip(powers, powers[1:])):
            mono += 1
    return {"n_rows": len(rows), "n_feasible": len(ok),
            "monotone_instances": mono,
            "n_instances": len({r["trial"] for r in rows})}, {}


# ---------------------------------------------------------------------------
# experiment: mui_vs_antennas
# ---------------------------------------------------------------------------

def _trial_mui_vs_antennas(cfg: ExperimentConfig, trial: int):
    n_grid = tuple(cfg.n_tx_grid)
    ch_idx, grid_idx = divmod(trial, len(n_grid))
    n_tx = n_grid[grid_idx]
    rng = trial_rng(cfg.seed, trial)
    system = replace(cfg.system, n_tx=n_tx)
    ch = EffectiveChannel(generate_channel(system, rng))
    s = random_symbols(system, rng)
    papr = PaprConstraintSet.from_db(cfg.papr_target_db, n_tx)
    mui = build_mui_matrix(ch, s, 1.0)
    prob = build_min_mui_given_power(papr, mui, cfg.power_cap_lin)
    sol = conic.solve_problem(prob, cfg.settings())
    s_energy = float(np.vdot(s.s, s.s).real)
    row = {"trial": trial, "channel": ch_idx, "n_tx": n_tx,
           "status": sol.status, "sdr_mui": np.nan, "tin_mui": np.nan}
    if sol.status == "Optimal":
        inst = make_p4(ch, s, papr, max(sol.objective, 1e-12) * 1.01)
        res = rounding.randomize(sol, cfg.n_randomizations, inst, rng)
        row["sdr_mui"] = res.mui
    # matched-filter reference at the same transmit power: interference
    # is left untreated at the receivers
    h = ch.dense()
    x_mf = h.conj().T @ s.s
    x_mf *= np.sqrt(cfg.power_cap_lin) / np.linalg.norm(x_mf)
    row["tin_mui"] = float(np.linalg.norm(s.s - h @ x_mf) ** 2 / s_energy)
    return [row]


def _aggregate_mui_vs_antennas(cfg, rows, outdir):
    out = {}
    for n_tx in cfg.n_tx_grid:
        sel = [r for r in rows if r["n_tx"] == n_tx
               and np.isfinite(r["sdr_mui"])]
        out[str(n_tx)] = {
            "mean_sdr_mui": float(np.mean([r["sdr_mui"] for r in sel]))
            if sel else np.nan,
            "mean_tin_mui": float(np.mean([r["tin_mui"] for r in sel]))
            if sel else np.nan,
            "n": len(sel)}
    return out, {}


# ---------------------------------------------------------------------------
# experiment: violation_rate
# ---------------------------------------------------------------------------

def _trial_violation_rate(cfg: ExperimentConfig, trial: int):
    rng = trial_rng(cfg.seed, trial)
    inst = _instance(cfg, cfg.system, rng)
    settings = cfg.settings()
    model_g = robust.UncertaintyModel(kind="stochastic",
                                      r_eps=cfg.sigma_eps_sq, gamma=1.0)
    rows = []
    sol, res = _solve_round(inst, cfg, rng, settings)
    if res is not None:
        rate = robust.violation_rate(res.x_opt, inst, model_g, cfg.n_draws,
                                     trial_rng(cfg.seed + 7919, trial))
        rows.append({"trial": trial, "target_papr_db": cfg.papr_target_db,
                     "method": "nonrobust", "gamma": np.nan, "rate": rate,
                     "status": sol.status})
    else:
        rows.append({"trial": trial, "target_papr_db": cfg.papr_target_db,
                     "method": "nonrobust", "gamma": np.nan, "rate": np.nan,
                     "status": sol.status})
    for gamma in cfg.gamma_grid:
        prob = robust.build_bernstein(inst, cfg.sigma_eps_sq, gamma)
        solb = conic.solve_problem(prob, settings)
        if solb.status != "Optimal":
            rows.append({"trial": trial,
                         "target_papr_db": cfg.papr_target_db,
                         "method": "bernstein", "gamma": gamma,
                         "rate": np.nan, "status": solb.status})
            continue
        resb = rounding.randomize(solb, cfg.n_randomizations, inst,
                                  rng)
        rate = robust.violation_rate(resb.x_opt, inst, model_g, cfg.n_draws,
                                     trial_rng(cfg.seed + 7919, trial))
        rows.append({"trial": trial, "target_papr_db": cfg.papr_target_db,
                     "method": "bernstein", "gamma": gamma, "rate": rate,
                     "status": solb.status})
    return rows


def _aggregate_violation_rate(cfg, rows, outdir):
    path = os.path.join(outdir, "violation_rates.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["target_papr_db", "method", "rate"])
        for method in ("nonrobust", "bernstein"):
            sel = [r["rate"] for r in rows if r["method"] == method
                   and np.isfinite(r["rate"])]
            if sel:
                w.writerow([repr(float(cfg.papr_target_db)), method,
                            repr(float(np.mean(sel)))])
    agg = {}
    for method in ("nonrobust", "bernstein"):
        sel = [r["rate"] for r in rows if r["method"] == method
               and np.isfinite(r["rate"])]
        agg[method] = {"mean_rate": float(np.mean(sel)) if sel else np.nan,
                       "n": len(sel)}
    return agg, {"rates_csv": path}


# ---------------------------------------------------------------------------
# experiment: mui_vs_eps
# ---------------------------------------------------------------------------

def _trial_mui_vs_eps(cfg: ExperimentConfig, trial: int):
    n_eps = len(cfg.eps_grid)
    ch_idx, eps_idx = divmod(trial, n_eps)
    eps = cfg.eps_grid[eps_idx]
    rng = trial_rng(cfg.seed, ch_idx)
    inst = _instance(cfg, cfg.system, rng)
    settings = cfg.settings()
    model_b = robust.UncertaintyModel(kind="bounded", eps_h=eps)
    draw_rng = trial_rng(cfg.seed + 104729, trial)
    deltas = robust.sample_bounded_errors(inst.channel.n_s, inst.channel.n_x,
                                          eps, cfg.n_draws, draw_rng)
    s_energy = float(np.vdot(inst.symbols.s, inst.symbols.s).real)
    rows = []

    def audit(x, method, status="Optimal", power=np.nan):
        q = robust.residual_quadratics(x, inst, deltas)
        rows.append({"trial": trial, "channel": ch_idx, "eps_h": eps,
                     "method": method,
                     "mui_mean": float(np.mean(q)) / s_energy,
                     "mui_worst": float(np.max(q)) / s_energy,
                     "violations": float(np.mean(q > inst.delta_e)),
                     "power": power, "status": status})

    r_pmp = baselines.pmp(inst.channel, inst.symbols, cfg.pmp_lambda,
                          tol=cfg.pmp_tol)
    audit(r_pmp.x, "pmp", power=r_pmp.objective)
    sol, res = _solve_round(inst, cfg, rng, settings)
    if res is not None:
        audit(res.x_opt, "nonrobust", power=res.objective)
    for method, builder in (("coarse", robust.build_coarse),
                            ("sproc", robust.build_sproc)):
        prob = builder(inst, eps)
        solr = conic.solve_problem(prob, settings)
        if solr.status != "Optimal":
            rows.append({"trial": trial, "channel": ch_idx, "eps_h": eps,
                         "method": method, "mui_mean": np.nan,
                         "mui_worst": np.nan, "violations": np.nan,
                         "power": np.nan, "status": solr.status})
            continue
        resr = rounding.randomize(solr, cfg.n_randomizations, inst, rng)
        audit(resr.x_opt, method, status=solr.status, power=resr.objective)
    return rows


def _aggregate_mui_vs_eps(cfg, rows, outdir):
    agg = {}
    for eps in cfg.eps_grid:
        agg[str(eps)] = {}
        for method in ("pmp", "nonrobust", "coarse", "sproc"):
            sel = [r for r in rows if r["method"] == method
                   and r["eps_h"] == eps and np.isfinite(r["mui_worst"])]
            agg[str(eps)][method] = {
                "mean_mui_worst": float(np.mean([r["mui_worst"]
                                                 for r in sel]))
                if sel else np.nan,
                "n": len(sel)}
    return agg, {}


# ---------------------------------------------------------------------------
# experiment: multicell_ser
# ---------------------------------------------------------------------------

def _mc_params(cfg: ExperimentConfig):
    mc = {"n_tx": 4, "n_sc": 4, "n_center": 1, "n_edge": 2, "n_taps": 2,
          "delta_scale": 1.0, "robust": (False,), "robust_eps": 0.05,
          "n_rand": 300}
    mc.update(cfg.multicell)
    return mc


def _mc_scenarios(cfg, mc, robust_flag):
    eps = mc["robust_eps"] if robust_flag else None
    delta = cfg.delta_e * mc["delta_scale"]
    return {
        "CT": multicell.CoordinationScenario(
            kind="coherent", m_cells=2, delta_c=delta, robust_eps=eps),
        "FS": multicell.CoordinationScenario(
            kind="fast_selection", m_cells=2, delta_e=delta,
            beta_s=cfg.beta_s, selected_cell=0, robust_eps=eps),
        "IC": multicell.CoordinationScenario(
            kind="interference", m_cells=2, delta_i=delta, robust_eps=eps),
    }


def _trial_multicell_ser(cfg: ExperimentConfig, trial: int):
    mc = _mc_params(cfg)
    geom = multicell.generate_two_cell(
        mc["n_tx"], mc["n_sc"], mc["n_center"], mc["n_edge"], mc["n_taps"],
        trial_rng(cfg.seed, 0))
    rng = trial_rng(cfg.seed, trial + 1)
    sys_c = SystemConfig(n_tx=mc["n_tx"], n_users=max(mc["n_center"], 1),
                         n_sc=mc["n_sc"], n_taps=mc["n_taps"],
                         modulation=cfg.system.modulation)
    sys_e = SystemConfig(n_tx=mc["n_tx"], n_users=mc["n_edge"],
                         n_sc=mc["n_sc"], n_taps=mc["n_taps"],
                         modulation=cfg.system.modulation)
    c_syms = [random_symbols(sys_c, rng), random_symbols(sys_c, rng)]
    e_syms = random_symbols(sys_e, rng)
    papr = PaprConstraintSet.from_db(cfg.papr_target_db, mc["n_tx"])
    rows = []
    noise_rng = trial_rng(cfg.seed + 15485863, trial)
    for robust_flag in mc["robust"]:
        scenarios = _mc_scenarios(cfg, mc, robust_flag)
        for name, scenario in scenarios.items():
            try:
                res = multicell.coordinate(scenario, geom, c_syms, e_syms,
                                           papr, rng, n_rand=mc["n_rand"],
                                           settings=cfg.settings())
            except conic.SolverError as exc:
                rows.append({"trial": trial, "scenario": name,
                             "robust": robust_flag, "snr_db": np.nan,
                             "errors": 0, "decisions": 0,
                             "status": str(exc)})
                continue
            served = _served_signals(name, scenario, geom, res, c_syms,
                                     e_syms)
            for snr_db in cfg.snr_grid_db:
                sigma = np.sqrt(10.0 ** (-snr_db / 10.0))
                worst_err, worst_n = 0, 0
                for y_clean, bits, n_users in served:
                    errs, total = _count_symbol_errors(
                        y_clean, bits, n_users, sigma, cfg.n_noise,
                        noise_rng, cfg.system.modulation)
                    # worst user decided per scenario: track max rate
                    for u in range(n_users):
                        if total[u] and errs[u] / total[u] >= \
                                (worst_err / worst_n if worst_n else -1.0):
                            worst_err, worst_n = errs[u], total[u]
                rows.append({"trial": trial, "scenario": name,
                             "robust": robust_flag, "snr_db": snr_db,
                             "errors": int(worst_err),
                             "decisions": int(worst_n),
                             "status": "Optimal"})
    return rows


def _served_signals(name, scenario, geom, res, c_syms, e_syms):
    """(noiseless received vector, source bits, n_users) per user group."""
    out = []
    if name == "CT":
        y = (geom.to_edge[0] + geom.to_edge[1]) @ res.per_cell_x[0]
        out.append((y, e_syms, geom.n_edge))
        return out
    x0, x1 = res.per_cell_x
    if name == "FS":
        j = scenario.selected_cell
        xs = [x0, x1]
        for k in range(2):
            y = geom.to_center[0][k] @ x0 + geom.to_center[1][k] @ x1
            out.append((y, c_syms[k], geom.n_center))
        y_e = geom.to_edge[0] @ x0 + geom.to_edge[1] @ x1
        out.append((y_e, e_syms, geom.n_edge))
        return out
    # IC: everyone served by the joint design
    for k in range(2):
        y = geom.to_center[0][k] @ x0 + geom.to_center[1][k] @ x1
        out.append((y, c_syms[k], geom.n_center))
    y_e = geom.to_edge[0] @ x0 + geom.to_edge[1] @ x1
    out.append((y_e, e_syms, geom.n_edge))
    return out


def _count_symbol_errors(y_clean, syms, n_users, sigma, n_noise, rng,
                         modulation):
    """Per-user symbol-error counts over repeated noise draws."""
    n_total = y_clean.shape[0]
    n_sc = n_total // n_users
    k = len(syms.bits) // max(len(syms.s), 1)
    errs = np.zeros(n_users, dtype=int)
    total = np.zeros(n_users, dtype=int)
    bits_ref = syms.bits.reshape(len(syms.s), k)
    for _ in range(n_noise):
        noise = sigma / np.sqrt(2.0) * (
            rng.standard_normal(n_total) + 1j * rng.standard_normal(n_total))
        bits_hat = demap_symbols(y_clean + noise, modulation).reshape(
            len(syms.s), k)
        wrong = np.any(bits_hat != bits_ref, axis=1).reshape(n_sc, n_users)
        errs += wrong.sum(axis=0)
        total += n_sc
    return errs, total


def _aggregate_multicell_ser(cfg, rows, outdir):
    path = os.path.join(outdir, "ser.csv")
    agg = {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["snr_db", "scenario", "robust", "ser", "ci_lo", "ci_hi",
                    "decisions"])
        for scen in ("CT", "FS", "IC"):
            for robust_flag in (False, True):
                for snr in cfg.snr_grid_db:
                    sel = [r for r in rows if r["scenario"] == scen
                           and r["robust"] == robust_flag
                           and r["snr_db"] == snr]
                    if not sel:
                        continue
                    k = sum(r["errors"] for r in sel)
                    n = sum(r["decisions"] for r in sel)
                    if n == 0:
                        continue
                    lo, hi = wilson_interval(k, n)
                    w.writerow([repr(float(snr)), scen, int(robust_flag),
                                repr(k / n), repr(lo), repr(hi), n])
                    agg[f"{scen}:{int(robust_flag)}:{snr}"] = {
                        "ser": k / n, "ci": [lo, hi], "n": n}
    return agg, {"ser_csv": path}


# ---------------------------------------------------------------------------
# experiment: solver_regression
# ---------------------------------------------------------------------------

def analytic_fixture_battery(seed: int = 0):
    """Tiny problems with closed-form optima for solver regression."""
    from .qcqp import (Block, DenseTerm, DiagTerm, GramTerm, LpTerm, Row,
                       SdrProblem, AffineExpr, SocRow)
    rng = np.random.default_rng(seed)
    fixtures = []

    def lam_min(dim, domain, tag):
        if domain == "symmetric":
            a = rng.standard_normal((dim, dim))
            c = 0.5 * (a + a.T)
        else:
            a = rng.standard_normal((dim, dim)) \
                + 1j * rng.standard_normal((dim, dim))
            c = 0.5 * (a + a.conj().T)
        prob = SdrProblem(
            blocks=(Block(dim, domain),),
            objective=(DenseTerm(0, c),),
            rows=(Row("tr", "eq", 1.0, (DiagTerm(0, np.ones(dim)),)),),
            metadata={"fixture": tag})
        return prob, float(np.linalg.eigvalsh(c)[0])

    for i, dim in enumerate((2, 3, 4, 5, 6)):
        fixtures.append((f"lmin_real_{dim}",) + lam_min(dim, "symmetric",
                                                        f"lmin_real_{dim}"))
    for i, dim in enumerate((2, 3, 4, 5)):
        fixtures.append((f"lmin_herm_{dim}",) + lam_min(dim, "hermitian",
                                                        f"lmin_herm_{dim}"))
    for dim in (2, 4, 6):
        d = np.zeros(dim)
        d[-1] = 1.0
        prob = SdrProblem(
            blocks=(Block(dim, "symmetric"),),
            objective=(DiagTerm(0, np.ones(dim)),),
            rows=(Row("homog", "eq", 1.0, (DiagTerm(0, d),)),),
            metadata={"fixture": f"pin_{dim}"})
        fixtures.append((f"pin_{dim}", prob, 1.0))
    for dim in (3, 4, 5):
        a = rng.standard_normal((dim, dim))
        a = a @ a.T
        prob = SdrProblem(
            blocks=(Block(dim, "symmetric"),),
            objective=(DiagTerm(0, np.ones(dim)),),
            rows=(Row("cov", "ge", 1.0, (DenseTerm(0, a),)),),
            metadata={"fixture": f"rank1_{dim}"})
        fixtures.append((f"rank1_{dim}", prob,
                         1.0 / float(np.linalg.eigvalsh(a)[-1])))
    # least norm under an exact-fit Gram row: min Tr(X) s.t. <vv^H, X> >= 1
    for dim in (3, 5):
        v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        prob = SdrProblem(
            blocks=(Block(dim, "hermitian"),),
            objective=(DiagTerm(0, np.ones(dim)),),
            rows=(Row("fit", "ge", 1.0,
                      (GramTerm(0, v[None, :].conj()),)),),
            metadata={"fixture": f"gram_{dim}"})
        fixtures.append((f"gram_{dim}", prob,
                         1.0 / float(np.vdot(v, v).real)))
    # SOC chains with pinned targets
    for k in (2, 5, 9):
        z0 = rng.standard_normal(k)
        prob = SdrProblem(
            blocks=(), objective=(LpTerm(0, 1.0),), rows=(),
            lp_dim=1, lp_names=("t",),
            soc_rows=(SocRow("soc", AffineExpr(terms=(LpTerm(0, 1.0),)),
                             tuple(AffineExpr(const=float(v))
                                   for v in z0)),),
            metadata={"fixture": f"soc_{k}"})
        fixtures.append((f"soc_{k}", prob, float(np.linalg.norm(z0))))
    # LP-only: min c'x s.t. sum x = 1, x >= 0  ->  min(c)
    for dim in (3, 6):
        c = rng.standard_normal(dim)
        prob = SdrProblem(
            blocks=(), objective=tuple(LpTerm(i, c[i]) for i in range(dim)),
            rows=(Row("simplex", "eq", 1.0,
                      tuple(LpTerm(i, 1.0) for i in range(dim))),),
            lp_dim=dim, lp_names=tuple(f"x{i}" for i in range(dim)),
            metadata={"fixture": f"lp_{dim}"})
        fixtures.append((f"lp_{dim}", prob, float(np.min(c))))
    return fixtures


def _trial_solver_regression(cfg: ExperimentConfig, trial: int):
    fixtures = analytic_fixture_battery(cfg.seed)
    name, prob, expected = fixtures[trial]
    settings = cfg.settings()
    t0 = time.perf_counter()
    sol = conic.solve_problem(prob, settings)
    dt = time.perf_counter() - t0
    err = abs(sol.objective - expected) / max(1.0, abs(expected))
    return [{"trial": trial, "fixture": name, "expected": expected,
             "objective": sol.objective, "rel_error": err,
             "iterations": sol.iterations, "runtime_s": dt,
             "status": sol.status,
             "passed": bool(sol.status == "Optimal" and err <= 1e-6
                            and dt < 1.0)}]


def _aggregate_solver_regression(cfg, rows, outdir):
    n_pass = sum(1 for r in rows if r["passed"])
    return {"n_fixtures": len(rows), "n_passed": n_pass,
            "max_rel_error": float(max(r["rel_error"] for r in rows)),
            "max_runtime_s": float(max(r["runtime_s"] for r in rows))}, {}


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

_TRIAL_FUNCS = {
    "papr_ccdf": _trial_papr_ccdf,
    "power_vs_nmae": _trial_power_vs_nmae,
    "mui_vs_antennas": _trial_mui_vs_antennas,
    "violation_rate": _trial_violation_rate,
    "mui_vs_eps": _trial_mui_vs_eps,
    "multicell_ser": _trial_multicell_ser,
    "solver_regression": _trial_solver_regression,
}

_AGGREGATORS = {
    "papr_ccdf": _aggregate_papr_ccdf,
    "power_vs_nmae": _aggregate_power_vs_nmae,
    "mui_vs_antennas": _aggregate_mui_vs_antennas,
    "violation_rate": _aggregate_violation_rate,
    "mui_vs_eps": _aggregate_mui_vs_eps,
    "multicell_ser": _aggregate_multicell_ser,
    "solver_regression": _aggregate_solver_regression,
}


def n_trials(cfg: ExperimentConfig) -> int:
    if cfg.experiment == "papr_ccdf":
        return cfg.n_channels * cfg.n_symbols
    if cfg.experiment == "power_vs_nmae":
        return cfg.n_channels
    if cfg.experiment == "mui_vs_antennas":
        return cfg.n_channels * len(cfg.n_tx_grid)
    if cfg.experiment == "violation_rate":
        return cfg.n_channels
    if cfg.experiment == "mui_vs_eps":
        return cfg.n_channels * len(cfg.eps_grid)
    if cfg.experiment == "multicell_ser":
        return cfg.n_symbols
    if cfg.experiment == "solver_regression":
        return len(analytic_fixture_battery(cfg.seed))
    raise ValueError(cfg.experiment)


def _worker(args):
    cfg_json, trial = args
    cfg = ExperimentConfig.from_json(cfg_json)
    return trial, _TRIAL_FUNCS[cfg.experiment](cfg, trial)


def run(cfg: ExperimentConfig, verbose: bool = False) -> RunRecord:
    t0 = time.perf_counter()
    outdir = cfg.output_dir
    os.makedirs(outdir, exist_ok=True)
    os.makedirs(os.path.join(outdir, "plots"), exist_ok=True)
    total = n_trials(cfg)
    tasks = [(cfg.to_json(), k) for k in range(total)]
    results = {}
    if cfg.workers == 1:
        for task in tasks:
            k, rows = _worker(task)
            results[k] = rows
            if verbose:
                print(f"trial {k + 1}/{total} done")
    else:
        import multiprocessing as mp

        with mp.get_context("spawn").Pool(cfg.workers) as pool:
            for k, rows in pool.imap_unordered(_worker, tasks):
                results[k] = rows
                if verbose:
                    print(f"trial {k + 1}/{total} done")
    rows = [r for k in sorted(results) for r in results[k]]

    csv_path = os.path.join(outdir, "results.csv")
    if rows:
        cols = list(rows[0].keys())
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in rows:
                w.writerow([_fmt(r.get(c)) for c in cols])

    statuses = {}
    for r in rows:
        st = str(r.get("status", "Optimal"))
        statuses[st] = statuses.get(st, 0) + 1
    n_failed = sum(v for k, v in statuses.items() if k != "Optimal")

    agg, outputs = _AGGREGATORS[cfg.experiment](cfg, rows, outdir)
    outputs["results_csv"] = csv_path

    if cfg.emit_problems:
        outputs["problems_dir"] = _emit_problems(cfg, outdir)
    if cfg.plots:
        try:
            plot_path = _plot(cfg, rows, outdir)
            if plot_path:
                outputs["plot"] = plot_path
        except Exception as exc:  # plotting must never fail a run
            outputs["plot_error"] = str(exc)

    record = RunRecord(
        config_hash=hashlib.sha256(cfg.to_json().encode()).hexdigest()[:16],
        experiment=cfg.experiment, n_trials=total, n_failed=n_failed,
        statuses=statuses, elapsed_s=time.perf_counter() - t0,
        provenance=f"paprsdr {__version__} numpy {np.__version__}",
        outputs=outputs)
    summary = {"record": asdict(record), "aggregates": agg,
               "config": json.loads(cfg.to_json())}
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=_json_default)
    if n_failed and not cfg.allow_failures:
        raise conic.SolverError(
            f"{n_failed} trial(s) did not converge; rerun with "
            f"allow_failures to keep partial results")
    return record


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _emit_problems(cfg: ExperimentConfig, outdir: str) -> str:
    pdir = os.path.join(outdir, "problems")
    os.makedirs(pdir, exist_ok=True)
    rng = trial_rng(cfg.seed, 0)
    inst = _instance(cfg, cfg.system, rng)
    with open(os.path.join(pdir, "p4_trial0.json"), "w") as fh:
        fh.write(problem_to_json(inst.problem))
    for name, prob, expected in analytic_fixture_battery(cfg.seed)[:6]:
        with open(os.path.join(pdir, f"{name}.json"), "w") as fh:
            fh.write(problem_to_json(prob))
    return pdir


def _plot(cfg: ExperimentConfig, rows, outdir: str):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = os.path.join(outdir, "plots", f"{cfg.experiment}.svg")
    fig, ax = plt.subplots(figsize=(6, 4))
    if cfg.experiment == "papr_ccdf":
        methods = sorted({r["method"] for r in rows})
        for m in methods:
            samples = [r["papr_db"] for r in rows if r["method"] == m
                       and np.isfinite(r["papr_db"])]
            if not samples:
                continue
            curve = ccdf(samples)
            ax.semilogy(curve.thresholds_db, np.maximum(curve.prob, 1e-12),
                        label=m)
        ax.set_xlabel("PAPR threshold (dB)")
        ax.set_ylabel("CCDF")
        ax.set_ylim(1e-3, 1.1)
    elif cfg.experiment == "power_vs_nmae":
        for t in sorted({r["trial"] for r in rows}):
            tr = sorted((r for r in rows if r["trial"] == t),
                        key=lambda r: r["nmae"])
            ax.plot([r["nmae"] for r in tr], [r["sdr_power"] for r in tr],
                    alpha=0.5)
        ax.set_xlabel("normalized residual allowance")
        ax.set_ylabel("transmit power")
    elif cfg.experiment == "mui_vs_antennas":
        for key in ("sdr_mui", "tin_mui"):
            xs, ys = [], []
            for n_tx in cfg.n_tx_grid:
                sel = [r[key] for r in rows if r["n_tx"] == n_tx
                       and np.isfinite(r[key])]
                if sel:
                    xs.append(n_tx)
                    ys.append(np.mean(sel))
            ax.semilogy(xs, ys, marker="o", label=key)
        ax.set_xlabel("transmit antennas")
        ax.set_ylabel("mean MUI")
    elif cfg.experiment == "multicell_ser":
        for scen in ("CT", "FS", "IC"):
            for rf in (False, True):
                pts = {}
                for r in rows:
                    if r["scenario"] == scen and r["robust"] == rf \
                            and r["decisions"]:
                        key = r["snr_db"]
                        e, n = pts.get(key, (0, 0))
                        pts[key] = (e + r["errors"], n + r["decisions"])
                if not pts:
                    continue
                xs = sorted(pts)
                ys = [max(pts[x][0] / pts[x][1], 1e-6) for x in xs]
                ax.semilogy(xs, ys, marker="o",
                            label=f"{scen}{' robust' if rf else ''}")
        ax.set_xlabel("SNR (dB)")
        ax.set_ylabel("worst-case SER")
    else:
        plt.close(fig)
        return None
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def default_config(experiment: str, **overrides) -> ExperimentConfig:
    """Desk-scale defaults per experiment."""
    base = dict(experiment=experiment)
    if experiment == "papr_ccdf":
        base.update(system=SystemConfig(), n_channels=5, n_symbols=100,
                    solver={"tol_gap": 1e-5, "tol_feas": 1e-7})
    elif experiment == "power_vs_nmae":
        base.update(system=SystemConfig(n_tx=4, n_users=1, n_sc=8, n_taps=3),
                    n_channels=20)
    elif experiment == "mui_vs_antennas":
        base.update(system=SystemConfig(n_users=2, n_sc=8, n_taps=3),
                    n_channels=50, power_cap_lin=4.0,
                    solver={"tol_gap": 1e-6, "tol_feas": 1e-8})
    elif experiment == "violation_rate":
        base.update(system=SystemConfig(n_tx=2, n_users=1, n_sc=4, n_taps=2),
                    n_channels=10, delta_e=0.05, gamma_grid=(0.02, 0.05))
    elif experiment == "mui_vs_eps":
        base.update(system=SystemConfig(n_tx=3, n_users=1, n_sc=4, n_taps=2),
                    n_channels=10, delta_e=0.05)
    elif experiment == "multicell_ser":
        base.update(system=SystemConfig(), n_symbols=40, delta_e=1e-2,
                    snr_grid_db=(4.0, 8.0, 12.0, 16.0, 20.0))
    elif experiment == "solver_regression":
        base.update(system=SystemConfig(n_tx=2, n_users=1, n_sc=4, n_taps=2))
    base.update(overrides)
    return ExperimentConfig(**base)
