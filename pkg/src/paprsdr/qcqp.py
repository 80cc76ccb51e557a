"""Constraint builders for the precoding programs and the generic conic
problem container the solver consumes.

A problem is a list of PSD blocks (complex Hermitian or real symmetric), a
bank of nonnegative scalar variables, and rows that pair structured matrix
data with senses.  Matrix data is kept structured -- diagonal, Gram
(coef * V^H V), sparse COO, or dense -- because the per-antenna peak rows
are diagonal and the residual row is a low-rank Gram form; the solver
exploits exactly these shapes, and none of the peak rows is ever
materialized densely.

The per-antenna peak row for sample i of antenna m encodes

    |x_m[i]|^2 - (alpha_m / n_sc) ||x_m||^2 <= 0,

and the residual row encodes ||s - Hx||^2 <= delta_e through the lifted
vector [x; 1].  ``realify`` maps every Hermitian datum A to the symmetric
[[Re A, -Im A], [Im A, Re A]]; mapped traces are exactly twice the complex
ones, so right-hand sides (and coefficients of scalar variables) are
doubled and the factor recorded for readback.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .model import EffectiveChannel, SymbolVector


# ---------------------------------------------------------------------------
# structured matrix terms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiagTerm:
    """A = diag(vec); vec is real even in the complex domain."""
    block: int
    vec: np.ndarray

    def dense(self, dim):
        return np.diag(self.vec.astype(complex))


@dataclass(frozen=True)
class SparseTerm:
    """A = sum_a vv[a] e_{ii[a]} e_{jj[a]}^H; entries must make A Hermitian."""
    block: int
    ii: np.ndarray
    jj: np.ndarray
    vv: np.ndarray

    def dense(self, dim):
        a = np.zeros((dim, dim), dtype=complex)
        np.add.at(a, (self.ii, self.jj), self.vv)
        return a


@dataclass(frozen=True)
class GramTerm:
    """A = coef * V^H V for a rectangular factor V."""
    block: int
    factor: np.ndarray
    coef: float = 1.0

    def dense(self, dim):
        return self.coef * (self.factor.conj().T @ self.factor)


@dataclass(frozen=True)
class DenseTerm:
    block: int
    mat: np.ndarray

    def dense(self, dim):
        return np.asarray(self.mat, dtype=complex)


@dataclass(frozen=True)
class LpTerm:
    """coef * (scalar variable idx) contribution to a row value."""
    idx: int
    coef: float


MatrixTerm = (DiagTerm, SparseTerm, GramTerm, DenseTerm)


@dataclass(frozen=True)
class Row:
    name: str
    sense: str               # "le", "ge", or "eq"
    b: float
    terms: tuple

    def __post_init__(self):
        if self.sense not in ("le", "ge", "eq"):
            raise ValueError(f"bad sense {self.sense!r}")


@dataclass(frozen=True)
class AffineExpr:
    """const + sum of term values; scalar building block of cone rows."""
    terms: tuple = ()
    const: float = 0.0


@dataclass(frozen=True)
class SocRow:
    """||z|| <= t with t and every z component affine in the variables."""
    name: str
    t: AffineExpr
    z: tuple  # of AffineExpr


@dataclass(frozen=True)
class Block:
    dim: int
    domain: str  # "hermitian" or "symmetric"

    def __post_init__(self):
        if self.domain not in ("hermitian", "symmetric"):
            raise ValueError(f"bad block domain {self.domain!r}")


@dataclass(frozen=True)
class SdrProblem:
    """Conic program: min <objective, X> over PSD blocks + scalar bank."""
    blocks: tuple                 # of Block
    objective: tuple              # matrix/Lp terms
    rows: tuple                   # of Row
    lp_dim: int = 0
    lp_names: tuple = ()
    soc_rows: tuple = ()
    metadata: dict = field(default_factory=dict)
    scale: float = 1.0            # trace scale relative to the source problem

    @property
    def domain(self) -> str:
        return "complex" if any(b.domain == "hermitian" for b in self.blocks) \
            else "real"

    def row(self, name: str) -> Row:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)


# ---------------------------------------------------------------------------
# entry helpers (values of Hermitian-datum traces)
# ---------------------------------------------------------------------------

def re_entry(i, j, coef=1.0):
    """COO entries with Tr(A X) = coef * Re(X_ij)."""
    if i == j:
        return [(i, i, coef)]
    return [(i, j, 0.5 * coef), (j, i, 0.5 * coef)]


def im_entry(i, j, coef=1.0):
    """COO entries with Tr(A X) = coef * Im(X_ij) (needs i != j)."""
    return [(i, j, 0.5j * coef), (j, i, -0.5j * coef)]


def re_linear(weights, col, coef=1.0):
    """COO entries with Tr(A X) = coef * Re(sum_t w_t X[t, col])."""
    out = []
    for t, w in enumerate(weights):
        if w == 0:
            continue
        out.append((col, t, 0.5 * coef * w))
        out.append((t, col, 0.5 * coef * np.conj(w)))
    return out


def im_linear(weights, col, coef=1.0):
    """COO entries with Tr(A X) = coef * Im(sum_t w_t X[t, col])."""
    out = []
    for t, w in enumerate(weights):
        if w == 0:
            continue
        out.append((col, t, -0.5j * coef * w))
        out.append((t, col, 0.5j * coef * np.conj(w)))
    return out


def sparse_term(block, entries):
    ii = np.array([e[0] for e in entries], dtype=np.int64)
    jj = np.array([e[1] for e in entries], dtype=np.int64)
    vv = np.array([e[2] for e in entries])
    return SparseTerm(block=block, ii=ii, jj=jj, vv=vv)


# ---------------------------------------------------------------------------
# lifted vectors and row evaluation (used by tests and rounding audits)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LiftedVector:
    """x with the homogenization entry pinned to one."""
    x: np.ndarray

    @property
    def full(self) -> np.ndarray:
        return np.concatenate([self.x, [1.0 + 0.0j]])


def term_value(term, block_vecs, lp_vals):
    """Value of one term at rank-one block points x (vectors) + scalars."""
    if isinstance(term, LpTerm):
        return term.coef * lp_vals[term.idx]
    x = block_vecs[term.block]
    if isinstance(term, DiagTerm):
        return float(np.real(np.sum(term.vec * np.abs(x) ** 2)))
    if isinstance(term, SparseTerm):
        return float(np.real(np.sum(term.vv * np.conj(x[term.ii]) * x[term.jj])))
    if isinstance(term, GramTerm):
        v = term.factor @ x
        return float(term.coef * np.real(np.vdot(v, v)))
    if isinstance(term, DenseTerm):
        return float(np.real(np.conj(x) @ (term.mat @ x)))
    raise TypeError(type(term))


def evaluate_rows(problem: SdrProblem, block_vecs, lp_vals=None):
    """Row values at rank-one points X_b = x_b x_b^H; returns {name: value}."""
    lp_vals = np.zeros(problem.lp_dim) if lp_vals is None else lp_vals
    out = {}
    for row in problem.rows:
        out[row.name] = sum(term_value(t, block_vecs, lp_vals)
                            for t in row.terms)
    return out


# ---------------------------------------------------------------------------
# builders for the nominal program
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PaprConstraintSet:
    """Per-antenna PAPR caps in linear scale; each must exceed one."""
    alpha: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.alpha) <= 1.0):
            raise ValueError(
                "PAPR caps must be > 1 (a cap of exactly 1 forces constant "
                "modulus and leaves the feasible set without interior)")

    @classmethod
    def from_db(cls, alpha_db, n_tx: int) -> "PaprConstraintSet":
        alpha = np.broadcast_to(
            10.0 ** (np.asarray(alpha_db, dtype=float) / 10.0), (n_tx,)
        ).copy()
        return cls(alpha=alpha)


@dataclass(frozen=True)
class MuiConstraint:
    factor: np.ndarray   # [H, -s], shape (n_s, n_x + 1)
    delta_e: float

    def gram_dense(self) -> np.ndarray:
        return self.factor.conj().T @ self.factor


def papr_quadratic_diag(n_tx: int, n_sc: int, m: int, i: int,
                        alpha_m: float) -> np.ndarray:
    """Diagonal of the lifted peak-row matrix for antenna m, sample i."""
    if not (0 <= m < n_tx and 0 <= i < n_sc):
        raise IndexError("antenna or sample index out of range")
    d = np.zeros(n_tx * n_sc + 1)
    base = m * n_sc
    d[base:base + n_sc] = -alpha_m / n_sc
    d[base + i] += 1.0
    return d


def build_papr_quadratic(n_tx: int, n_sc: int, m: int, i: int,
                         alpha_m: float) -> np.ndarray:
    """Dense lifted peak-row matrix (diagonal by construction)."""
    return np.diag(papr_quadratic_diag(n_tx, n_sc, m, i, alpha_m))


def build_mui_matrix(ch: EffectiveChannel, s: "SymbolVector | np.ndarray",
                     delta_e: float) -> MuiConstraint:
    """Lifted residual form: [x; 1]^H G [x; 1] = ||s - Hx||^2."""
    sv = s.s if isinstance(s, SymbolVector) else np.asarray(s, dtype=complex)
    if sv.shape != (ch.n_s,):
        raise ValueError("symbol vector does not match the channel")
    factor = np.concatenate([ch.dense(), -sv[:, None]], axis=1)
    return MuiConstraint(factor=factor, delta_e=float(delta_e))


def _papr_rows(papr: PaprConstraintSet, n_tx, n_sc, block=0):
    rows = []
    for m in range(n_tx):
        for i in range(n_sc):
            d = papr_quadratic_diag(n_tx, n_sc, m, i, papr.alpha[m])
            rows.append(Row(name=f"papr:{m}:{i}", sense="le", b=0.0,
                            terms=(DiagTerm(block=block, vec=d),)))
    return rows


def _homog_row(dim, block=0, name="homog"):
    d = np.zeros(dim)
    d[-1] = 1.0
    return Row(name=name, sense="eq", b=1.0,
               terms=(DiagTerm(block=block, vec=d),))


def build_sdr(papr: PaprConstraintSet, mui: MuiConstraint,
              metadata: dict | None = None) -> SdrProblem:
    """Relaxed power-minimization program over the lifted PSD variable."""
    n_s, d = mui.factor.shape
    n_tx = papr.alpha.shape[0]
    n_sc = (d - 1) // n_tx
    if n_tx * n_sc + 1 != d:
        raise ValueError("PAPR caps inconsistent with the channel dimensions")
    rows = _papr_rows(papr, n_tx, n_sc)
    rows.append(Row(name="mui", sense="le", b=mui.delta_e,
                    terms=(GramTerm(block=0, factor=mui.factor),)))
    rows.append(_homog_row(d))
    meta = {"family": "P4", "n_tx": n_tx, "n_sc": n_sc,
            "delta_e": mui.delta_e}
    meta.update(metadata or {})
    return SdrProblem(
        blocks=(Block(dim=d, domain="hermitian"),),
        objective=(DiagTerm(block=0, vec=np.ones(d)),),
        rows=tuple(rows),
        metadata=meta,
    )


def build_min_mui_given_power(papr: PaprConstraintSet, mui: MuiConstraint,
                              power_cap: float) -> SdrProblem:
    """Flipped program: minimize the residual form at a transmit-power cap.

    Power is ||x||^2, i.e. Tr(X) - 1 after lifting, so the cap row reads
    Tr(X) <= 1 + power_cap.
    """
    n_s, d = mui.factor.shape
    n_tx = papr.alpha.shape[0]
    n_sc = (d - 1) // n_tx
    rows = _papr_rows(papr, n_tx, n_sc)
    rows.append(Row(name="power", sense="le", b=1.0 + float(power_cap),
                    terms=(DiagTerm(block=0, vec=np.ones(d)),)))
    rows.append(_homog_row(d))
    return SdrProblem(
        blocks=(Block(dim=d, domain="hermitian"),),
        objective=(GramTerm(block=0, factor=mui.factor),),
        rows=tuple(rows),
        metadata={"family": "min_mui", "n_tx": n_tx, "n_sc": n_sc,
                  "power_cap": float(power_cap)},
    )


@dataclass(frozen=True)
class P4Instance:
    """One precoding instance: channel, symbols, caps, and the program."""
    channel: EffectiveChannel
    symbols: SymbolVector
    papr: PaprConstraintSet
    delta_e: float
    problem: SdrProblem


def make_p4(ch: EffectiveChannel, s: SymbolVector, papr: PaprConstraintSet,
            delta_e: float) -> P4Instance:
    mui = build_mui_matrix(ch, s, delta_e)
    return P4Instance(channel=ch, symbols=s, papr=papr, delta_e=delta_e,
                      problem=build_sdr(papr, mui))


def alpha_db_to_linear(alpha_db) -> np.ndarray:
    """dB caps accepted at the boundary, converted once."""
    return 10.0 ** (np.asarray(alpha_db, dtype=float) / 10.0)


# ---------------------------------------------------------------------------
# realification
# ---------------------------------------------------------------------------

def _phi(mat: np.ndarray) -> np.ndarray:
    """[[Re, -Im], [Im, Re]] embedding (a ring homomorphism)."""
    re, im = mat.real, mat.imag
    top = np.concatenate([re, -im], axis=1)
    bot = np.concatenate([im, re], axis=1)
    return np.concatenate([top, bot], axis=0)


def _realify_matrix_term(term, dims):
    d = dims[term.block]
    if isinstance(term, DiagTerm):
        return DiagTerm(block=term.block, vec=np.concatenate([term.vec,
                                                              term.vec]))
    if isinstance(term, GramTerm):
        return GramTerm(block=term.block, factor=_phi(term.factor),
                        coef=term.coef)
    if isinstance(term, DenseTerm):
        return DenseTerm(block=term.block, mat=_phi(np.asarray(term.mat)))
    if isinstance(term, SparseTerm):
        ii, jj, vv = [], [], []
        for i, j, v in zip(term.ii, term.jj, term.vv):
            re, im = np.real(v), np.imag(v)
            if re != 0.0:
                ii += [i, i + d]
                jj += [j, j + d]
                vv += [re, re]
            if im != 0.0:
                ii += [i, i + d]
                jj += [j + d, j]
                vv += [-im, im]
        return SparseTerm(block=term.block,
                          ii=np.array(ii, dtype=np.int64),
                          jj=np.array(jj, dtype=np.int64),
                          vv=np.array(vv, dtype=float))
    raise TypeError(type(term))


def _realify_terms(terms, blocks, dims):
    out = []
    for term in terms:
        if isinstance(term, LpTerm):
            out.append(LpTerm(idx=term.idx, coef=2.0 * term.coef))
        elif blocks[term.block].domain == "hermitian":
            out.append(_realify_matrix_term(term, dims))
        else:
            # real blocks pass through; coefficients double to match the
            # global factor-of-two row scaling
            out.append(_scale_real_term(term, 2.0))
    return tuple(out)


def _scale_real_term(term, c):
    if isinstance(term, DiagTerm):
        return replace(term, vec=c * term.vec)
    if isinstance(term, SparseTerm):
        return replace(term, vv=c * term.vv)
    if isinstance(term, GramTerm):
        return replace(term, coef=c * term.coef)
    if isinstance(term, DenseTerm):
        return replace(term, mat=c * np.asarray(term.mat))
    raise TypeError(type(term))


def _realify_expr(expr: AffineExpr, blocks, dims) -> AffineExpr:
    return AffineExpr(terms=_realify_terms(expr.terms, blocks, dims),
                      const=2.0 * expr.const)


def realify(problem: SdrProblem) -> SdrProblem:
    """Map Hermitian blocks of size d to symmetric blocks of size 2d.

    Every mapped trace is exactly twice its complex value, so senses keep
    their meaning with doubled right-hand sides; the factor is stored in
    ``scale`` and undone when solutions are read back.
    """
    if problem.domain == "real":
        return problem
    dims = [b.dim for b in problem.blocks]
    blocks = tuple(
        Block(dim=2 * b.dim, domain="symmetric") if b.domain == "hermitian"
        else b
        for b in problem.blocks
    )
    rows = tuple(
        Row(name=r.name, sense=r.sense, b=2.0 * r.b,
            terms=_realify_terms(r.terms, problem.blocks, dims))
        for r in problem.rows
    )
    soc = tuple(
        SocRow(name=s.name,
               t=_realify_expr(s.t, problem.blocks, dims),
               z=tuple(_realify_expr(e, problem.blocks, dims) for e in s.z))
        for s in problem.soc_rows
    )
    return SdrProblem(
        blocks=blocks,
        objective=_realify_terms(problem.objective, problem.blocks, dims),
        rows=rows,
        lp_dim=problem.lp_dim,
        lp_names=problem.lp_names,
        soc_rows=soc,
        metadata=dict(problem.metadata),
        scale=2.0 * problem.scale,
    )


def derealify_block(x_real: np.ndarray) -> np.ndarray:
    """Complex Hermitian matrix matching a realified solution block.

    The average (X11 + X22)/2 + i (X21 - X12)/2 reproduces every complex
    trace as half the real one, for any symmetric PSD input.
    """
    d = x_real.shape[0] // 2
    a = 0.5 * (x_real[:d, :d] + x_real[d:, d:])
    b = 0.5 * (x_real[d:, :d] - x_real[:d, d:])
    out = a + 1j * b
    return 0.5 * (out + out.conj().T)


# ---------------------------------------------------------------------------
# JSON serialization (solver-regression fixtures)
# ---------------------------------------------------------------------------

def _arr_to_json(a):
    a = np.asarray(a)
    if np.iscomplexobj(a):
        return {"re": a.real.tolist(), "im": a.imag.tolist()}
    return a.tolist()


def _arr_from_json(obj, force_complex=False):
    if isinstance(obj, dict):
        return np.asarray(obj["re"]) + 1j * np.asarray(obj["im"])
    a = np.asarray(obj, dtype=float)
    return a.astype(complex) if force_complex else a


def _term_to_json(term):
    if isinstance(term, DiagTerm):
        return {"kind": "diag", "block": term.block,
                "vec": _arr_to_json(term.vec)}
    if isinstance(term, SparseTerm):
        return {"kind": "sparse", "block": term.block,
                "ii": term.ii.tolist(), "jj": term.jj.tolist(),
                "vv": _arr_to_json(term.vv)}
    if isinstance(term, GramTerm):
        return {"kind": "gram", "block": term.block, "coef": term.coef,
                "factor": _arr_to_json(term.factor)}
    if isinstance(term, DenseTerm):
        return {"kind": "dense", "block": term.block,
                "mat": _arr_to_json(term.mat)}
    if isinstance(term, LpTerm):
        return {"kind": "lp", "idx": term.idx, "coef": term.coef}
    raise TypeError(type(term))


def _term_from_json(obj):
    kind = obj["kind"]
    if kind == "diag":
        return DiagTerm(block=obj["block"], vec=_arr_from_json(obj["vec"]))
    if kind == "sparse":
        return SparseTerm(block=obj["block"],
                          ii=np.asarray(obj["ii"], dtype=np.int64),
                          jj=np.asarray(obj["jj"], dtype=np.int64),
                          vv=_arr_from_json(obj["vv"]))
    if kind == "gram":
        return GramTerm(block=obj["block"], coef=obj["coef"],
                        factor=_arr_from_json(obj["factor"]))
    if kind == "dense":
        return DenseTerm(block=obj["block"], mat=_arr_from_json(obj["mat"]))
    if kind == "lp":
        return LpTerm(idx=obj["idx"], coef=obj["coef"])
    raise ValueError(kind)


def _expr_to_json(expr):
    return {"const": expr.const,
            "terms": [_term_to_json(t) for t in expr.terms]}


def _expr_from_json(obj):
    return AffineExpr(terms=tuple(_term_from_json(t) for t in obj["terms"]),
                      const=obj["const"])


def problem_to_json(problem: SdrProblem) -> str:
    doc = {
        "version": 1,
        "scale": problem.scale,
        "blocks": [{"dim": b.dim, "domain": b.domain} for b in problem.blocks],
        "lp_dim": problem.lp_dim,
        "lp_names": list(problem.lp_names),
        "objective": [_term_to_json(t) for t in problem.objective],
        "rows": [{"name": r.name, "sense": r.sense, "b": r.b,
                  "terms": [_term_to_json(t) for t in r.terms]}
                 for r in problem.rows],
        "soc_rows": [{"name": s.name, "t": _expr_to_json(s.t),
                      "z": [_expr_to_json(e) for e in s.z]}
                     for s in problem.soc_rows],
        "metadata": problem.metadata,
    }
    return json.dumps(doc)


def problem_from_json(text: str) -> SdrProblem:
    doc = json.loads(text)
    if doc.get("version") != 1:
        raise ValueError("unsupported problem schema version")
    return SdrProblem(
        blocks=tuple(Block(dim=b["dim"], domain=b["domain"])
                     for b in doc["blocks"]),
        objective=tuple(_term_from_json(t) for t in doc["objective"]),
        rows=tuple(Row(name=r["name"], sense=r["sense"], b=r["b"],
                       terms=tuple(_term_from_json(t) for t in r["terms"]))
                   for r in doc["rows"]),
        lp_dim=doc["lp_dim"],
        lp_names=tuple(doc["lp_names"]),
        soc_rows=tuple(SocRow(name=s["name"], t=_expr_from_json(s["t"]),
                              z=tuple(_expr_from_json(e) for e in s["z"]))
                       for s in doc["soc_rows"]),
        metadata=doc["metadata"],
        scale=doc["scale"],
    )
