"""Atomic representations and coefficient norms.

A function is represented as f = sum over cells Q of d_Q * a_Q where the
atom a_Q equals |Q|**(s - 1/p) on Q and 0 elsewhere.  The coefficient norm
is the l^q-over-levels of the l^p-over-cells of the |d_Q|; it upper-bounds
the space norm, which is an infimum over representations.

Working-resolution functions are cell averages at level K (PiecewiseFn),
on which all transforms here are exact: the martingale-difference
construction telescopes to the cell values, so canonical_rep followed by
evaluate is the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import AtomBudgetError, NormOverflowError, ParamsError
from .grid import CellId, Grid

INF = math.inf


# -- parameters --------------------------------------------------------------


@dataclass(frozen=True)
class BesovParams:
    """Exponent box for the atomic scale.

    s is the smoothness, p the integrability, q the level summability,
    beta an auxiliary (finer) smoothness used for atom budgets, eps the
    scaling-control exponent, delta the integrability slack, gamma the
    interpolation weight in the level-convolution constant.
    """

    s: float = 0.4
    p: float = 2.0
    q: float = 2.0
    beta: float = 0.45
    eps: float = 0.1
    delta: float = 0.05
    gamma: float = 0.5

    def validate(self) -> None:
        """Enforce the exponent box; raised violations name the inequality.

        Construction does not validate: atom arithmetic is meaningful for
        any exponents (s = 1/p gives indicator atoms, say); the box is
        required wherever the operator machinery is invoked.
        """
        if not (self.s + self.eps > 0):
            raise ParamsError("violated: 0 < s+ε ≤ 1/p (need s+ε > 0)")
        if self.s + self.eps > 1.0 / self.p + 1e-15:
            raise ParamsError("violated: 0 < s+ε ≤ 1/p")
        if not (self.s < self.beta < 1.0 / self.p):
            raise ParamsError("violated: s < β < 1/p")
        if not (0 < self.delta < max(self.s, self.eps)):
            raise ParamsError("violated: 0 < δ < max(s, ε)")
        if not (0 <= self.gamma <= 1):
            raise ParamsError("violated: γ ∈ [0,1]")
        if self.p < 1 or (self.q < 1 and self.q != INF):
            raise ParamsError("violated: p ≥ 1 and q ≥ 1")

    @property
    def t0(self) -> float:
        """Derived integrability exponent p / (1 - s p + delta p)."""
        return self.p / (1.0 - self.s * self.p + self.delta * self.p)

    @property
    def theta(self) -> float:
        """Atom scaling exponent 1/p - s (> 0 in the admissible box)."""
        return 1.0 / self.p - self.s

    @property
    def theta_beta(self) -> float:
        """Atom scaling exponent of the beta scale, 1/p - beta."""
        return 1.0 / self.p - self.beta

    @property
    def p_conj(self) -> float:
        return INF if self.p == 1 else self.p / (self.p - 1.0)


# -- working-resolution functions --------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)


@dataclass
class PiecewiseFn:
    """Function constant on the level-K cells, stored as cell averages."""

    grid: Grid
    level: int
    values: np.ndarray

    def __post_init__(self):
        n = self.grid.n_cells(self.level)
        self.values = np.asarray(self.values)
        if self.values.shape != (n,):
            raise ValueError(f"expected {n} cell values, got {self.values.shape}")

    @classmethod
    def from_function(cls, grid: Grid, level: int, fn: Callable[[np.ndarray], np.ndarray],
                      rule: str = "gl5") -> "PiecewiseFn":
        """Cell averages of fn via 5-point Gauss-Legendre (or midpoints)."""
        n = grid.n_cells(level)
        w = grid.width(level)
        left = np.arange(n) * w
        if rule == "midpoint":
            vals = np.asarray(fn(left + w / 2), dtype=np.complex128)
        else:
            vals = np.zeros(n, dtype=np.complex128)
            for x, wt in zip(_GL_NODES, _GL_WEIGHTS):
                vals += wt * np.asarray(fn(left + (x + 1) * w / 2))
            vals *= 0.5
        if np.max(np.abs(vals.imag), initial=0.0) == 0.0:
            vals = vals.real
        return cls(grid, level, vals)

    @classmethod
    def constant(cls, grid: Grid, level: int, value: complex) -> "PiecewiseFn":
        dtype = np.complex128 if isinstance(value, complex) and value.imag else np.float64
        return cls(grid, level, np.full(grid.n_cells(level), value, dtype=dtype))

    def integral(self) -> complex:
        return self.values.sum() * self.grid.width(self.level)

    def lp_norm(self, t: float) -> float:
        return lp_norm(self, t)

    def l1_distance(self, other: "PiecewiseFn") -> float:
        if self.level != other.level:
            raise ValueError("resolution mismatch")
        return float(np.sum(np.abs(self.values - other.values)) * self.grid.width(self.level))

    def __mul__(self, other):
        if isinstance(other, PiecewiseFn):
            if other.level != self.level:
                raise ValueError("resolution mismatch")
            return PiecewiseFn(self.grid, self.level, self.values * other.values)
        return PiecewiseFn(self.grid, self.level, self.values * other)

    __rmul__ = __mul__

    def __add__(self, other):
        if isinstance(other, PiecewiseFn):
            return PiecewiseFn(self.grid, self.level, self.values + other.values)
        return PiecewiseFn(self.grid, self.level, self.values + other)

    def __sub__(self, other):
        if isinstance(other, PiecewiseFn):
            return PiecewiseFn(self.grid, self.level, self.values - other.values)
        return PiecewiseFn(self.grid, self.level, self.values - other)

    def to_csv(self) -> str:
        w = self.grid.width(self.level)
        lines = ["midpoint,value"]
        for j, v in enumerate(self.values):
            x = (j + 0.5) * w
            if np.iscomplexobj(self.values) and self.values.imag.any():
                lines.append(f"{x!r},{complex(v)!r}")
            else:
                lines.append(f"{x!r},{float(np.real(v))!r}")
        return "\n".join(lines) + "\n"


def lp_norm(f: PiecewiseFn, t: float) -> float:
    """Exact L^t norm of a piecewise-constant function, t in [1, inf]."""
    if t < 1:
        raise ValueError("t must be >= 1")
    a = np.abs(f.values)
    if t == INF:
        return float(a.max(initial=0.0))
    w = f.grid.width(f.level)
    return float((np.sum(a ** t) * w) ** (1.0 / t))


# -- atomic representations ---------------------------------------------------


@dataclass
class AtomicRep:
    """Sparse atom expansion: cell -> coefficient, plus positivity tracking."""

    params: BesovParams
    grid: Grid
    coeffs: Dict[CellId, complex] = field(default_factory=dict)
    positive_flag: bool = False
    meta: Dict = field(default_factory=dict)

    def max_level(self) -> int:
        return max((c.level for c in self.coeffs), default=0)

    def copy(self) -> "AtomicRep":
        return AtomicRep(self.params, self.grid, dict(self.coeffs),
                         self.positive_flag, dict(self.meta))

    def scaled(self, alpha: complex) -> "AtomicRep":
        pos = self.positive_flag and (np.isrealobj(np.asarray(alpha)) or alpha.imag == 0) \
            and np.real(alpha) >= 0
        return AtomicRep(self.params, self.grid,
                         {c: alpha * v for c, v in self.coeffs.items()}, pos)

    def __add__(self, other: "AtomicRep") -> "AtomicRep":
        out = dict(self.coeffs)
        for c, v in other.coeffs.items():
            out[c] = out.get(c, 0.0) + v
        return AtomicRep(self.params, self.grid, out,
                         self.positive_flag and other.positive_flag)

    # -- basis-vector view -------------------------------------------------

    def to_vector(self, up_to: Optional[int] = None) -> np.ndarray:
        K = self.grid.max_level if up_to is None else up_to
        vec = np.zeros(basis_size(self.grid, K), dtype=np.complex128)
        off = level_offsets(self.grid, K)
        for cell, v in self.coeffs.items():
            if cell.level > K:
                raise ValueError(f"coefficient at level {cell.level} beyond basis level {K}")
            vec[off[cell.level] + cell.index] = v
        if not np.any(vec.imag):
            return vec.real
        return vec

    @classmethod
    def from_vector(cls, params: BesovParams, grid: Grid, vec: np.ndarray,
                    K: Optional[int] = None, prune: float = 0.0) -> "AtomicRep":
        K = grid.max_level if K is None else K
        off = level_offsets(grid, K)
        coeffs: Dict[CellId, complex] = {}
        for k in range(K + 1):
            seg = vec[off[k]:off[k] + grid.n_cells(k)]
            idx = np.nonzero(np.abs(seg) > prune)[0]
            for j in idx:
                coeffs[CellId(k, int(j))] = seg[j]
        vals = np.asarray(list(coeffs.values()))
        pos = bool(vals.size == 0 or (np.all(np.isreal(vals)) and np.all(np.real(vals) >= 0)))
        return cls(params, grid, coeffs, pos)

    def to_json(self) -> List[Dict]:
        return [
            {"cell": str(c), "re": float(np.real(v)), "im": float(np.imag(v))}
            for c, v in sorted(self.coeffs.items())
        ]

    @classmethod
    def from_json(cls, params: BesovParams, grid: Grid, data: List[Dict]) -> "AtomicRep":
        from .grid import parse_cell
        coeffs = {parse_cell(d["cell"]): d["re"] + 1j * d["im"] for d in data}
        return cls(params, grid, coeffs)


def basis_size(grid: Grid, K: int) -> int:
    m = grid.arity
    return (m ** (K + 1) - 1) // (m - 1)


def level_offsets(grid: Grid, K: int) -> List[int]:
    m = grid.arity
    off = [0]
    for k in range(K + 1):
        off.append(off[-1] + m ** k)
    return off


def souza_atom(Q: CellId, params: BesovParams, grid: Grid,
               resolution: Optional[int] = None) -> PiecewiseFn:
    """The atom on Q: |Q|**(s-1/p) on Q, zero elsewhere."""
    K = grid.max_level if resolution is None else resolution
    if Q.level > K:
        raise ValueError("atom level beyond working resolution")
    vals = np.zeros(grid.n_cells(K))
    span = grid.arity ** (K - Q.level)
    vals[Q.index * span:(Q.index + 1) * span] = grid.measure(Q) ** (-params.theta)
    return PiecewiseFn(grid, K, vals)


def atom_rep(Q: CellId, params: BesovParams, grid: Grid, coeff: complex = 1.0) -> AtomicRep:
    return AtomicRep(params, grid, {Q: coeff},
                     positive_flag=np.imag(coeff) == 0 and np.real(coeff) >= 0)


# -- norms --------------------------------------------------------------------


def _level_lp(rep_levels: Dict[int, List[complex]], p: float) -> Dict[int, float]:
    out = {}
    for k, vals in rep_levels.items():
        a = np.abs(np.asarray(vals))
        out[k] = float(a.max(initial=0.0)) if p == INF else float(np.sum(a ** p) ** (1.0 / p))
    return out


def coefficient_norm(rep: AtomicRep) -> float:
    """l^q over levels of the l^p over cells of the coefficients."""
    levels: Dict[int, List[complex]] = {}
    for cell, v in rep.coeffs.items():
        levels.setdefault(cell.level, []).append(v)
    masses = _level_lp(levels, rep.params.p)
    vals = np.asarray(list(masses.values()), dtype=float)
    if vals.size == 0:
        return 0.0
    q = rep.params.q
    total = float(vals.max()) if q == INF else float(np.sum(vals ** q) ** (1.0 / q))
    if not math.isfinite(total):
        raise NormOverflowError("coefficient norm is not finite")
    return total


def coefficient_norm_vector(vec: np.ndarray, grid: Grid, K: int, params: BesovParams,
                            level_range: Optional[Tuple[int, int]] = None) -> float:
    """coefficient_norm on a basis-ordered vector (fast path)."""
    off = level_offsets(grid, K)
    lo, hi = (0, K) if level_range is None else level_range
    masses = []
    for k in range(lo, hi + 1):
        seg = np.abs(vec[off[k]:off[k + 1]])
        if seg.size == 0:
            continue
        masses.append(seg.max() if params.p == INF
                      else float(np.sum(seg ** params.p) ** (1.0 / params.p)))
    a = np.asarray(masses)
    if a.size == 0:
        return 0.0
    q = params.q
    total = float(a.max()) if q == INF else float(np.sum(a ** q) ** (1.0 / q))
    if not math.isfinite(total):
        raise NormOverflowError("coefficient norm is not finite")
    return total


# -- evaluate / canonical transforms ------------------------------------------


def evaluate(rep: AtomicRep, resolution: Optional[int] = None) -> PiecewiseFn:
    """Sum the atom expansion into cell averages at the given resolution."""
    grid = rep.grid
    K = grid.max_level if resolution is None else resolution
    m = grid.arity
    theta = rep.params.theta
    any_complex = any(np.imag(v) != 0 for v in rep.coeffs.values())
    vals = np.zeros(grid.n_cells(K), dtype=np.complex128 if any_complex else np.float64)
    for cell, v in rep.coeffs.items():
        if cell.level > K:
            raise ValueError(f"atom at level {cell.level} below resolution {K}")
        span = m ** (K - cell.level)
        amp = v * float(m) ** (cell.level * theta)
        vals[cell.index * span:(cell.index + 1) * span] += amp
    return PiecewiseFn(grid, K, vals)


def evaluate_vector(vec: np.ndarray, grid: Grid, K: int, params: BesovParams) -> np.ndarray:
    """evaluate() on a basis-ordered coefficient vector."""
    m = grid.arity
    off = level_offsets(grid, K)
    vals = np.zeros(m ** K, dtype=vec.dtype)
    for k in range(K + 1):
        seg = vec[off[k]:off[k + 1]]
        if not np.any(seg):
            continue
        amp = seg * float(m) ** (k * params.theta)
        vals += np.repeat(amp, m ** (K - k))
    return vals


def _averages_pyramid(values: np.ndarray, m: int) -> List[np.ndarray]:
    """Cell averages at every level, coarse first."""
    levels = [values]
    a = values
    while a.size > 1:
        a = a.reshape(-1, m).mean(axis=1)
        levels.append(a)
    levels.reverse()
    return levels


def _minima_pyramid(values: np.ndarray, m: int) -> List[np.ndarray]:
    levels = [values]
    a = values
    while a.size > 1:
        a = a.reshape(-1, m).min(axis=1)
        levels.append(a)
    levels.reverse()
    return levels


def canonical_coeff_arrays(values: np.ndarray, m: int, theta: float,
                           base_level: int = 0, positive: bool = False) -> List[np.ndarray]:
    """Tree coefficients of the supported-on-subtree expansion of `values`.

    Level u of the output addresses the cells at global level base_level+u
    inside the subtree.  The root coefficient carries the full average, so
    the expansion telescopes exactly to `values` inside the subtree and to
    zero outside.  With positive=True a running-minimum construction is
    used instead of averaged differences; it has nonnegative coefficients
    whenever values >= 0, at the cost of a generally larger norm.
    """
    if positive:
        vals = np.real(values)
        pyramid = _minima_pyramid(np.maximum(vals, 0.0), m)
    else:
        pyramid = _averages_pyramid(values, m)
    out: List[np.ndarray] = []
    scale = float(m) ** (-base_level * theta)
    out.append(pyramid[0] * scale)
    for u in range(1, len(pyramid)):
        k = base_level + u
        scale = float(m) ** (-k * theta)
        diff = pyramid[u] - np.repeat(pyramid[u - 1], m)
        out.append(diff * scale)
    if positive:
        # leaf level of a minima pyramid carries the residual exactly
        pass
    return out


def canonical_rep(f: PiecewiseFn, params: BesovParams, positive: bool = False) -> AtomicRep:
    """Martingale-difference representation of a working-resolution function.

    Coefficients are linear in f (each is a difference of cell averages,
    hence an L^1-bounded functional) and the expansion reconstructs f
    exactly at its own resolution.
    """
    arrays = canonical_coeff_arrays(f.values, f.grid.arity, params.theta,
                                    base_level=0, positive=positive)
    coeffs: Dict[CellId, complex] = {}
    for k, arr in enumerate(arrays):
        idx = np.nonzero(np.abs(arr) > 0.0)[0]
        for j in idx:
            coeffs[CellId(k, int(j))] = arr[j]
    vals = np.asarray(list(coeffs.values()))
    pos = bool(vals.size == 0 or (np.all(np.isreal(vals)) and np.all(np.real(vals) >= -1e-12)))
    return AtomicRep(params, f.grid, coeffs, positive_flag=pos and positive)


def canonical_vector(values: np.ndarray, grid: Grid, K: int, params: BesovParams) -> np.ndarray:
    """canonical_rep as a basis-ordered vector (fast path)."""
    arrays = canonical_coeff_arrays(values, grid.arity, params.theta)
    return np.concatenate(arrays)


def subtree_rep(f: PiecewiseFn, W: CellId, params: BesovParams,
                positive: bool = False, theta: Optional[float] = None) -> AtomicRep:
    """Expansion of f*1_W supported entirely inside W.

    The root coefficient carries the full average over W, so the expansion
    telescopes to f on W and vanishes outside; all coefficients sit on the
    subtree of W.  `theta` overrides the atom scaling exponent (used for
    finer-scale budgets).
    """
    grid, K = f.grid, f.level
    if W.level > K:
        raise ValueError("support cell below working resolution")
    m = grid.arity
    span = m ** (K - W.level)
    sub = f.values[W.index * span:(W.index + 1) * span]
    th = params.theta if theta is None else theta
    arrays = canonical_coeff_arrays(sub, m, th, base_level=W.level, positive=positive)
    coeffs: Dict[CellId, complex] = {}
    for u, arr in enumerate(arrays):
        k = W.level + u
        base = W.index * m ** u
        idx = np.nonzero(np.abs(arr) > 0.0)[0]
        for j in idx:
            coeffs[CellId(k, base + int(j))] = arr[j]
    vals = np.asarray(list(coeffs.values()))
    pos = bool(vals.size == 0 or (np.all(np.isreal(vals)) and np.all(np.real(vals) >= -1e-12)))
    return AtomicRep(params, grid, coeffs, positive_flag=pos and positive)


# -- conversions ---------------------------------------------------------------


@dataclass
class BesovAtom:
    """A finer-scale atom: an expansion supported inside one cell.

    `rep` holds beta-scale coefficients (exponent 1/p - beta) of a function
    supported in `support`; its coefficient norm must stay below
    |support|**(s-beta) / c_budget.
    """

    support: CellId
    rep: AtomicRep

    def norm(self) -> float:
        return coefficient_norm(self.rep)


def besov_to_souza(general_rep: Sequence[Tuple[complex, BesovAtom]],
                   params: BesovParams, grid: Grid,
                   c_budget: float = 1.0) -> AtomicRep:
    """Flatten a finer-scale atom expansion into a plain atom expansion.

    Each beta-scale atom coefficient at cell U converts by the factor
    |U|**(beta-s).  Inputs are validated against the atom budget; the
    measured output/input norm ratio is recorded in rep.meta.
    """
    out: Dict[CellId, complex] = {}
    level_masses: Dict[int, float] = {}
    all_positive = True
    for d, atom in general_rep:
        W = atom.support
        budget = grid.measure(W) ** (params.s - params.beta) / c_budget
        if atom.norm() > budget * (1 + 1e-9):
            raise AtomBudgetError(
                f"atom on {W} has norm {atom.norm():.6g} > budget {budget:.6g}"
            )
        if np.imag(d) != 0 or np.real(d) < 0 or not atom.rep.positive_flag:
            all_positive = False
        level_masses[W.level] = level_masses.get(W.level, 0.0) + abs(d) ** params.p
        for U, c in atom.rep.coeffs.items():
            lo_w, hi_w = grid.interval(W)
            lo_u, hi_u = grid.interval(U)
            if lo_u < lo_w - 1e-12 or hi_u > hi_w + 1e-12:
                raise AtomBudgetError(f"atom on {W} has a coefficient outside its support")
            conv = grid.measure(U) ** (params.beta - params.s)
            out[U] = out.get(U, 0.0) + d * c * conv
    rep = AtomicRep(params, grid, out)
    vals = np.asarray(list(out.values())) if out else np.asarray([])
    rep.positive_flag = all_positive and bool(
        vals.size == 0 or (np.all(np.isreal(vals)) and np.all(np.real(vals) >= 0))
    )
    # layered input norm: l^q over support levels of l^p of the weights
    masses = np.asarray([v ** (1.0 / params.p) for v in level_masses.values()])
    if params.q == INF:
        in_norm = float(masses.max(initial=0.0))
    else:
        in_norm = float(np.sum(masses ** params.q) ** (1.0 / params.q))
    out_norm = coefficient_norm(rep)
    rep.meta["input_norm"] = in_norm
    rep.meta["output_norm"] = out_norm
    rep.meta["measured_factor"] = out_norm / in_norm if in_norm > 0 else 0.0
    return rep


def multiplier_apply(v: PiecewiseFn, rep: AtomicRep) -> AtomicRep:
    """Representation of the pointwise product v * f at working resolution."""
    f = evaluate(rep, v.level)
    return canonical_rep(f * v, rep.params)


# -- random ensembles (shared by tests and calibration) ------------------------


def random_rep(grid: Grid, params: BesovParams, rng: np.random.Generator,
               n_atoms: int = 24, max_level: Optional[int] = None,
               positive: bool = False, complex_coeffs: bool = False,
               normalize: bool = True) -> AtomicRep:
    K = grid.max_level if max_level is None else max_level
    coeffs: Dict[CellId, complex] = {}
    for _ in range(n_atoms):
        k = int(rng.integers(0, K + 1))
        j = int(rng.integers(0, grid.n_cells(k)))
        val = rng.standard_normal()
        if complex_coeffs:
            val = val + 1j * rng.standard_normal()
        if positive:
            val = abs(val)
        coeffs[CellId(k, j)] = coeffs.get(CellId(k, j), 0.0) + val
    if positive:
        coeffs = {c: abs(v) for c, v in coeffs.items()}
    rep = AtomicRep(params, grid, coeffs, positive_flag=positive)
    if normalize:
        nrm = coefficient_norm(rep)
        if nrm > 0:
            rep = rep.scaled(1.0 / nrm)
            rep.positive_flag = positive
    return rep
