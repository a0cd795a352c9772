"""Branch systems for piecewise-defined expanding interval maps.

A map T is stored through its inverse branches h_r, each a monotone
bijection from the branch image J_r (where T lands) onto the branch
domain I_r (where T is defined), together with the weight g_r so that the
transfer action is sum_r g_r(x) f(h_r(x)).  With the jacobian rule
g_r = |h_r'| this is the operator transporting densities of
absolutely-continuous measures.

Every branch carries a measured constant ledger:

  shift (a_r)            minimal drop of the containment level between a
                         cell and its forward image,
  c_dc1, c_dc2           scaling control: |Q|/|image| <= c_dc1 * c_dc2**shift,
  c_dgd1, c_dgd2         distortion control: decomposition constants of
                         forward images of cells,
  c_rp                   regularity of the weight against the finer atom
                         scale,
  theta                  the combined per-branch score driving slicing
                         constants.

Constants are empirical suprema over a probe range (recorded), optionally
tightened by later encounters during operator assembly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import intervals as iv
from .atoms import BesovParams, PiecewiseFn, coefficient_norm, subtree_rep
from .domains import RegularDecomp, decompose, strong_regularity
from .errors import (
    AssumptionError,
    ContainmentError,
    InfeasibleFitError,
    LedgerError,
    MapSpecError,
)
from .grid import CellId, Grid, k0 as grid_k0

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)


@dataclass
class Potential:
    """Branch weight g_r together with how to integrate it exactly."""

    kind: str                    # "jacobian" | "constant" | "custom"
    fn: Callable[[np.ndarray], np.ndarray]
    value: Optional[float] = None     # for piecewise-constant weights
    positive: bool = True
    c_rp: float = 0.0            # measured regularity constant
    c_rp_levels: Dict[int, float] = field(default_factory=dict)

    def is_constant(self) -> bool:
        return self.value is not None

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=float))


@dataclass
class Branch:
    """One inverse branch h: J -> I with its weight and measured ledger."""

    r: int
    dom: Tuple[float, float]          # J_r, where the branch is defined
    img: Tuple[float, float]          # I_r, the image h(J_r)
    h: Callable[[np.ndarray], np.ndarray]
    h_inv: Callable[[np.ndarray], np.ndarray]
    increasing: bool
    affine_slope: Optional[float]     # slope of h when affine, else None
    potential: Potential = None
    # ledger (filled by the probes below)
    shift: int = 0
    c_dc1: float = 1.0
    c_dc2: float = 1.0
    c_dgd1: float = 1.0
    c_dgd2: float = 1.0
    eps_sign: int = 1

    def forward_interval(self, lo: float, hi: float) -> Tuple[float, float]:
        """Image h^{-1}([lo, hi)) as an interval (exact endpoint arithmetic)."""
        a, b = float(self.h_inv(lo)), float(self.h_inv(hi))
        if not self.increasing:
            a, b = b, a
        a = min(max(a, self.dom[0]), self.dom[1])
        b = min(max(b, self.dom[0]), self.dom[1])
        return (a, b)

    def pullback_interval(self, lo: float, hi: float) -> Tuple[float, float]:
        """h([lo, hi)) for [lo, hi) inside the branch domain J."""
        a, b = float(self.h(lo)), float(self.h(hi))
        if not self.increasing:
            a, b = b, a
        return (a, b)

    def weight_integral(self, lo: float, hi: float) -> float:
        """Signed integral of g over [lo, hi) inside J (exact when possible)."""
        if hi <= lo:
            return 0.0
        if self.potential.kind == "jacobian":
            a, b = self.pullback_interval(lo, hi)
            return abs(b - a)
        if self.potential.is_constant():
            return self.potential.value * (hi - lo)
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        vals = self.potential(mid + half * _GL_NODES)
        return float(np.dot(_GL_WEIGHTS, vals) * half)

    def lambda_rs2(self, params: BesovParams) -> float:
        return max(self.c_dc2 ** params.eps, self.c_dgd2 ** (1.0 / params.p))

    def theta(self, params: BesovParams) -> float:
        lam = self.lambda_rs2(params)
        return (self.c_dc1 ** params.eps
                * self.potential.c_rp
                * self.c_dgd1 ** (1.0 / params.p)
                * lam ** (self.shift * (1.0 - params.gamma)))


# -- built-in map constructors ------------------------------------------------


def _affine_branch(r: int, dom: Tuple[float, float], img: Tuple[float, float],
                   slope: float, intercept: float) -> Branch:
    """Branch h(x) = slope*x + intercept on dom, mapping onto img."""
    h = lambda x: slope * np.asarray(x, dtype=float) + intercept
    h_inv = lambda y: (np.asarray(y, dtype=float) - intercept) / slope
    return Branch(r=r, dom=dom, img=img, h=h, h_inv=h_inv,
                  increasing=slope > 0, affine_slope=slope)


@dataclass
class MapSpec:
    """Named map plus a potential rule; parsed from plain dicts."""

    name: str
    potential: str = "jacobian"
    beta: float = 1.6180339887498949
    breakpoints: Optional[Sequence[float]] = None
    slopes: Optional[Sequence[float]] = None
    offsets: Optional[Sequence[float]] = None
    arity: int = 3
    r_max: int = 50
    exponent: float = 0.75
    constant: float = 1.0
    custom_fn: Optional[Callable] = None

    @classmethod
    def from_json(cls, data: Dict) -> "MapSpec":
        known = {"map", "potential", "beta", "breakpoints", "slopes", "offsets",
                 "arity", "r_max", "exponent", "constant"}
        bad = set(data) - known
        if bad:
            raise MapSpecError(f"unknown map-spec fields: {sorted(bad)}")
        if "map" not in data:
            raise MapSpecError("map spec needs a 'map' field")
        kw = {k: v for k, v in data.items() if k != "map"}
        return cls(name=data["map"], **kw)

    def to_json(self) -> Dict:
        out = {"map": self.name, "potential": self.potential}
        if self.name == "beta":
            out["beta"] = self.beta
        if self.name == "gauss":
            out["r_max"] = self.r_max
        if self.name == "m_ary":
            out["arity"] = self.arity
        if self.name == "pw_linear":
            out["breakpoints"] = list(self.breakpoints)
            out["slopes"] = list(self.slopes)
            if self.offsets is not None:
                out["offsets"] = list(self.offsets)
        if self.name == "lorenz_cusp":
            out["exponent"] = self.exponent
        if self.potential == "constant":
            out["constant"] = self.constant
        return out


def _build_branches(spec: MapSpec) -> List[Branch]:
    name = spec.name
    if name == "doubling":
        return _build_branches(MapSpec("m_ary", arity=2))
    if name == "m_ary":
        m = spec.arity
        return [
            _affine_branch(r + 1, (0.0, 1.0), (r / m, (r + 1) / m), 1.0 / m, r / m)
            for r in range(m)
        ]
    if name == "beta":
        b = spec.beta
        if b <= 1 + 1e-9:
            raise MapSpecError(f"beta map with beta={b} is not expanding")
        n_full = int(math.floor(b))
        branches = [
            _affine_branch(r + 1, (0.0, 1.0), (r / b, (r + 1) / b), 1.0 / b, r / b)
            for r in range(n_full)
        ]
        top = b - n_full
        if top > 1e-12:
            branches.append(
                _affine_branch(n_full + 1, (0.0, top), (n_full / b, 1.0),
                               1.0 / b, n_full / b)
            )
        return branches
    if name == "pw_linear":
        if spec.breakpoints is None or spec.slopes is None:
            raise MapSpecError("pw_linear needs breakpoints and slopes")
        xs = list(spec.breakpoints)
        slopes = list(spec.slopes)
        offsets = list(spec.offsets) if spec.offsets is not None else [0.0] * len(slopes)
        if len(xs) != len(slopes) + 1 or len(offsets) != len(slopes):
            raise MapSpecError("pw_linear needs len(breakpoints) == len(slopes)+1")
        branches = []
        for i, s in enumerate(slopes):
            if s <= 0:
                raise MapSpecError("pw_linear slopes must be positive")
            lo, hi = xs[i], xs[i + 1]
            y0, y1 = offsets[i], offsets[i] + s * (hi - lo)
            if y1 > 1 + 1e-9 or y0 < -1e-9:
                raise MapSpecError(f"piece {i} maps [{lo},{hi}) outside [0,1)")
            branches.append(_affine_branch(i + 1, (y0, y1), (lo, hi), 1.0 / s, lo - y0 / s))
        return branches
    if name == "lorenz_cusp":
        kappa = spec.exponent
        if not (0.5 < kappa < 1.0):
            raise MapSpecError(
                "lorenz_cusp exponent must lie in (1/2, 1) to keep |T'| > 1"
            )
        c = 2.0 ** kappa
        inv_k = 1.0 / kappa

        def h1(y):
            return 0.5 - 0.5 * np.power(1.0 - np.asarray(y, dtype=float), inv_k)

        def h1_inv(x):
            return 1.0 - c * np.power(0.5 - np.asarray(x, dtype=float), kappa)

        def h2(y):
            return 0.5 + 0.5 * np.power(1.0 - np.asarray(y, dtype=float), inv_k)

        def h2_inv(x):
            return 1.0 - c * np.power(np.asarray(x, dtype=float) - 0.5, kappa)

        return [
            Branch(1, (0.0, 1.0), (0.0, 0.5), h1, h1_inv, True, None),
            Branch(2, (0.0, 1.0), (0.5, 1.0), h2, h2_inv, False, None),
        ]
    if name == "gauss":
        branches = []
        for r in range(1, spec.r_max + 1):
            def h(y, r=r):
                return 1.0 / (np.asarray(y, dtype=float) + r)

            def h_inv(x, r=r):
                return 1.0 / np.asarray(x, dtype=float) - r

            branches.append(
                Branch(r, (0.0, 1.0), (1.0 / (r + 1), 1.0 / r), h, h_inv,
                       increasing=False, affine_slope=None)
            )
        return branches
    raise MapSpecError(f"unknown map name: {name!r}")


def _attach_potential(branch: Branch, spec: MapSpec, grid: Grid) -> None:
    if spec.potential == "jacobian":
        if branch.affine_slope is not None:
            slope = abs(branch.affine_slope)
            branch.potential = Potential("jacobian", lambda x, s=slope: np.full_like(
                np.asarray(x, dtype=float), s), value=slope)
        else:
            # fallback for curved branches without a closed-form derivative
            h = branch.h

            def g(x, h=h):
                x = np.asarray(x, dtype=float)
                d = 1e-7
                return np.abs((h(x + d) - h(x - d)) / (2 * d))

            branch.potential = Potential("jacobian", g)
    elif spec.potential == "constant":
        c = spec.constant
        branch.potential = Potential("constant",
                                     lambda x, c=c: np.full_like(np.asarray(x, dtype=float), c),
                                     value=c, positive=c >= 0)
    elif spec.potential == "custom":
        if spec.custom_fn is None:
            raise MapSpecError("custom potential rule needs custom_fn")
        branch.potential = Potential("custom", spec.custom_fn, positive=False)
    else:
        raise MapSpecError(f"unknown potential rule: {spec.potential!r}")


def _gauss_jacobian(branch: Branch) -> None:
    r = branch.r
    branch.potential = Potential(
        "jacobian", lambda x, r=r: 1.0 / (np.asarray(x, dtype=float) + r) ** 2)


def _lorenz_jacobian(branch: Branch, kappa: float) -> None:
    inv_k = 1.0 / kappa

    def g(y):
        y = np.asarray(y, dtype=float)
        return (0.5 * inv_k) * np.power(np.maximum(1.0 - y, 0.0), inv_k - 1.0)

    branch.potential = Potential("jacobian", g)


# -- ledger probes --------------------------------------------------------------


def preimage_decomp(grid: Grid, branch: Branch, Q: CellId, alpha: float) -> RegularDecomp:
    """Decompose the forward image of a cell under the underlying map.

    Raises ContainmentError when the cell does not sit inside the branch
    image I_r.
    """
    lo, hi = grid.interval(Q)
    img_lo, img_hi = branch.img
    tol = grid.width(Q.level) * 1e-9
    if lo < img_lo - tol or hi > img_hi + tol:
        raise ContainmentError(f"cell {Q} is not contained in branch image {branch.img}")
    flo, fhi = branch.forward_interval(lo, hi)
    return decompose(grid, (flo, fhi), alpha, defect_cap=math.inf)


def scaling_constants(grid: Grid, branch: Branch,
                      probe_level: int = 10) -> Tuple[int, float, float]:
    """Fit (shift, c_dc1, c_dc2) on all cells inside the image up to a level.

    The ratio |Q| / |forward image| is <= 1 for expanding maps; c_dc2 is
    the tightest geometric base < 1 and c_dc1 the residual front factor.
    """
    shifts: List[int] = []
    ratios: List[float] = []
    # keep probing below the nominal range for branches whose image is
    # thinner than the probe cells (deep tails of infinite-branch maps)
    k = 0
    while k <= grid.max_level + 8:
        i0, i1 = grid.contained_run(k, *branch.img)
        step = max(1, (i1 - i0) // 64)
        for j in range(i0, i1, step):
            Q = CellId(k, j)
            lo, hi = grid.interval(Q)
            flo, fhi = branch.forward_interval(lo, hi)
            if fhi - flo <= 0:
                continue
            ratios.append(grid.width(k) / (fhi - flo))
            # forward images of deep cells may only contain cells below the
            # working resolution; the containment level is pure arithmetic
            kq = grid_k0(grid, (flo, fhi), up_to=grid.max_level + 16)
            shifts.append(abs(k - kq))
        k += 1
        if k > probe_level and len(ratios) >= 8:
            break
    if not ratios:
        raise InfeasibleFitError(f"branch {branch.r}: no probe cells inside image")
    a_r = min(shifts)
    base = 0.0
    for rho, sh in zip(ratios, shifts):
        if sh > 0:
            base = max(base, rho ** (1.0 / sh))
    if base == 0.0:
        base = max(ratios)
    if base >= 1.0 - 1e-12:
        raise InfeasibleFitError(
            f"branch {branch.r}: no geometric base < 1 fits the scaling samples"
        )
    front = 1.0
    for rho, sh in zip(ratios, shifts):
        front = max(front, rho / base ** sh)
    return a_r, front, base


def potential_regularity(grid: Grid, branch: Branch, params: BesovParams,
                         probe_level: int = 6,
                         resolution: Optional[int] = None) -> float:
    """Measured regularity constant of the branch weight.

    For each probing cell W in the branch domain, the finer-scale expansion
    of g*1_W is compared against the budget
    (|Q|/|image Q|)**(1/p-s+eps) * |W|**(1/p-beta) with Q the smallest cell
    containing h(W).  The positive construction is used for nonnegative
    weights so downstream positivity is preserved by the same numbers.
    """
    K = grid.max_level if resolution is None else resolution
    gbar = weight_averages(grid, branch, K)
    top = min(probe_level, K)
    worst = 0.0
    exponent = 1.0 / params.p - params.s + params.eps
    for k in range(top + 1):
        i0, i1 = grid.contained_run(k, *branch.dom)
        level_worst = 0.0
        for j in range(i0, i1):
            W = CellId(k, j)
            wlo, whi = grid.interval(W)
            qlo, qhi = branch.pullback_interval(wlo, whi)
            kq = _smallest_covering_level(grid, qlo, qhi)
            Qiv = grid.interval(grid.cell_at(kq, 0.5 * (qlo + qhi)))
            flo, fhi = branch.forward_interval(*Qiv)
            ratio = (Qiv[1] - Qiv[0]) / max(fhi - flo, 1e-300)
            rep = subtree_rep(gbar, W, params, positive=branch.potential.positive,
                              theta=params.theta_beta)
            num = coefficient_norm(rep)
            den = ratio ** exponent * grid.measure(W) ** params.theta_beta
            level_worst = max(level_worst, num / den)
        worst = max(worst, level_worst)
        branch.potential.c_rp_levels[k] = level_worst
    branch.potential.c_rp = worst
    return worst


def _smallest_covering_level(grid: Grid, lo: float, hi: float) -> int:
    """Deepest level at which a single cell contains [lo, hi)."""
    for k in range(grid.max_level, -1, -1):
        n = grid.n_cells(k)
        j = int(lo * n)
        if j * grid.width(k) <= lo + 1e-15 and hi <= (j + 1) * grid.width(k) + 1e-15:
            return k
    return 0


def weight_averages(grid: Grid, branch: Branch, K: int) -> PiecewiseFn:
    """Cell averages of the branch weight over the branch domain.

    Exact for jacobian and constant weights (interval image lengths),
    5-point Gauss-Legendre otherwise.  Cells outside the domain get 0.
    """
    n = grid.n_cells(K)
    w = grid.width(K)
    vals = np.zeros(n)
    lo_d, hi_d = branch.dom
    j0 = int(lo_d / w)
    j1 = min(int(math.ceil(hi_d / w - 1e-12)), n)
    for j in range(j0, j1):
        a, b = max(j * w, lo_d), min((j + 1) * w, hi_d)
        if b <= a:
            continue
        vals[j] = branch.weight_integral(a, b) / w
    return PiecewiseFn(grid, K, vals)


# -- the assembled system ---------------------------------------------------------


@dataclass
class BranchSystem:
    spec: MapSpec
    grid: Grid
    params: BesovParams
    branches: List[Branch]
    strong_reports: Dict[int, object] = field(default_factory=dict)
    m_overlap: int = 0          # sup over probing cells of #branch images met
    n_overlap: int = 0          # sup over cells of #branch supports containing it
    t_overlap: float = 0.0      # sup over probing cells of theta-weighted overlap
    images_cell_aligned_from: Optional[int] = None
    tail_mass_geometric: float = 0.0
    lebesgue_classes: Dict[str, List[int]] = field(default_factory=dict)
    probe_level: int = 10

    @property
    def lambda_rs2(self) -> float:
        return max(b.lambda_rs2(self.params) for b in self.branches)

    def thetas(self) -> np.ndarray:
        return np.array([b.theta(self.params) for b in self.branches])

    def theta(self, r: int) -> float:
        for b in self.branches:
            if b.r == r:
                if b.potential.c_rp == 0.0:
                    raise LedgerError(f"branch {r}: ledger incomplete (c_rp unset)")
                return b.theta(self.params)
        raise LedgerError(f"no branch with id {r}")

    def c_strong(self) -> float:
        return max(rep.c_strong for rep in self.strong_reports.values())

    def check_a00(self) -> None:
        lam = self.lambda_rs2
        if lam >= 1.0:
            raise AssumptionError(
                f"scaling/distortion ratio sup is {lam:.6f} >= 1; the branch "
                "family is not uniformly contracting on the atom scale"
            )

    def ledger_rows(self) -> List[Dict]:
        rows = []
        for b in self.branches:
            rows.append({
                "r": b.r,
                "a_r": b.shift,
                "c_DC1": b.c_dc1,
                "c_DC2": b.c_dc2,
                "c_DGD1": b.c_dgd1,
                "c_DGD2": b.c_dgd2,
                "c_RP": b.potential.c_rp,
                "theta": b.theta(self.params),
            })
        return rows

    def ledger_csv(self) -> str:
        cols = ["r", "a_r", "c_DC1", "c_DC2", "c_DGD1", "c_DGD2", "c_RP", "theta"]
        lines = [",".join(cols)]
        for row in self.ledger_rows():
            lines.append(",".join(repr(row[c]) if c != "r" else str(row[c]) for c in cols))
        return "\n".join(lines) + "\n"


def _check_expanding(branches: List[Branch], samples: int = 511) -> None:
    """Reject maps with a non-expanding piece.

    Derivatives are sampled strictly inside each branch domain, so maps
    whose expansion degenerates only at an endpoint (the slowest branch of
    the continued-fraction map, the cusp image) are accepted while any
    piece with |T'| <= 1 on a set of positive measure is refused.
    """
    for b in branches:
        if b.affine_slope is not None:
            deriv = abs(b.affine_slope)
            if deriv >= 1.0 - 1e-9:
                raise MapSpecError(
                    f"branch {b.r}: |T'| = {1 / deriv:.6f} < 1 + 1e-9 (not expanding)"
                )
            continue
        lo, hi = b.dom
        xs = lo + (hi - lo) * np.arange(1, samples + 1) / (samples + 1)
        d = 1e-6 * (hi - lo)
        hv = np.abs((np.asarray(b.h(xs + d)) - np.asarray(b.h(xs - d))) / (2 * d))
        if np.any(hv >= 1.0 / (1.0 + 1e-9)):
            raise MapSpecError(f"branch {b.r}: |T'| < 1 + 1e-9 somewhere (not expanding)")


def _measure_overlaps(system: BranchSystem, t: int = 1) -> None:
    grid = system.grid
    thetas = system.thetas()
    K = grid.max_level
    m_best, t_best = 0, 0.0
    check_levels = list(range(t, min(K, system.probe_level) + 1))
    for k in check_levels:
        edges = np.arange(grid.n_cells(k) + 1) * grid.width(k)
        m_here = np.zeros(grid.n_cells(k), dtype=int)
        t_here = np.zeros(grid.n_cells(k))
        for b, th in zip(system.branches, thetas):
            lo, hi = b.img
            j0 = max(int(lo / grid.width(k) - 1e-12), 0)
            j1 = min(int(math.ceil(hi / grid.width(k) + 1e-12)), grid.n_cells(k))
            for j in range(j0, j1):
                if min(hi, edges[j + 1]) - max(lo, edges[j]) > 1e-14:
                    m_here[j] += 1
                    t_here[j] += th
        m_best = max(m_best, int(m_here.max(initial=0)))
        t_best = max(t_best, float(t_here.max(initial=0.0)))
    system.m_overlap = m_best
    system.t_overlap = t_best
    # support-side overlap: count branch domains containing a full cell;
    # the deepest probed level is decisive
    kk = min(K, system.probe_level)
    counts = np.zeros(grid.n_cells(kk), dtype=int)
    w = grid.width(kk)
    for b in system.branches:
        lo, hi = b.dom
        i0, i1 = grid.contained_run(kk, lo, hi)
        counts[i0:i1] += 1
    system.n_overlap = int(counts.max(initial=0))


def _images_aligned_from(system: BranchSystem) -> Optional[int]:
    """Smallest t such that every cell at levels >= t sits inside one image."""
    grid = system.grid
    for t in range(0, min(grid.max_level, 6) + 1):
        ok = True
        for k in range(t, min(grid.max_level, system.probe_level) + 1):
            w = grid.width(k)
            for b_edge in {e for b in system.branches for e in b.img}:
                frac = b_edge / w
                if abs(frac - round(frac)) > 1e-9 and 0 < b_edge < 1:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            return t
    return None


def make_map(spec: MapSpec, grid: Grid, params: BesovParams,
             probe_level: int = 10, allow_nonexpanding: bool = False) -> BranchSystem:
    """Build a branch system for a named map and populate its ledger.

    Probes every cell inside each branch image up to probe_level for the
    scaling constants, decomposes forward images for the distortion
    constants, and measures the weight regularity on the finer atom scale.
    """
    params.validate()
    branches = _build_branches(spec)
    if spec.name == "gauss" and spec.potential == "jacobian":
        for b in branches:
            _gauss_jacobian(b)
    elif spec.name == "lorenz_cusp" and spec.potential == "jacobian":
        for b in branches:
            _lorenz_jacobian(b, spec.exponent)
    else:
        for b in branches:
            _attach_potential(b, spec, grid)
    if not allow_nonexpanding:
        _check_expanding(branches)

    system = BranchSystem(spec=spec, grid=grid, params=params, branches=branches,
                          probe_level=min(probe_level, grid.max_level))
    alpha = 1.0 - params.s * params.p
    alpha_beta = 1.0 - params.beta * params.p
    for b in branches:
        try:
            b.shift, b.c_dc1, b.c_dc2 = scaling_constants(grid, b, system.probe_level)
        except InfeasibleFitError:
            if not allow_nonexpanding:
                raise
            # sentinel >= 1 marks the branch as refusing the geometric fit
            b.shift, b.c_dc1, b.c_dc2 = 0, 1.0, 1.0
        c_dgd1 = 0.0
        top = min(system.probe_level, 8 if b.affine_slope is None else system.probe_level)
        for k in range(top + 1):
            i0, i1 = grid.contained_run(k, *b.img)
            step = max(1, (i1 - i0) // 32)
            for j in range(i0, i1, step):
                dec = preimage_decomp(grid, b, CellId(k, j), alpha)
                c_dgd1 = max(c_dgd1, dec.c_dom)
        b.c_dgd1 = max(c_dgd1, 1.0)
        b.c_dgd2 = grid.arity ** (-alpha)
        potential_regularity(grid, b, params,
                             probe_level=min(6, system.probe_level))
        system.strong_reports[b.r] = strong_regularity(grid, b.img, alpha_beta, t=0)
    if not allow_nonexpanding:
        system.check_a00()
    _measure_overlaps(system)
    system.images_cell_aligned_from = _images_aligned_from(system)
    if spec.name == "gauss":
        system.tail_mass_geometric = 1.0 / (spec.r_max + 1)
    _classify_lebesgue(system)
    return system


# -- integrability classification ------------------------------------------------


def _classify_lebesgue(system: BranchSystem) -> None:
    """Split branches into the bounded / summable weight classes.

    Class "ratio_bounded" (finite families, sup|g| controlled by the raw
    measure ratio) and class "tail_summable" (disjoint images with
    geometric decay strong enough for the dual exponent sum).  The split
    threshold for infinite-tail maps is shift >= 8.
    """
    lam2, lam3 = [], []
    for b in system.branches:
        if len(system.branches) > 10 and b.shift >= 8:
            lam3.append(b.r)
        else:
            lam2.append(b.r)
    system.lebesgue_classes = {"L1": [], "L2": lam2, "L3": lam3}
