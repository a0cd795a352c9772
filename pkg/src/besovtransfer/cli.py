"""Batch front end: configure a map, run analyses, emit ledgers and data.

All outputs are plain CSV/JSON with stable formatting, so identical
configurations and seeds produce byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .atoms import BesovParams, PiecewiseFn, atom_rep, evaluate
from .dynamics import BranchSystem, MapSpec, make_map
from .errors import (
    AssumptionError,
    BesovTransferError,
    CapacityError,
    ConfigError,
    ConvergenceError,
    DegenerateFitError,
    GapCollapseError,
    InfeasibleFitError,
    MapSpecError,
    ModeMismatchError,
    NormOverflowError,
    ParamsError,
    ResolutionError,
)
from .grid import Grid, build_grid, validate_grid
from .spectral import (
    clt_variance,
    decay_rate,
    eigenvalues,
    invariant_density,
    lasota_yorke_verify,
    peripheral_spectrum,
)
from .transfer import Constants, assemble_matrix, bound_ledger, lebesgue_bound_check

ANALYSES = ("validate", "ledger", "matrix", "density", "spectrum",
            "decay", "clt", "ly", "bounds")
EXPLAIN_NAMES = ("theta", "C_D", "C_FR", "C_ES", "essential_bound", "ly_lambda", "t0")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ASSUMPTION = 3
EXIT_NUMERIC = 4


@dataclass
class RunConfig:
    grid: Grid
    params: BesovParams
    map_spec: MapSpec
    analyses: List[str]
    out_dir: Path
    constants: Constants = Constants()
    seed: int = 0
    basis_cap: int = 8191
    split_level: int = 1
    probe_level: int = 10
    observable: str = "cos"

    @classmethod
    def from_json(cls, data: Dict, out_dir: Path) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be an object")
        version = data.get("schema_version", 1)
        if version != 1:
            raise ConfigError(f"config.schema_version: unsupported version {version}")
        try:
            grid = build_grid(int(data.get("grid", {}).get("arity", 2)),
                              int(data.get("grid", {}).get("max_level", 10)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config.grid: {exc}") from exc
        p = data.get("params", {})
        try:
            params = BesovParams(
                s=float(p.get("s", 0.4)), p=float(p.get("p", 2.0)),
                q=float(p.get("q", 2.0)) if p.get("q") != "inf" else math.inf,
                beta=float(p.get("beta", 0.45)), eps=float(p.get("eps", 0.1)),
                delta=float(p.get("delta", 0.05)), gamma=float(p.get("gamma", 0.5)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config.params: {exc}") from exc
        params.validate()   # exponent box; violations carry the inequality
        if "map" not in data:
            raise ConfigError("config.map: missing")
        map_spec = MapSpec.from_json(data["map"])
        analyses = list(data.get("analyses", ["ledger"]))
        for a in analyses:
            if a not in ANALYSES:
                raise ConfigError(f"config.analyses: unknown analysis {a!r}")
        consts = data.get("constants", {})
        constants = Constants(
            c_gc=float(consts.get("C_GC", 4.0)),
            c_gbs=float(consts.get("C_GBS", 2.0)),
            c_gbva=float(consts.get("C_GBVA", 1.0)),
            c_gsr=None if consts.get("C_GSR") is None else float(consts["C_GSR"]),
        )
        caps = data.get("caps", {})
        return cls(grid=grid, params=params, map_spec=map_spec, analyses=analyses,
                   out_dir=out_dir, constants=constants,
                   seed=int(data.get("seed", 0)),
                   basis_cap=int(caps.get("basis", 8191)),
                   split_level=int(caps.get("split_level", 1)),
                   probe_level=int(caps.get("probe_level", 10)),
                   observable=str(data.get("observable", "cos")))


def _observable(name: str, grid: Grid, level: int) -> PiecewiseFn:
    fns = {
        "cos": lambda x: np.cos(2 * np.pi * x),
        "sin": lambda x: np.sin(2 * np.pi * x),
        "half": lambda x: np.where(x < 0.5, 0.5, -0.5),
    }
    if name not in fns:
        raise ConfigError(f"config.observable: unknown observable {name!r}")
    return PiecewiseFn.from_function(grid, level, fns[name])


def _json_dump(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_coerce) + "\n")


def _coerce(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, complex):
        return {"re": x.real, "im": x.imag}
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"not serializable: {type(x)}")


class Runner:
    """Executes analyses in dependency order, materializing each stage once."""

    def __init__(self, config: RunConfig):
        self.config = config
        self._system: Optional[BranchSystem] = None
        self._matrix = None
        self._density = None
        self.written: List[Path] = []

    # -- cached stages ------------------------------------------------------

    def system(self) -> BranchSystem:
        if self._system is None:
            self._system = make_map(self.config.map_spec, self.config.grid,
                                    self.config.params,
                                    probe_level=self.config.probe_level)
            # integrability gate: refuse the operator when the split fails
            lebesgue_bound_check(self._system)
        return self._system

    def matrix(self):
        if self._matrix is None:
            self._matrix = assemble_matrix(self.system(), K=self.config.grid.max_level,
                                           t=self.config.split_level,
                                           constants=self.config.constants,
                                           basis_cap=self.config.basis_cap)
        return self._matrix

    def density(self):
        if self._density is None:
            self._density = invariant_density(self.matrix())
        return self._density

    # -- emitters -----------------------------------------------------------

    def _write(self, name: str, text: str) -> Path:
        path = self.config.out_dir / name
        path.write_text(text)
        self.written.append(path)
        return path

    def run(self) -> List[Path]:
        self.config.out_dir.mkdir(parents=True, exist_ok=True)
        order = [a for a in ANALYSES if a in self.config.analyses]
        for analysis in order:
            getattr(self, f"emit_{analysis}")()
        return self.written

    def emit_validate(self) -> None:
        report = validate_grid(self.config.grid)
        data = report.as_dict()
        data["all_pass"] = report.all_pass
        path = self.config.out_dir / "axioms.json"
        _json_dump(path, data)
        self.written.append(path)

    def emit_ledger(self) -> None:
        self._write("ledger.csv", self.system().ledger_csv())

    def emit_bounds(self) -> None:
        ledger = bound_ledger(self.system(), self.config.constants,
                              t=self.config.split_level)
        path = self.config.out_dir / "bounds.json"
        _json_dump(path, ledger.as_dict())
        self.written.append(path)

    def emit_matrix(self) -> None:
        tm = self.matrix()
        self._write("matrix.csv", tm.to_triplets())
        path = self.config.out_dir / "bounds.json"
        _json_dump(path, tm.ledger.as_dict())
        self.written.append(path)

    def emit_density(self) -> None:
        rho, info = self.density()
        self._write("density.csv", rho.to_csv())
        path = self.config.out_dir / "density_info.json"
        _json_dump(path, {"iterations": info.iterations, "method": info.method,
                          "residual": info.residual, "clamp_mass": info.clamp_mass,
                          "tail_deficit": info.deficit})
        self.written.append(path)

    def emit_spectrum(self) -> None:
        report = peripheral_spectrum(self.matrix())
        lines = ["re,im,modulus"]
        for lam in report.eigenvalues:
            lines.append(f"{float(lam.real)!r},{float(lam.imag)!r},{float(abs(lam))!r}")
        self._write("spectrum.csv", "\n".join(lines) + "\n")
        path = self.config.out_dir / "spectral.json"
        _json_dump(path, {
            "peripheral": [{"re": l.real, "im": l.imag} for l in report.peripheral],
            "gap": report.gap,
            "essential_bound": report.essential_bound,
            "eigenspace_dim_at_1": report.eigenspace_dim_at_1,
            "semisimple": report.semisimple,
            "transitive": report.transitive,
        })
        self.written.append(path)

    def emit_decay(self) -> None:
        from .grid import CellId
        grid = self.config.grid
        # default observable: the zero-mean first-level difference
        u = atom_rep(CellId(1, 0), self.config.params, grid, 1.0) \
            + atom_rep(CellId(1, 1), self.config.params, grid, -1.0)
        v = evaluate(u, grid.max_level)
        try:
            rep = decay_rate(self.matrix(), u, v, k_max=40)
            cks, fitted, cert = rep.correlations, rep.fitted_rate, rep.certificate_rate
            degenerate = False
        except DegenerateFitError:
            from .spectral import correlations as _corr
            cks = _corr(self.matrix(), u, v, k_max=40)
            fitted, cert, degenerate = 0.0, 0.0, True
        lines = ["k,re,im,abs"]
        for k, c in enumerate(cks):
            lines.append(f"{k},{float(c.real)!r},{float(c.imag)!r},{float(abs(c))!r}")
        self._write("decay.csv", "\n".join(lines) + "\n")
        path = self.config.out_dir / "decay.json"
        _json_dump(path, {"fitted_rate": fitted, "certificate_rate": cert,
                          "degenerate": degenerate})
        self.written.append(path)

    def emit_clt(self) -> None:
        v = _observable(self.config.observable, self.config.grid,
                        self.config.grid.max_level)
        rho, _ = self.density()
        rep = clt_variance(self.matrix(), v, density=rho)
        path = self.config.out_dir / "clt.json"
        _json_dump(path, {
            "sigma2": rep.sigma2, "green_kubo": rep.green_kubo,
            "fd_error": rep.fd_error, "t_grid": list(rep.t_grid),
            "leading": {repr(t): {"re": l.real, "im": l.imag}
                        for t, l in sorted(rep.leading.items())},
        })
        self.written.append(path)

    def emit_ly(self) -> None:
        rep = lasota_yorke_verify(self.matrix(), ensemble_size=60, n_max=20,
                                  seed=self.config.seed)
        path = self.config.out_dir / "ly.json"
        _json_dump(path, {"C": rep.C, "lambda": rep.lam, "n_max": rep.n_max,
                          "ensemble_size": rep.ensemble_size, "cap": rep.cap,
                          "pass": rep.passed, "seed": rep.seed})
        self.written.append(path)


# -- explain --------------------------------------------------------------------


def explain(name: str, config: RunConfig) -> str:
    """Defining formula and current numeric decomposition of a bound."""
    if name not in EXPLAIN_NAMES:
        raise ConfigError(
            f"unknown bound name {name!r}; known: {', '.join(EXPLAIN_NAMES)}")
    params = config.params
    if name == "t0":
        val = params.t0
        return (f"t0 = p/(1 - s*p + delta*p)\n"
                f"   = {params.p!r}/(1 - {params.s!r}*{params.p!r} + "
                f"{params.delta!r}*{params.p!r})\n"
                f"   = {val:.4f}\n")
    system = make_map(config.map_spec, config.grid, params,
                      probe_level=config.probe_level)
    ledger = bound_ledger(system, config.constants, t=config.split_level)
    if name == "theta":
        lines = [f"theta_r = {ledger.formulas['theta']}",
                 "r,a_r,c_DC1,c_DC2,c_DGD1,c_DGD2,c_RP,theta"]
        for row in system.ledger_rows():
            lines.append(",".join(str(row[c]) if c == "r" else repr(row[c])
                                  for c in ("r", "a_r", "c_DC1", "c_DC2",
                                            "c_DGD1", "c_DGD2", "c_RP", "theta")))
        return "\n".join(lines) + "\n"
    if name == "C_D":
        return (f"C_D = {ledger.formulas['C_D']}\n"
                f"    = 2/(1 - {ledger.lambda_rs2!r}**{params.gamma!r})\n"
                f"    = {ledger.c_d!r}\n")
    if name == "C_FR":
        return f"C_FR = {ledger.formulas['C_FR']}\n     = {ledger.c_fr!r}\n"
    if name == "C_ES":
        return f"C_ES = {ledger.formulas['C_ES']}\n     = {ledger.c_es!r}\n"
    if name == "essential_bound":
        return (f"essential_bound = {ledger.formulas['essential_bound']}\n"
                f"                = {ledger.c_gbs!r} * {ledger.c_d!r} * "
                f"{ledger.c_es!r} * {ledger.c_gc!r}\n"
                f"                = {ledger.essential_bound!r}\n")
    if name == "ly_lambda":
        tm = assemble_matrix(system, K=config.grid.max_level, t=config.split_level,
                             constants=config.constants, basis_cap=config.basis_cap)
        rep = lasota_yorke_verify(tm, ensemble_size=20, n_max=10, seed=config.seed)
        return ("ly_lambda = smallest lambda with "
                "|Phi^n f| <= C*|f|_1 + lambda**n * |f| over the ensemble, "
                "capped by essential_bound\n"
                f"          = {rep.lam!r}  (C = {rep.C!r}, cap = {rep.cap!r}, "
                f"pass = {rep.passed})\n")
    raise AssertionError("unreachable")


# -- entry point ------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="besovtransfer",
        description="transfer-operator analyses of piecewise expanding interval maps",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ANALYSES:
        p = sub.add_parser(name, help=f"run the {name} analysis")
        _common_flags(p)
    pe = sub.add_parser("explain", help="print a bound's formula and current value")
    pe.add_argument("name", choices=EXPLAIN_NAMES)
    _common_flags(pe)
    return parser


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="path to the JSON run configuration")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--max-cells", type=int, default=None,
                   help="override the basis-size cap")


def _load_config(args) -> RunConfig:
    try:
        raw = json.loads(Path(args.config).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {args.config}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    config = RunConfig.from_json(raw, Path(args.out))
    if args.seed is not None:
        config.seed = args.seed
    if getattr(args, "max_cells", None) is not None:
        config.basis_cap = args.max_cells
    return config


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _load_config(args)
        if args.command == "explain":
            sys.stdout.write(explain(args.name, config))
            return EXIT_OK
        config.analyses = [args.command]
        runner = Runner(config)
        written = runner.run()
        for path in written:
            print(path)
        return EXIT_OK
    except (ConfigError, MapSpecError, CapacityError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParamsError, AssumptionError) as exc:
        print(f"assumption failure: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except (ConvergenceError, GapCollapseError, ModeMismatchError,
            NormOverflowError, InfeasibleFitError, ResolutionError,
            DegenerateFitError, BesovTransferError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
