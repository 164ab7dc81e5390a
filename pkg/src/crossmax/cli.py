"""Command-line interface: ``crossmax {check|solve|eigen|counterexample|export}``.

Exit codes: 0 verified / expectation met, 2 hypotheses unmet or
precondition failure, 3 internal or I/O error, 4 configuration error.
"""

from __future__ import annotations

import argparse
import datetime
import inspect
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .counterexample_suite import COUNTEREXAMPLES
from .discrete_operator import Problem, assemble_scalar, assemble_system
from .errors import ConfigError, CrossmaxError, ExprSyntaxError, PreconditionError
from .field_model import Grid, MatrixField, ScalarField, VectorField, parse_coeff
from .linear_core import principal_eigenpair, solve
from .mp_verifier import THEOREMS, VERIFIED, verify

__all__ = ["RunConfig", "load_config", "build_problem", "write_fields_csv", "read_fields_csv", "main",
           "EXIT_OK", "EXIT_UNMET", "EXIT_INTERNAL", "EXIT_CONFIG", "SCHEMA_VERSION"]

log = logging.getLogger("crossmax")

EXIT_OK = 0
EXIT_UNMET = 2
EXIT_INTERNAL = 3
EXIT_CONFIG = 4
SCHEMA_VERSION = "1.0"
DEFAULT_SEED = 42

_expr = {"type": ["string", "number"]}
_matrix = {"type": "array", "items": {"type": "array", "items": _expr, "minItems": 1}, "minItems": 1}
_auto_or_number = {"anyOf": [{"type": "number"}, {"const": "auto"}]}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["domain", "A"],
    "properties": {
        "domain": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dim", "n_cells"],
            "properties": {"dim": {"enum": [1, 2]}, "n_cells": {"type": "integer", "minimum": 4}},
        },
        "m": {"type": "integer", "minimum": 1},
        "A": _matrix,
        "B": {"type": "array", "items": _matrix},
        "K": _matrix,
        "T": _matrix,
        "M": _matrix,
        "P_pos": _matrix,
        "P_coop": _matrix,
        "k": _auto_or_number,
        "kappa": _auto_or_number,
        "F": {"type": "array", "items": _expr, "minItems": 1},
        "theorem": {"enum": list(THEOREMS)},
        "case": {"enum": ["i", "ii", "iii"]},
        "nu_star": {"enum": [1, -1]},
        "ellipticity": {"enum": ["quadratic", "spectral"]},
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"tol_pos": {"type": "number", "exclusiveMinimum": 0}},
        },
        "sample_density": {"type": "integer", "minimum": 1},
    },
}


@dataclass
class RunConfig:
    """Validated run configuration (expression strings kept verbatim)."""

    dim: int
    n_cells: int
    A: list
    m: int
    B: Optional[list] = None
    K: Optional[list] = None
    T: Optional[list] = None
    M: Optional[list] = None
    P_pos: Optional[list] = None
    P_coop: Optional[list] = None
    k: object = "auto"
    kappa: object = "auto"
    F: Optional[list] = None
    theorem: str = "GenMPMat"
    case: str = "ii"
    nu_star: int = 1
    ellipticity: str = "quadratic"
    tol_pos: Optional[float] = None
    sample_density: Optional[int] = None
    raw: dict = field(default_factory=dict, repr=False)


def _check_square(name: str, mat, m: int) -> None:
    if len(mat) != m or any(len(row) != m for row in mat):
        raise ConfigError(f"{name}: expected a {m}x{m} matrix")


def _check_exprs(name: str, obj) -> None:
    if isinstance(obj, list):
        for i, item in enumerate(obj):
            _check_exprs(f"{name}[{i}]", item)
    elif isinstance(obj, str):
        try:
            parse_coeff(obj)
        except ExprSyntaxError as exc:
            raise ConfigError(f"{name}: {exc}: {obj!r}") from exc


def load_config(source) -> RunConfig:
    """Parse and validate a configuration document (path, JSON text or dict).

    Every expression is parsed before any computation.

    Raises
    ------
    ConfigError
        Unreadable file, bad JSON, schema violation, size mismatch or a
        malformed expression (with its byte offset).
    """
    if isinstance(source, dict):
        doc = source
    else:
        try:
            text = Path(source).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {source}: {exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {path}: {exc.message}") from exc
    A = doc["A"]
    m = int(doc.get("m", len(A)))
    _check_square("A", A, m)
    for key in ("K", "T", "M", "P_pos", "P_coop"):
        if key in doc:
            _check_square(key, doc[key], m)
    if "B" in doc:
        if len(doc["B"]) != doc["domain"]["dim"]:
            raise ConfigError("B: expected one matrix per axis")
        for ax, Bx in enumerate(doc["B"]):
            _check_square(f"B[{ax}]", Bx, m)
    if "F" in doc and len(doc["F"]) != m:
        raise ConfigError(f"F: expected {m} components")
    for key in ("A", "B", "K", "T", "M", "F", "P_pos", "P_coop"):
        if key in doc:
            _check_exprs(key, doc[key])
    tol = doc.get("tolerances", {}).get("tol_pos")
    return RunConfig(doc["domain"]["dim"], doc["domain"]["n_cells"], A, m, doc.get("B"), doc.get("K"),
                     doc.get("T"), doc.get("M"), doc.get("P_pos"), doc.get("P_coop"), doc.get("k", "auto"),
                     doc.get("kappa", "auto"), doc.get("F"), doc.get("theorem", "GenMPMat"),
                     doc.get("case", "ii"), doc.get("nu_star", 1), doc.get("ellipticity", "quadratic"), tol,
                     doc.get("sample_density"), doc)


def _numeric_matrix(mat, grid: Grid) -> np.ndarray:
    M = MatrixField.from_entries(mat, grid)
    if not M.is_constant(0.0):
        raise ConfigError("matrix must be constant")
    return np.array(M.values[0])


def build_problem(cfg: RunConfig, grid: Optional[Grid] = None) -> Problem:
    """Evaluate the configuration's fields on its grid."""
    grid = grid or Grid(cfg.dim, cfg.n_cells)
    A = MatrixField.from_entries(cfg.A, grid)
    K = MatrixField.from_entries(cfg.K, grid) if cfg.K is not None else None
    F = VectorField.from_exprs(cfg.F, grid) if cfg.F is not None else None
    B = [MatrixField.from_entries(Bx, grid) for Bx in cfg.B] if cfg.B is not None else None
    k = cfg.k if isinstance(cfg.k, (int, float)) else 0.0
    return Problem.build(grid, A, K=K, k=k, F=F, B=B, meta={"ellipticity": cfg.ellipticity})


# ---------------------------------------------------------------------------
# CSV fields
# ---------------------------------------------------------------------------


def write_fields_csv(path, grid: Grid, columns: dict) -> None:
    """One row per node: coordinates then the named columns (shortest
    round-trip decimals, LF line endings)."""
    names = ["x"] if grid.dim == 1 else ["x", "y"]
    coords = list(grid.coords)
    header = names + list(columns)
    data = [np.asarray(c, dtype=float) for c in coords] + [np.asarray(v, dtype=float) for v in columns.values()]
    lines = [",".join(header)]
    for row in zip(*data):
        lines.append(",".join(repr(float(v)) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_fields_csv(path) -> dict:
    """Inverse of :func:`write_fields_csv`: column name -> float array."""
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    header = lines[0].split(",")
    rows = [[float(v) for v in line.split(",")] for line in lines[1:] if line]
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    return {name: arr[:, i] for i, name in enumerate(header)}


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _write_report(out: Optional[str], command: str, result: dict, args) -> None:
    if out is None:
        return
    body = {"schema_version": SCHEMA_VERSION, "command": command, "version": __version__, "result": result}
    meta = {"schema_version": SCHEMA_VERSION, "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "seed": args.seed, "threads": _threads(), "argv": sys.argv[1:]}
    Path(out).write_text(_dump(body), encoding="utf-8", newline="\n")
    Path(str(out) + ".meta.json").write_text(_dump(meta), encoding="utf-8", newline="\n")


def _threads() -> Optional[int]:
    raw = os.environ.get("CROSSMAX_THREADS")
    if raw in (None, ""):
        return None
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"CROSSMAX_THREADS must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"CROSSMAX_THREADS must be a positive integer, got {raw!r}")
    return n


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.grid is not None:
        if args.grid < 4:
            raise ConfigError(f"--grid must be an integer >= 4, got {args.grid}")
        cfg.n_cells = args.grid
    if args.tol_pos is not None:
        cfg.tol_pos = args.tol_pos
    if args.k is not None:
        cfg.k = args.k
    if args.sample_density is not None:
        cfg.sample_density = args.sample_density
    return cfg


def _parse_k(text: str):
    if text == "auto":
        return "auto"
    try:
        return float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected 'auto' or a number, got {text!r}") from exc


def _require_config(args) -> RunConfig:
    if args.config is None:
        raise ConfigError("--config is required for this command")
    return _apply_overrides(load_config(args.config), args)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_check(args) -> int:
    cfg = _require_config(args)
    grid = Grid(cfg.dim, cfg.n_cells)
    p = build_problem(cfg, grid)
    T = _numeric_matrix(cfg.T, grid) if cfg.T is not None else None
    M = _numeric_matrix(cfg.M, grid) if cfg.M is not None else None
    extra = {"case": cfg.case, "nu_star": cfg.nu_star}
    if cfg.P_pos is not None:
        extra["P_pos"] = _numeric_matrix(cfg.P_pos, grid)
    if cfg.P_coop is not None:
        extra["P_coop"] = _numeric_matrix(cfg.P_coop, grid)
    rep = verify(p, cfg.theorem, T=T, M=M, k=cfg.k, kappa=cfg.kappa, tol_pos=cfg.tol_pos,
                 sample_density=cfg.sample_density, **extra)
    result = rep.to_dict()
    print(f"theorem {rep.theorem}: {rep.status} (k = {rep.k_used:g})")
    for h in rep.hypotheses:
        print(f"  {'pass' if h.passed else 'FAIL'}  {h.name}  margin {h.margin:.6g}  {h.detail}")
    if rep.conclusion is not None:
        c = rep.conclusion
        print(f"  conclusion: {'positive' if c.positive else 'not positive'}, min {c.min_value:.6g} "
              f"at component {c.location[0]}, node {c.location[1]}")
    if rep.counterexample_confirmed:
        print("  counterexample confirmed by the direct solve")
    _write_report(args.out, "check", result, args)
    return EXIT_OK if rep.status == VERIFIED else EXIT_UNMET


def cmd_solve(args) -> int:
    cfg = _require_config(args)
    grid = Grid(cfg.dim, cfg.n_cells)
    p = build_problem(cfg, grid)
    if cfg.k == "auto":
        log.info("k = auto has no meaning for a plain solve; using k = 0")
    W = solve(assemble_system(p), p.F)
    print(f"solved {p.m} components on {grid.n_nodes} nodes; min {np.min(W.values):.6g}, "
          f"max {np.max(W.values):.6g}")
    if args.out is not None:
        write_fields_csv(args.out, grid, {f"W{i}": W.values[i] for i in range(p.m)})
    return EXIT_OK


def cmd_eigen(args) -> int:
    if args.config is not None:
        cfg = _require_config(args)
        grid = Grid(cfg.dim, cfg.n_cells)
        p = build_problem(cfg, grid)
        ops = []
        for i in range(p.m):
            b = None if p.B is None else [ScalarField(grid, Bx.values[:, i, i]) for Bx in p.B]
            ops.append(assemble_scalar(p.A.entry(i, i), b, None, grid))
    else:
        dim = 1 if args.dim is None else args.dim
        grid = Grid(dim, args.grid or 128)
        ops = [assemble_scalar(ScalarField(grid, np.ones(grid.n_nodes)), None, None, grid)]
    cols, lams = {}, []
    for i, op in enumerate(ops):
        ep = principal_eigenpair(op)
        lams.append(ep.lambda1)
        cols[f"phi{i}"] = ep.phi.values[0]
        print(f"lambda1[{i}] = {ep.lambda1!r}")
    if args.out is not None:
        write_fields_csv(args.out, grid, cols)
    return EXIT_OK


def cmd_export(args) -> int:
    cfg = _require_config(args)
    grid = Grid(cfg.dim, cfg.n_cells)
    p = build_problem(cfg, grid)
    cols = {}
    for i in range(p.m):
        cols[f"F{i}"] = p.F.values[i]
    for i in range(p.m):
        for j in range(p.m):
            cols[f"A{i}{j}"] = p.A.values[:, i, j]
    W = solve(assemble_system(p), p.F)
    for i in range(p.m):
        cols[f"W{i}"] = W.values[i]
    if args.out is None:
        raise ConfigError("--out is required for export")
    write_fields_csv(args.out, grid, cols)
    print(f"wrote {len(cols)} columns on {grid.n_nodes} nodes to {args.out}")
    return EXIT_OK


def _runner_params(name: str, extras: Sequence[str], args) -> dict:
    runner = COUNTEREXAMPLES[name]
    sig = inspect.signature(runner)
    params = {}
    it = iter(extras)
    for tok in it:
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key, _, val = tok[2:].partition("=")
        key = key.replace("-", "_")
        if not val:
            try:
                val = next(it)
            except StopIteration:
                raise ConfigError(f"missing value for --{key}") from None
        if key not in sig.parameters:
            raise ConfigError(f"unknown parameter --{key} for counterexample {name}")
        params[key] = _parse_value(val)
    if args.grid is not None and "n" in sig.parameters:
        params.setdefault("n", args.grid)
    if args.k is not None and "k" in sig.parameters and args.k != "auto":
        params.setdefault("k", args.k)
    return params


def _parse_value(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low == "auto":
        return "auto"
    try:
        if text.lstrip("+-").isdigit():
            return int(text)
        val = float(text)
    except ValueError:
        return text
    if not math.isfinite(val):
        raise ConfigError(f"non-finite parameter value {text!r}")
    return val


def cmd_counterexample(args, extras: Sequence[str]) -> int:
    name = args.name
    if name not in COUNTEREXAMPLES:
        raise ConfigError(f"unknown counterexample {name!r}; choose from {', '.join(COUNTEREXAMPLES)}")
    params = _runner_params(name, extras, args)
    res = COUNTEREXAMPLES[name](**params)
    print(f"counterexample {name}: expectation {'met' if res.expectation_met else 'NOT met'}")
    if res.precondition_failed:
        print("  precondition failed: " + "; ".join(res.notes))
    else:
        print(f"  rhs margin {res.rhs_margin:.6g}; witness component {res.witness_component}, "
              f"node {res.witness_node}, value {res.witness_value:.6g}")
        if res.failed_hypothesis:
            print(f"  failed hypothesis: {res.failed_hypothesis} "
                  f"({'confirmed' if res.hypothesis_confirmed else 'not confirmed'})")
    _write_report(args.out, "counterexample", res.to_dict(), args)
    return EXIT_OK if res.expectation_met else EXIT_UNMET


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


class _ArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgumentError(message)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output path (report JSON or CSV)")
    common.add_argument("--grid", type=int, help="override the number of cells per axis")
    common.add_argument("--tol-pos", type=float, help="absolute positivity tolerance")
    common.add_argument("--k", type=_parse_k, help="'auto' or a fixed shift")
    common.add_argument("--sample-density", type=int, help="Green source sampling density")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED, help="seed recorded in the metadata")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = _Parser(prog="crossmax", description="Numerical maximum-principle checks for cross-diffusion elliptic systems.",
                     epilog="exit codes: 0 ok, 2 hypotheses unmet, 3 internal or I/O error, 4 config error")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("check", parents=[common], help="verify a theorem's hypotheses and conclusion")
    sub.add_parser("solve", parents=[common], help="solve the configured system")
    pe = sub.add_parser("eigen", parents=[common], help="principal eigenpairs")
    pe.add_argument("--dim", type=int, choices=[1, 2], help="dimension without a config")
    pc = sub.add_parser("counterexample", parents=[common], help="run a named counterexample")
    pc.add_argument("name")
    pc.add_argument("--auto", action="store_true", help="search the admissible ranges (the default)")
    sub.add_parser("export", parents=[common], help="export fields as CSV")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the command line; returns the process exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _parser()
    try:
        args, extras = parser.parse_known_args(argv)
    except _ArgumentError as exc:
        print(f"crossmax: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        threads = _threads()
        if extras and args.command != "counterexample":
            raise ConfigError(f"unrecognized arguments: {' '.join(extras)}")
        with threadpool_limits(limits=threads):
            if args.command == "check":
                return cmd_check(args)
            if args.command == "solve":
                return cmd_solve(args)
            if args.command == "eigen":
                return cmd_eigen(args)
            if args.command == "export":
                return cmd_export(args)
            return cmd_counterexample(args, extras)
    except ConfigError as exc:
        print(f"crossmax: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PreconditionError as exc:
        print(f"crossmax: precondition failed: {exc}", file=sys.stderr)
        return EXIT_UNMET
    except OSError as exc:
        print(f"crossmax: I/O error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except CrossmaxError as exc:
        print(f"crossmax: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - the exit-code contract covers every failure
        log.debug("internal error", exc_info=True)
        print(f"crossmax: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
