"""Command-line front end.

Run configurations are plain ``key = value`` text, optionally grouped under
``[section]`` headers (``[pref1]`` + ``kind = ...`` is the same as
``pref1.kind = ...``). ``#`` starts a comment.

Machine-readable tables go to stdout (or ``--out``) as CSV with a fixed
header and floats at 12 significant digits; the human-readable report goes
to stderr. Exit codes: 0 success, 1 verification failure, 2 bad config.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .geometry import (
    LEBESGUE,
    BudgetSurface3,
    Box,
    GeometryError,
    Interval,
    MeasureSpec,
    ProbabilitySimplex,
    UnitTriangle,
    sample,
)
from .contour import BACKENDS
from .mechanism import MechanismError, certify, refine_and_compare
from .preferences import (
    Euclidean,
    FehrSchmidt,
    LinearVNM,
    PiecewiseLinear1D,
    PreferenceError,
    PublicGoodLog,
)
from .scenarios import list_scenarios, run_scenario
from .solver import ContourSettings, Problem, solve_maxmin_grid, verify_compromise

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(";", ",").split(",") if t.strip())


def _knots(text: str) -> tuple[tuple[float, float], ...]:
    out = []
    for item in text.split(","):
        if not item.strip():
            continue
        x, sep, u = item.partition(":")
        if not sep:
            raise ValueError(f"knot {item.strip()!r} is not of the form x:u")
        out.append((float(x), float(u)))
    return tuple(out)


_PREF_KEYS = {
    "kind": str,
    "params": _floats,
    "knots": _knots,
    "ideal": _floats,
    "v": _floats,
    "alpha": float,
    "beta": float,
    "theta": float,
    "own": int,
}

SCHEMA: dict[str, Any] = {
    "space.kind": str,
    "space.params": _floats,
    "measure.kind": str,
    "measure.scale": float,
    "contour.backend": str,
    "contour.n": int,
    "contour.resolution": int,
    "contour.seed": int,
    "solver.resolution": int,
    "solver.refine_iters": int,
    "solver.tol": float,
    "mechanism.mode": str,
    "mechanism.cap": int,
    "mechanism.eps_cells": float,
    "mechanism.tol_cells": float,
    "mechanism.resolution": int,
    "sample.n": int,
    "seed": int,
    "output": str,
    **{f"pref{i}.{k}": t for i in (1, 2) for k, t in _PREF_KEYS.items()},
}

TYPE_NAMES = {str: "text", int: "integer", float: "number", _floats: "number list", _knots: "knot list"}


@dataclass
class RunConfig:
    space: Any
    pref1: Any
    pref2: Any
    measure: MeasureSpec = LEBESGUE
    contour: ContourSettings = ContourSettings()
    solver: dict = field(default_factory=lambda: {"resolution": 64, "refine_iters": 3, "tol": None})
    mechanism: dict = field(
        default_factory=lambda: {
            "mode": "auto", "cap": 14, "eps_cells": 2.0, "tol_cells": 5.0, "resolution": 400,
        }
    )
    sample_n: int = 1000
    seed: int = 0
    output: Optional[str] = None

    def problem(self) -> Problem:
        return Problem(self.space, self.pref1, self.pref2, self.measure, self.contour)


def _tokenize(text: str) -> dict[str, tuple[Any, int]]:
    values: dict[str, tuple[Any, int]] = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key = key.strip()
        if section and "." not in key:
            key = f"{section}.{key}"
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", lineno)
        conv = SCHEMA[key]
        try:
            values[key] = (conv(val.strip()), lineno)
        except ValueError:
            raise ConfigError(f"type mismatch for {key!r}: expected {TYPE_NAMES[conv]}", lineno) from None
    return values


def _build_space(kind: str, params: tuple, line: int):
    try:
        if kind == "interval":
            return Interval(*params) if params else Interval()
        if kind == "box":
            if not params or len(params) % 2:
                raise ConfigError("box params need lo,hi pairs", line)
            return Box(tuple(zip(params[::2], params[1::2])))
        if kind == "unit_triangle":
            return UnitTriangle()
        if kind == "simplex":
            return ProbabilitySimplex(int(params[0]) if params else 3)
        if kind == "budget_surface":
            return BudgetSurface3()
    except (GeometryError, TypeError) as exc:
        raise ConfigError(str(exc), line) from None
    raise ConfigError(f"unknown space kind {kind!r}", line)


def _build_pref(i: int, vals: dict, default_line: int):
    def get(key, default=None):
        v = vals.get(f"pref{i}.{key}")
        return (v[0], v[1]) if v else (default, default_line)

    kind, kline = get("kind")
    if kind is None:
        raise ConfigError(f"missing required key 'pref{i}.kind'")
    params, pline = get("params", ())
    own, _ = get("own", i)
    try:
        if kind == "piecewise_linear":
            knots, _ = get("knots")
            if knots is None:
                knots = tuple(zip(params[::2], params[1::2]))
            return PiecewiseLinear1D(knots)
        if kind == "euclidean":
            ideal, _ = get("ideal", params)
            return Euclidean(ideal)
        if kind == "linear_vnm":
            v, _ = get("v", params)
            return LinearVNM(v)
        if kind == "fehr_schmidt":
            a, _ = get("alpha", params[0] if len(params) > 0 else None)
            b, bline = get("beta", params[1] if len(params) > 1 else None)
            if a is None or b is None:
                raise ConfigError(f"pref{i} needs alpha and beta", kline)
            try:
                return FehrSchmidt(a, b, own)
            except PreferenceError as exc:
                raise ConfigError(str(exc), bline) from None
        if kind == "public_good":
            t, _ = get("theta", params[0] if params else None)
            if t is None:
                raise ConfigError(f"pref{i} needs theta", kline)
            return PublicGoodLog(t, own)
    except PreferenceError as exc:
        raise ConfigError(str(exc), kline) from None
    raise ConfigError(f"unknown preference kind {kind!r}", kline)


def parse_config(text: str) -> RunConfig:
    """Validate a run configuration; errors carry the offending line number."""
    vals = _tokenize(text)

    def get(key, default=None):
        return vals[key][0] if key in vals else default

    def line(key):
        return vals[key][1] if key in vals else None

    if "space.kind" not in vals:
        raise ConfigError("missing required key 'space.kind'")
    space = _build_space(get("space.kind"), get("space.params", ()), line("space.kind"))

    mkind = get("measure.kind", "lebesgue")
    if mkind not in ("lebesgue", "lebesgue_normalized"):
        raise ConfigError(f"unsupported measure kind {mkind!r}", line("measure.kind"))
    try:
        measure = MeasureSpec(mkind, scale=get("measure.scale", 1.0))
    except GeometryError as exc:
        raise ConfigError(str(exc), line("measure.scale")) from None

    p1 = _build_pref(1, vals, line("pref1.kind"))
    p2 = _build_pref(2, vals, line("pref2.kind"))

    seed = get("seed", 0)
    backend = get("contour.backend", "grid")
    if backend not in BACKENDS:
        raise ConfigError(f"contour.backend must be one of {', '.join(BACKENDS)}", line("contour.backend"))
    contour = ContourSettings(
        backend, get("contour.resolution", 400), get("contour.n", 100_000), get("contour.seed", seed)
    )
    for key in ("contour.resolution", "contour.n", "solver.resolution", "mechanism.resolution", "sample.n"):
        if key in vals and vals[key][0] < 1:
            raise ConfigError(f"{key} must be positive", line(key))
    mode = get("mechanism.mode", "auto")
    if mode not in ("auto", "exhaustive", "family"):
        raise ConfigError("mechanism.mode must be auto, exhaustive or family", line("mechanism.mode"))
    return RunConfig(
        space=space,
        pref1=p1,
        pref2=p2,
        measure=measure,
        contour=contour,
        solver={
            "resolution": get("solver.resolution", 64),
            "refine_iters": get("solver.refine_iters", 3),
            "tol": get("solver.tol"),
        },
        mechanism={
            "mode": mode,
            "cap": get("mechanism.cap", 14),
            "eps_cells": get("mechanism.eps_cells", 2.0),
            "tol_cells": get("mechanism.tol_cells", 5.0),
            "resolution": get("mechanism.resolution", 400),
        },
        sample_n=get("sample.n", 1000),
        seed=seed,
        output=get("output"),
    )


# -- output --------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "%.12g" % v
    return str(v)


def _table(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _pt(x) -> str:
    return "(" + ", ".join("%.6g" % v for v in np.atleast_1d(x)) + ")"


def _xcols(dim: int) -> list[str]:
    return [f"x{i + 1}" for i in range(dim)]


# -- subcommands ---------------------------------------------------------------


def _cmd_solve(cfg: RunConfig, args, log) -> tuple[int, str]:
    p = cfg.problem()
    res = args.resolution or cfg.solver["resolution"]
    r = solve_maxmin_grid(p, res, cfg.solver["refine_iters"], cfg.solver["tol"])
    log(f"{len(r.solutions)} compromise solution(s), value {r.value:.12g} [{r.backend}, tol {r.tol:.3g}]")
    if not r.regular_ok:
        log("non-regular: the regularity checks fail at a verified optimum")
    rows = [
        [*x, m[0], m[1], min(m), rep.regular_ok, r.backend, r.tol]
        for x, m, rep in zip(r.solutions, r.measures, r.reports)
    ]
    header = _xcols(p.space.ambient_dim) + ["m1", "m2", "value", "pass", "backend", "tol"]
    return EXIT_OK, _table(header, rows)


def _parse_at(text: str, dim: int) -> np.ndarray:
    try:
        pt = np.array(_floats(text))
    except ValueError:
        raise ConfigError(f"--at needs {dim} comma-separated numbers") from None
    if len(pt) != dim:
        raise ConfigError(f"--at needs {dim} comma-separated numbers")
    return pt


def _cmd_verify(cfg: RunConfig, args, log) -> tuple[int, str]:
    p = cfg.problem()
    if args.at is None:
        raise ConfigError("verify needs --at <coords>")
    x = _parse_at(args.at, p.space.ambient_dim)
    if not p.space.contains_many(x)[0]:
        raise ConfigError("--at point is outside the policy space")
    res = args.resolution or cfg.solver["resolution"]
    tol = cfg.solver["tol"] if cfg.solver["tol"] is not None else 5.0 / res * p.total
    best = solve_maxmin_grid(p, res, cfg.solver["refine_iters"], tol, verify=False)
    rep = verify_compromise(p, x, tol, seed=cfg.seed)
    optimal = min(rep.m1, rep.m2) >= best.value - tol
    ok = rep.regular_ok and optimal
    log(
        f"equal_measures={rep.equal_measures} min_bound={rep.min_bound} "
        f"pareto_ok={rep.pareto_ok} maxmin_value_reached={optimal} [{p.contour.backend}, tol {tol:.3g}]"
    )
    header = _xcols(p.space.ambient_dim) + ["m1", "m2", "value", "pass", "backend", "tol"]
    rows = [[*x, rep.m1, rep.m2, min(rep.m1, rep.m2), ok, p.contour.backend, tol]]
    return (EXIT_OK if ok else EXIT_FAIL), _table(header, rows)


def _cmd_mechanism(cfg: RunConfig, args, log) -> tuple[int, str]:
    p = cfg.problem()
    mech = cfg.mechanism
    res = args.resolution or mech["resolution"]
    sol = solve_maxmin_grid(p, cfg.solver["resolution"], cfg.solver["refine_iters"], cfg.solver["tol"])
    if not sol.regular_ok:
        log("problem is non-regular; the equilibrium construction does not apply")
        return EXIT_FAIL, ""
    rows, all_ok = [], True
    for x, m in zip(sol.solutions, sol.measures):
        c = certify(p, x, res, mech["eps_cells"], mech["tol_cells"])
        rep = c.report
        all_ok &= rep.certificate
        log(
            f"x*={_pt(x)}: gains p1 {rep.max_gain_p1:.3g} p2 {rep.max_gain_p2:.3g} "
            f"tol {rep.tol[0]:.3g}/{rep.tol[1]:.3g} certificate={rep.certificate}"
        )
        rows.append([*x, m[0], m[1], min(m), rep.certificate, p.contour.backend, max(rep.tol)])
    if p.space.dim == 1:
        for row in refine_and_compare(p, [9, 11, 13], sol.solutions, mech["mode"], mech["cap"], mech["eps_cells"]):
            log(f"grid game n={row['resolution']} ({row['mode']}): outcome {_pt(row['outcome'])}, "
                f"distance {row['distance']:.4g}")
    header = _xcols(p.space.ambient_dim) + ["m1", "m2", "value", "pass", "backend", "tol"]
    return (EXIT_OK if all_ok else EXIT_FAIL), _table(header, rows)


def _cmd_sample(cfg: RunConfig, args, log) -> tuple[int, str]:
    p = cfg.problem()
    seed = cfg.seed
    pts = sample(p.space, p.measure, seed, cfg.sample_n)
    u = p.utilities(pts)
    m = p.measures(pts)
    log(f"{len(pts)} points, seed {seed} [{p.contour.backend}]")
    header = _xcols(p.space.ambient_dim) + ["u1", "u2", "m1", "m2", "value", "backend"]
    rows = [[*x, a[0], a[1], b[0], b[1], min(b), p.contour.backend] for x, a, b in zip(pts, u, m)]
    return EXIT_OK, _table(header, rows)


def _cmd_reproduce(args, log) -> tuple[int, str]:
    if args.all:
        names = list_scenarios()
    elif args.scenario:
        names = [args.scenario]
    else:
        raise ConfigError("reproduce needs --scenario <name> or --all")
    unknown = [n for n in names if n not in list_scenarios()]
    if unknown:
        raise ConfigError(f"unknown scenario {unknown[0]!r}")
    overrides = {}
    if args.resolution:
        overrides["solver_resolution"] = args.resolution
    if args.seed is not None:
        overrides["seed"] = args.seed
    threads = max(1, int(os.environ.get("COMPROMISE_THREADS", "1") or 1))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        reports = list(pool.map(lambda n: run_scenario(n, overrides), names))
    rows = []
    for rep in reports:
        log(f"{'PASS' if rep.passed else 'FAIL'} {rep.name}" + (f" ({', '.join(rep.failures)})" if rep.failures else ""))
        for q in rep.rows:
            rows.append([rep.name, q.quantity, q.measured, q.expected, q.tol, q.passed, q.backend, q.source])
    header = ["scenario", "quantity", "measured", "expected", "tol", "pass", "backend", "source"]
    ok = all(r.passed for r in reports)
    return (EXIT_OK if ok else EXIT_FAIL), _table(header, rows)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="compromise", description="Compromise solutions and the menu game")
    ap.add_argument("command", choices=["solve", "verify", "mechanism", "reproduce", "sample"])
    ap.add_argument("--config")
    ap.add_argument("--out")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--resolution", type=int)
    ap.add_argument("--scenario")
    ap.add_argument("--all", action="store_true")
    ap.add_argument("--at")
    return ap


def run(argv: Optional[list[str]] = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr

    def log(msg: str):
        print(msg, file=stderr)

    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK

    try:
        if args.command == "reproduce":
            code, table = _cmd_reproduce(args, log)
            out_path = args.out
        else:
            if not args.config:
                raise ConfigError(f"{args.command} needs --config <path>")
            try:
                with open(args.config, encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from None
            cfg = parse_config(text)
            if args.seed is not None:
                cfg.seed = args.seed
                cfg.contour = ContourSettings(cfg.contour.backend, cfg.contour.resolution, cfg.contour.n, args.seed)
            handler = {
                "solve": _cmd_solve,
                "verify": _cmd_verify,
                "mechanism": _cmd_mechanism,
                "sample": _cmd_sample,
            }[args.command]
            code, table = handler(cfg, args, log)
            out_path = args.out or cfg.output
    except ConfigError as exc:
        log(f"config error: {exc}")
        return EXIT_CONFIG
    except (MechanismError, GeometryError, PreferenceError) as exc:
        log(f"error: {exc}")
        return EXIT_CONFIG

    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(table)
    else:
        stdout.write(table)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
