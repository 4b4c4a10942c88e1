"""
Command-line entry point.

    meanfield expansions|solve|sweep|check [--config FILE] [--out DIR]
              [--seed N] [--threads N] [--params FILE]

Exit codes: 0 success, 1 check failure, 2 config/input error, 3 numerical
failure, 4 parameters outside the admissible region, 5 non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__, checks
from .bumps import DEFAULT_CENTER, DEFAULT_EPS_LIST, DEFAULT_R0, BumpSpec, expansion_report
from .diagnostics import SWEEP_COLUMNS, concentration_report, in_lambda, sweep
from .functional import Params, energy_values
from .minimax import MinimaxOptions, NoNegativeEndpointError, refine_critical, run_minimax
from .torus import TorusGrid, save_field, spectral_energy_values

log = logging.getLogger("meanfield")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_REGION, EXIT_NOCONV = 0, 1, 2, 3, 4, 5

DEFAULT_GRID = {"expansions": 512, "solve": 128, "sweep": 128, "check": 64}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    grid_n: int | None = None  # None: per-command default
    lambda1: float = 30.0
    lambda2: float = 5.0
    r0: float = DEFAULT_R0
    eps_list: tuple[float, ...] = DEFAULT_EPS_LIST
    K: int = 24
    max_iters: int = 500
    step0: float = 1.0
    grad_tol: float = 5e-3
    band: float = 0.15
    seeds: tuple[float, ...] = (1.0, 1.5, 2.0)
    endpoint_r0: float = 0.45
    tol_residual: float = 1e-8
    output_dir: str = "out"
    format: str = "csv"
    seed: int = 42
    threads: int = 1
    extra: dict = field(default_factory=dict, repr=False)

    def minimax_options(self) -> MinimaxOptions:
        return MinimaxOptions(
            K=self.K,
            max_iters=self.max_iters,
            step0=self.step0,
            grad_tol=self.grad_tol,
            band=self.band,
            seeds=self.seeds,
            endpoint_r0=self.endpoint_r0,
        )

    def echo(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "extra"}


def _float_list(text: str) -> tuple[float, ...]:
    parts = [t.strip() for t in text.split(",") if t.strip()]
    if not parts:
        raise ValueError("empty list")
    return tuple(float(t) for t in parts)


_PARSERS = {
    "grid_n": int,
    "lambda1": float,
    "lambda2": float,
    "r0": float,
    "eps_list": _float_list,
    "K": int,
    "max_iters": int,
    "step0": float,
    "grad_tol": float,
    "band": float,
    "seeds": _float_list,
    "endpoint_r0": float,
    "tol_residual": float,
    "output_dir": str,
    "format": str,
    "seed": int,
    "threads": int,
}


def parse_config(text: str) -> RunConfig:
    """Strict ``key = value`` parser; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if not val:
            raise ConfigError(f"line {lineno}: missing value for {key!r}")
        try:
            values[key] = _PARSERS[key](val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    cfg = RunConfig(**values)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    try:
        if cfg.grid_n is not None:
            TorusGrid(cfg.grid_n)
        Params(cfg.lambda1, cfg.lambda2)
        cfg.minimax_options()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not 0 < cfg.r0 < 0.5 or not 0 < cfg.endpoint_r0 < 0.5:
        raise ConfigError("r0 and endpoint_r0 must lie in (0, 0.5)")
    if not cfg.tol_residual > 0:
        raise ConfigError("tol_residual must be positive")
    if cfg.format not in ("csv", "json"):
        raise ConfigError(f"format must be csv or json, got {cfg.format!r}")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")


# Output writers.  Floats are written with 17 significant digits everywhere.

def _num(x) -> str:
    if isinstance(x, bool) or x is None:
        return json.dumps(x)
    if isinstance(x, float):
        return "null" if not math.isfinite(x) else format(x, ".17g")
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return json.dumps(x, ensure_ascii=False)


def to_json(obj, indent: int = 0) -> str:
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {to_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + ", ".join(to_json(v, indent + 1) for v in obj) + "]"
    if isinstance(obj, (float, np.floating)):
        return _num(float(obj))
    return _num(obj)


def _cell(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _table_text(columns, rows, fmt: str) -> str:
    if fmt == "json":
        return to_json([dict(zip(columns, r)) for r in rows]) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(x) for x in r])
    return buf.getvalue()


class Outputs:
    def __init__(self, out_dir: Path):
        self.dir = out_dir
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def write(self, name: str, text: str) -> None:
        _atomic_write(self.dir / name, text)
        self.files.append(name)

    def table(self, stem: str, columns, rows, fmt: str) -> None:
        self.write(f"{stem}.{fmt}", _table_text(columns, rows, fmt))


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _grid(cfg: RunConfig, command: str) -> TorusGrid:
    return TorusGrid(cfg.grid_n or DEFAULT_GRID[command])


# Commands.  Each returns (exit code, stage status dict).

def cmd_expansions(cfg: RunConfig, out: Outputs) -> tuple[int, dict]:
    grid = _grid(cfg, "expansions")
    eps_list = tuple(cfg.eps_list)
    try:
        if len(eps_list) < 4:
            raise ConfigError(f"eps_list needs at least 4 values, got {len(eps_list)}")
        for e in eps_list:
            BumpSpec(DEFAULT_CENTER, e, cfg.r0)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG, {"expansions": "config error"}
    try:
        rep = expansion_report(DEFAULT_CENTER, cfg.r0, eps_list, Params(cfg.lambda1, cfg.lambda2), grid, threads=cfg.threads)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG, {"expansions": "config error"}
    rows = [
        (r.eps, r.ln_inv_eps, r.dirichlet_energy, r.ln_int_exp_plus, r.ln_int_exp_minus, r.I_value)
        for r in rep.rows
    ]
    if not all(math.isfinite(x) for r in rows for x in r):
        print("error: non-finite energies in expansion report", file=sys.stderr)
        return EXIT_NUMERIC, {"expansions": "numerical failure"}
    out.table("expansions", ("eps", "ln_inv_eps", "dirichlet", "ln_exp_plus", "ln_exp_minus", "I_value"), rows, cfg.format)
    short = {"dirichlet_energy": "dirichlet", "ln_int_exp_plus": "ln_exp_plus", "ln_int_exp_minus": "ln_exp_minus", "I_value": "I_value"}
    slopes = {"grid_n": grid.n, "r0": cfg.r0, "lambda1": cfg.lambda1, "lambda2": cfg.lambda2}
    for col, name in short.items():
        slopes[f"slope_{name}"] = rep.slopes[col]
        slopes[f"intercept_{name}"] = rep.intercepts[col]
        slopes[f"residual_{name}"] = rep.residuals[col]
        slopes[f"corrected_slope_{name}"] = rep.corrected_slopes[col]
    x = np.array([r.ln_inv_eps for r in rep.rows])
    mt = rep.column("ln_int_exp_plus") - rep.column("dirichlet_energy") / (16 * math.pi)
    slopes["slope_moser_trudinger"] = float(np.polyfit(x, mt, 1)[0])
    out.write("slopes.json", to_json(slopes) + "\n")
    print(f"slope dirichlet {rep.slopes['dirichlet_energy']:.6g}  ln_exp_plus {rep.slopes['ln_int_exp_plus']:.6g}  "
          f"ln_exp_minus {rep.slopes['ln_int_exp_minus']:.6g}  I {rep.slopes['I_value']:.6g}")
    return EXIT_OK, {"expansions": "ok"}


def cmd_solve(cfg: RunConfig, out: Outputs) -> tuple[int, dict]:
    grid = _grid(cfg, "solve")
    p = Params(cfg.lambda1, cfg.lambda2)
    verdict = in_lambda(p, grid)
    if not verdict.in_region:
        print(f"error: ({p.lambda1:g}, {p.lambda2:g}) lies outside the admissible region "
              f"(sum < 4pi^2: {verdict.sum_check}, max > 8pi: {verdict.max_check})", file=sys.stderr)
        return EXIT_REGION, {"region": "outside"}
    try:
        res = run_minimax(p, grid, cfg.minimax_options())
    except NoNegativeEndpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC, {"region": "inside", "minimax": "no endpoint"}
    out.table("history", ("iter", "max_energy", "grad_norm"),
              [(i, e, g) for i, (e, g) in enumerate(res.history)], cfg.format)
    status = {"region": "inside", "minimax": "converged" if res.converged else "not converged"}
    summary = {
        "lambda1": p.lambda1,
        "lambda2": p.lambda2,
        "grid_n": grid.n,
        "minimax_converged": res.converged,
        "seed_used": res.seed,
        "stagnated_seeds": list(res.stagnated_seeds),
        "iterations": res.iterations,
        "c_est": res.c_est,
    }
    if not res.converged:
        summary["converged"] = False
        out.write("summary.json", to_json(summary) + "\n")
        print("error: minimax did not converge for any seed", file=sys.stderr)
        return EXIT_NOCONV, status
    u, r = refine_critical(res.argmax, p, cfg.tol_residual)
    rep = concentration_report(u, p)
    save_field(u, out.dir / "solution.field")
    out.files.append("solution.field")
    ok = r <= cfg.tol_residual
    summary.update(
        converged=ok,
        residual=r,
        h1_norm=math.sqrt(spectral_energy_values(grid, u.values)),
        I_value=energy_values(grid, u.values, p),
        classification=rep.classification,
        sup_plus=rep.sup_plus,
        sup_minus=rep.sup_minus,
        peaks=[{"location": list(q.location), "side": q.side, "ball_mass": q.ball_mass} for q in rep.peaks],
    )
    out.write("summary.json", to_json(summary) + "\n")
    status["refine"] = "ok" if ok else "residual above tol"
    print(f"c_est {res.c_est:.10g}  residual {r:.3e}  I(u*) {summary['I_value']:.10g}  {rep.classification}")
    return (EXIT_OK if ok else EXIT_NOCONV), status


def read_params_file(path: Path) -> list[Params]:
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read params file: {exc}") from exc
    rows = [r for r in csv.reader(io.StringIO(text)) if any(c.strip() for c in r)]
    if not rows or [c.strip() for c in rows[0]] != ["lambda1", "lambda2"]:
        raise ConfigError("params file must start with the header 'lambda1,lambda2'")
    if len(rows) == 1:
        raise ConfigError("params file has no parameter rows")
    out = []
    for k, r in enumerate(rows[1:], 2):
        try:
            if len(r) != 2:
                raise ValueError("expected two columns")
            out.append(Params(float(r[0]), float(r[1])))
        except ValueError as exc:
            raise ConfigError(f"params file line {k}: {exc}") from exc
    return out


def cmd_sweep(cfg: RunConfig, out: Outputs, params_path: Path | None) -> tuple[int, dict]:
    if params_path is None:
        print("error: sweep needs --params FILE", file=sys.stderr)
        return EXIT_CONFIG, {"sweep": "config error"}
    try:
        plist = read_params_file(params_path)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG, {"sweep": "config error"}
    rows = sweep(plist, _grid(cfg, "sweep"), cfg.minimax_options(), tol=cfg.tol_residual, threads=cfg.threads)
    out.table("sweep", SWEEP_COLUMNS, [tuple(getattr(r, c) for c in SWEEP_COLUMNS) for r in rows], cfg.format)
    for r in rows:
        print(f"({r.lambda1:g}, {r.lambda2:g}) {r.status}")
    bad = [r for r in rows if r.in_region and not r.converged]
    return (EXIT_NOCONV if bad else EXIT_OK), {"sweep": f"{len(rows) - len(bad)}/{len(rows)} rows ok"}


def cmd_check(cfg: RunConfig, out: Outputs) -> tuple[int, dict]:
    results = checks.run_all(_grid(cfg, "check"), cfg.seed)
    for r in results:
        print(f"{r.name:<13} {'PASS' if r.passed else 'FAIL'}  worst={r.worst:.3e}  ({r.detail})")
    out.write("check.json", to_json({r.name: {"passed": r.passed, "samples": r.samples, "worst": r.worst} for r in results}) + "\n")
    ok = all(r.passed for r in results)
    return (EXIT_OK if ok else EXIT_CHECK), {r.name: ("pass" if r.passed else "fail") for r in results}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="meanfield", description="Mean field equation on the flat torus.")
    ap.add_argument("command", choices=("expansions", "solve", "sweep", "check"))
    ap.add_argument("--config", type=Path, help="key = value configuration file")
    ap.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    ap.add_argument("--seed", type=int, help="64-bit seed for random samples (default 42)")
    ap.add_argument("--threads", type=int, help="worker threads for independent rows (default 1)")
    ap.add_argument("--params", type=Path, help="CSV with header lambda1,lambda2 (sweep)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config.read_text()) if args.config else RunConfig()
        overrides = {k: v for k, v in (("seed", args.seed), ("threads", args.threads)) if v is not None}
        if args.out is not None:
            overrides["output_dir"] = str(args.out)
        cfg = replace(cfg, **overrides)
        validate(cfg)
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Outputs(Path(cfg.output_dir))
    start = time.perf_counter()
    commands = {
        "expansions": lambda: cmd_expansions(cfg, out),
        "solve": lambda: cmd_solve(cfg, out),
        "sweep": lambda: cmd_sweep(cfg, out, args.params),
        "check": lambda: cmd_check(cfg, out),
    }
    try:
        code, status = commands[args.command]()
    except (ArithmeticError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        code, status = EXIT_NUMERIC, {args.command: "numerical failure"}

    manifest = {
        "command": args.command,
        "version": __version__,
        "config": cfg.echo(),
        "exit_code": code,
        "wall_clock_seconds": time.perf_counter() - start,
        "status": status,
        "outputs": sorted(out.files),
    }
    _atomic_write(out.dir / "manifest.json", to_json(manifest) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
