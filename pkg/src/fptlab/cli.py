"""
Command-line entry point.

    fptlab density            closed form, Girsanov MC and direct MC on an s grid
    fptlab cdf                P(T < t) on a grid of t, closed form and direct MC
    fptlab bridge-expectation E exp(-int f'' X) over Bessel bridges per s
    fptlab residual-report    finite-difference PDE residuals
    fptlab cross-validate     all three density routes with z-scores

Settings come from an optional JSON file (--config) and are overridden by
flags. Exit codes: 0 ok, 2 config, 3 boundary, 4 nonconvergent closed form,
5 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .boundary import Boundary, BoundaryError, build_boundary
from .kernels import (
    DomainError,
    EvalPoint,
    QuadratureFailure,
    forward_fundamental_solution,
    green_G,
    kernel_H,
    schrodinger_direct_term,
)
from .montecarlo import (
    McParams,
    bridge_functional_estimate,
    configure_threads,
    direct_hitting_density,
    girsanov_density_curve,
    hit_fraction,
    simulate_hitting_times,
)
from .quadrature import NonconvergentLimit, QuadratureSpec, fpt_cdf, fpt_density
from .validation import cross_route_report, image_defect, residual_report

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BOUNDARY = 3
EXIT_NONCONVERGENT = 4
EXIT_NUMERIC = 5

SCHEMA_PATH = Path(__file__).parent / "schemas" / "output.schema.json"

COLUMNS = {
    "density": ["s", "phi_closed", "verdict", "phi_girsanov_mc", "stderr_g", "phi_direct_mc", "stderr_d"],
    "cdf": ["t", "cdf_closed", "verdict", "cdf_direct_mc", "stderr_d"],
    "bridge-expectation": ["s", "mean", "stderr", "n_paths", "steps", "seed"],
    "residual-report": [
        "operator", "term", "t", "a", "tau", "b", "s",
        "residual_h1", "residual_h2", "residual_h3", "ratio_1", "ratio_2",
        "order", "limit", "predicted_limit", "verdict",
    ],
    "cross-validate": [
        "s", "phi_closed", "verdict", "singular_coefficient",
        "phi_girsanov_mc", "stderr_g", "phi_direct_mc", "stderr_d",
        "z_closed_girsanov", "z_closed_direct", "z_girsanov_direct",
        "verdict_closed_girsanov", "verdict_closed_direct", "verdict_girsanov_direct",
        "negative_mass_G",
    ],
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    boundary: str | None = None
    s_start: float | None = None
    s_stop: float | None = None
    s_count: int | None = None
    n_paths: int = 100_000
    steps: int = 1024
    bins: int = 64
    seed: int | None = None
    eps0: float = 1e-2
    eps_terms: int = 10
    eps_ratio: float = 0.5
    abs_tol: float = 1e-10
    truncation_sigmas: float = 12.0
    max_panels: int = 2**20
    v_override: float | None = None
    points: int = 5
    out: str | None = None
    format: str = "csv"

    def quadrature(self) -> QuadratureSpec:
        try:
            return QuadratureSpec(
                abs_tol=self.abs_tol,
                max_panels=self.max_panels,
                truncation_sigmas=self.truncation_sigmas,
                eps0=self.eps0,
                eps_ratio=self.eps_ratio,
                eps_terms=self.eps_terms,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def mc(self) -> McParams:
        try:
            return McParams(n_paths=self.n_paths, steps=self.steps, seed=self.seed, bins=self.bins)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def grid(self) -> np.ndarray:
        if None in (self.s_start, self.s_stop, self.s_count):
            raise ConfigError("the s grid needs s_start, s_stop and s_count")
        start, stop, count = float(self.s_start), float(self.s_stop), int(self.s_count)
        if count < 1:
            raise ConfigError("s_count must be >= 1")
        if not (math.isfinite(start) and math.isfinite(stop)) or start <= 0 or stop < start:
            raise ConfigError("the s grid needs 0 < s_start <= s_stop")
        if count == 1 and stop != start:
            raise ConfigError("a single-point grid needs s_start == s_stop")
        return np.linspace(start, stop, count)


_INT_KEYS = {"s_count", "n_paths", "steps", "bins", "seed", "eps_terms", "max_panels", "points"}
_FLOAT_KEYS = {"s_start", "s_stop", "eps0", "eps_ratio", "abs_tol", "truncation_sigmas", "v_override"}
_STR_KEYS = {"boundary", "out", "format"}


def _coerce(key: str, value):
    if value is None:
        return None
    if key in _INT_KEYS:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(f"{key} must be an integer")
        return int(value)
    if key in _FLOAT_KEYS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string")
    return value


def load_config(path: str | None, overrides: dict) -> RunConfig:
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    merged = {k: _coerce(k, v) for k, v in data.items()}
    merged.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig(**merged)
    if cfg.seed is None:
        raise ConfigError("a seed is required (--seed or \"seed\" in the config)")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must be in [0, 2^64)")
    if cfg.format not in ("csv", "json"):
        raise ConfigError("format must be csv or json")
    if cfg.boundary is None:
        raise ConfigError("a boundary is required (--boundary or \"boundary\" in the config)")
    return cfg


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _json_value(x):
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def render(command: str, cfg: RunConfig, rows: list[list], exit_code: int) -> str:
    columns = COLUMNS[command]
    if cfg.format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(x) for x in row])
        return buf.getvalue()
    config = {k: _json_value(v) for k, v in asdict(cfg).items() if k not in ("out", "format")}
    doc = {
        "command": command,
        "boundary": cfg.boundary,
        "config": config,
        "columns": columns,
        "rows": [{c: _json_value(x) for c, x in zip(columns, row)} for row in rows],
        "exit_code": exit_code,
    }
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def _emit(text: str, out: str | None):
    if out is None:
        sys.stdout.write(text)
        return
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# Commands: each returns (rows, exit code, summary lines)
# ---------------------------------------------------------------------------


def cmd_density(cfg: RunConfig, bd: Boundary):
    grid = cfg.grid()
    spec, mc = cfg.quadrature(), cfg.mc()
    closed = fpt_density(grid, bd, spec, v_override=cfg.v_override)
    gir = girsanov_density_curve(bd, grid, mc.n_paths, mc.steps, mc.seed)
    dire = direct_hitting_density(bd, grid, mc.n_paths, mc.steps, mc.seed, bins=mc.bins)
    rows = [
        [grid[i], closed.value[i], closed.verdict[i], gir.value[i], gir.stderr[i], dire.value[i], dire.stderr[i]]
        for i in range(len(grid))
    ]
    bad = int(closed.nonconvergent.sum())
    summary = [f"{bad} of {len(grid)} closed-form points nonconvergent"] if bad else []
    return rows, (EXIT_NONCONVERGENT if bad else EXIT_OK), summary


def cmd_cdf(cfg: RunConfig, bd: Boundary):
    grid = cfg.grid()
    spec, mc = cfg.quadrature(), cfg.mc()
    times = simulate_hitting_times(bd, float(grid.max()), mc.n_paths, mc.steps, mc.seed)
    rows, bad = [], 0
    for t in grid:
        try:
            value, verdict = fpt_cdf(float(t), bd, spec, v_override=cfg.v_override), "converged"
            if cfg.v_override is not None:
                verdict = "override"
        except NonconvergentLimit as exc:
            value, verdict, bad = math.nan, exc.diagnostics.verdict, bad + 1
        est = hit_fraction(times, float(t))
        rows.append([t, value, verdict, est.mean, est.stderr])
    summary = [f"{bad} of {len(grid)} closed-form points nonconvergent"] if bad else []
    return rows, (EXIT_NONCONVERGENT if bad else EXIT_OK), summary


def cmd_bridge_expectation(cfg: RunConfig, bd: Boundary):
    grid = cfg.grid()
    mc = cfg.mc()
    rows = []
    for s in grid:
        est = bridge_functional_estimate(bd, float(s), mc.n_paths, mc.steps, mc.seed)
        rows.append([s, est.mean, est.stderr, est.n_paths, est.n_steps, est.seed])
    return rows, EXIT_OK, []


# (operator, term, predicted plateau or None) at fixed points; random points follow
_RESIDUAL_CASES = [
    ("backward", schrodinger_direct_term),
    ("forward", schrodinger_direct_term),
    ("forward", forward_fundamental_solution),
    ("backward", kernel_H),
    ("forward", kernel_H),
    ("bessel", green_G),
]


def residual_points(seed: int, n: int) -> list[EvalPoint]:
    """Fixed points plus n random interior points (s = 1) drawn from ``seed``."""
    pts = [EvalPoint(0.3, 1.0, 0.8, 1.2, 1.0), EvalPoint(0.2, 1.0, 0.6, 0.9, 1.0)]
    rng = np.random.default_rng(seed)
    for _ in range(n):
        t = rng.uniform(0.05, 0.4)
        tau = rng.uniform(t + 0.15, 0.85)
        pts.append(EvalPoint(float(t), float(rng.uniform(0.4, 2.0)), float(tau), float(rng.uniform(0.4, 2.0)), 1.0))
    return pts


def cmd_residual_report(cfg: RunConfig, bd: Boundary):
    if cfg.points < 0:
        raise ConfigError("points must be >= 0")
    rows, summary = [], []
    counts: dict[tuple[str, str], list[int]] = {}
    for p in residual_points(cfg.seed, cfg.points):
        for operator, term in _RESIDUAL_CASES:
            rep = residual_report(operator, term, p, bd, s=p.s)
            predicted = math.nan
            if term is kernel_H and operator == "backward":
                predicted = -image_defect(p, bd)
            rows.append([
                operator, rep.term, p.t, p.a, p.tau, p.b, p.s,
                *rep.residuals, *rep.ratios, rep.order, rep.limit, predicted, rep.verdict,
            ])
            c = counts.setdefault((operator, rep.term), [0, 0])
            c[0] += rep.verdict == "converged"
            c[1] += 1
    for (operator, term), (ok, n) in counts.items():
        summary.append(f"{operator:8s} {term:30s} converged at order 2 on {ok}/{n} points")
    return rows, EXIT_OK, summary


def cmd_cross_validate(cfg: RunConfig, bd: Boundary):
    grid = cfg.grid()
    report = cross_route_report(bd, grid, cfg.quadrature(), cfg.mc())
    rows = [
        [
            r.s, r.phi_closed, r.verdict, r.singular_coefficient,
            r.phi_girsanov, r.stderr_girsanov, r.phi_direct, r.stderr_direct,
            r.z_closed_girsanov, r.z_closed_direct, r.z_girsanov_direct,
            r.verdict_closed_girsanov, r.verdict_closed_direct, r.verdict_girsanov_direct,
            r.negative_mass,
        ]
        for r in report
    ]
    bad = sum(r.verdict in ("diverging", "oscillating") for r in report)
    agree = sum(r.verdict_girsanov_direct == "agree" for r in report)
    summary = [
        f"closed form: {len(report) - bad} converged, {bad} nonconvergent",
        f"girsanov vs direct: {agree}/{len(report)} within 3 stderr",
    ]
    return rows, (EXIT_NONCONVERGENT if bad else EXIT_OK), summary


COMMANDS = {
    "density": cmd_density,
    "cdf": cmd_cdf,
    "bridge-expectation": cmd_bridge_expectation,
    "residual-report": cmd_residual_report,
    "cross-validate": cmd_cross_validate,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file with run settings; flags win")
    common.add_argument("--boundary", help="boundary expression in t, e.g. '1 + t^2/2'")
    common.add_argument("--s-start", type=float)
    common.add_argument("--s-stop", type=float)
    common.add_argument("--s-count", type=int)
    common.add_argument("--n-paths", type=int)
    common.add_argument("--steps", type=int)
    common.add_argument("--bins", type=int, help="histogram bins over the grid span (direct MC)")
    common.add_argument("--seed", type=int)
    common.add_argument("--eps0", type=float)
    common.add_argument("--eps-terms", type=int)
    common.add_argument("--v-override", type=float, help="replace the eps-limit by a fixed value")
    common.add_argument("--points", type=int, help="random residual points (residual-report)")
    common.add_argument("--out", help="output file (default stdout)")
    common.add_argument("--format", choices=["csv", "json"])

    parser = _Parser(prog="fptlab", description="First-passage densities through moving boundaries.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        bd = build_boundary(cfg.boundary)
    except BoundaryError as exc:
        print(f"boundary error: {exc}", file=sys.stderr)
        return EXIT_BOUNDARY
    configure_threads()
    try:
        rows, code, summary = COMMANDS[args.command](cfg, bd)
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonconvergentLimit as exc:
        print(f"nonconvergent closed form: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENT
    except (QuadratureFailure, ArithmeticError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    _emit(render(args.command, cfg, rows, code), cfg.out)
    for line in summary:
        print(line, file=sys.stderr)
    return code


def main(argv: list[str] | None = None):
    sys.exit(run(argv))
