"""Command line entry point: ``orbitforge {chart,solve,sweep,oracle,potentials}``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import expr as ex
from .classify import (
    ClassificationError,
    auto_alphas,
    bifurcation_sweep,
    classify,
    sweep_to_csv,
    sweep_to_json,
)
from .functional import orbit_to_csv, orbit_to_json
from .geometry import ChartError, DomainChart, chart_for
from .potential import BUILTINS, Box, Potential, PotentialError, builtin, ExprPotential, find_critical_points, shift
from .solver import SolveConfig, SolverError, grid_geodesic_oracle, solve_connecting, solve_symmetric

log = logging.getLogger("orbitforge")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2

DEFAULT_BBOX = {
    "ex2": (-1.5, -1.0, 1.5, 1.0),
    "perturbed": (-1.0, -0.5, 1.0, 0.5),
    "disk": (-1.5, -1.5, 1.5, 1.5),
    "polar_oscillatory": (-3.0, -3.0, 3.0, 3.0),
}
BUILTIN_PARAMS = {"ex2": {}, "perturbed": {"lambda": 0.5}, "disk": {"dimension": 2}, "polar_oscillatory": {"k": 4}}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str = "solve"
    builtin: Optional[str] = None
    expr: Optional[str] = None
    params: dict = field(default_factory=dict)
    alpha: float = 0.0
    alphas: Optional[object] = None  # "auto" or list of floats
    bbox: Optional[tuple] = None
    grid: int = 256
    nodes: int = 128
    seed: int = 0
    symmetric: bool = False
    source: Optional[object] = None  # component id or "origin"
    target: Optional[object] = None
    out: str = "."
    svg: bool = False
    json: bool = False
    csv: bool = False
    multistart: int = 4
    threads: Optional[int] = None

    def validate(self) -> "RunConfig":
        if self.command not in ("chart", "solve", "sweep", "oracle", "potentials"):
            raise ConfigError(f"unknown command {self.command!r}")
        if self.command == "potentials":
            return self
        if (self.builtin is None) == (self.expr is None):
            raise ConfigError("give exactly one of --builtin or --expr")
        if self.builtin is not None and self.builtin not in BUILTINS:
            raise ConfigError(f"unknown builtin {self.builtin!r}; choose from {sorted(BUILTINS)}")
        if self.bbox is not None:
            b = tuple(float(v) for v in self.bbox)
            if len(b) != 4 or not (b[0] < b[2] and b[1] < b[3]):
                raise ConfigError("--bbox must be x1min,x2min,x1max,x2max with min < max")
        if self.grid < 8:
            raise ConfigError("--grid must be at least 8")
        if self.nodes < 16:
            raise ConfigError("--nodes must be at least 16")
        if self.command == "sweep" and self.alphas is None:
            raise ConfigError("sweep needs --alphas (comma list or 'auto')")
        if self.command == "oracle" and (self.source is None or self.target is None):
            raise ConfigError("oracle needs --source and --target")
        if self.command == "solve" and self.symmetric and self.source is not None:
            raise ConfigError("--symmetric and --source are exclusive")
        return self

    def potential(self) -> Potential:
        if self.builtin is not None:
            params = {**BUILTIN_PARAMS[self.builtin], **self.params}
            return builtin(self.builtin, params)
        e = ex.parse(self.expr, params=set(self.params))
        return ExprPotential(e, self.params, dimension=2)

    def box(self) -> Box:
        b = self.bbox
        if b is None:
            b = DEFAULT_BBOX.get(self.builtin, (-2.0, -2.0, 2.0, 2.0))
        b = tuple(float(v) for v in b)
        return Box((b[0], b[1]), (b[2], b[3]))

    def solve_config(self) -> SolveConfig:
        return SolveConfig(nodes=self.nodes, seed=self.seed, multistart=self.multistart, threads=self.threads)

    def formats(self) -> tuple:
        if not (self.svg or self.json or self.csv):
            return True, True, True
        return self.svg, self.json, self.csv


# --------------------------------------------------------------------------- #
# argument handling


def _parse_param(text: str) -> tuple:
    if "=" not in text:
        raise ConfigError(f"--param expects k=v, got {text!r}")
    k, v = text.split("=", 1)
    try:
        return k.strip(), float(v)
    except ValueError:
        raise ConfigError(f"--param value for {k!r} is not a number") from None


def _parse_floats(text: str, what: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{what} expects comma separated numbers, got {text!r}") from None


def _component_id(text):
    if text is None or text == "origin":
        return text
    try:
        return int(text)
    except (TypeError, ValueError):
        raise ConfigError(f"component id must be an integer or 'origin', got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    """Usage errors are config errors (exit 1), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="orbitforge", description="Zero-energy connecting orbits by Jacobi length minimization.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("potential")
    g.add_argument("--config", help="JSON config file (flags override it)")
    g.add_argument("--builtin", choices=sorted(BUILTINS))
    g.add_argument("--expr", help='expression in x1, x2, e.g. "1 - x1^2 - x2^2"')
    g.add_argument("--param", action="append", default=None, metavar="K=V")
    g.add_argument("--lambda", dest="lam", type=float, help="shortcut for --param lambda=V")
    g.add_argument("--alpha", type=float)
    g.add_argument("--bbox", help="x1min,x2min,x1max,x2max")
    g.add_argument("--grid", type=int)
    s = common.add_argument_group("solver")
    s.add_argument("--nodes", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--multistart", type=int)
    s.add_argument("--threads", type=int)
    o = common.add_argument_group("output")
    o.add_argument("--out", help="output directory")
    o.add_argument("--svg", action="store_true", default=None)
    o.add_argument("--json", action="store_true", default=None)
    o.add_argument("--csv", action="store_true", default=None)

    sub.add_parser("potentials", help="list built-in potentials")
    sub.add_parser("chart", parents=[common], help="extract boundary components")
    sp = sub.add_parser("solve", parents=[common], help="minimize and classify an orbit")
    sp.add_argument("--symmetric", action="store_true", default=None)
    sp.add_argument("--source")
    sw = sub.add_parser("sweep", parents=[common], help="energy sweep")
    sw.add_argument("--alphas", help="comma list or 'auto'")
    orc = sub.add_parser("oracle", parents=[common], help="grid geodesic check")
    orc.add_argument("--source")
    orc.add_argument("--target")
    return p


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    """Defaults < config file < command line."""
    merged = {}
    path = getattr(ns, "config", None)
    if path:
        try:
            merged.update(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    known = {f.name for f in fields(RunConfig)}
    unknown = set(merged) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    params = dict(merged.get("params", {}))
    flags = {k: v for k, v in vars(ns).items() if v is not None and k in known}
    for item in getattr(ns, "param", None) or []:
        k, v = _parse_param(item)
        params[k] = v
    if getattr(ns, "lam", None) is not None:
        params["lambda"] = ns.lam
    merged.update(flags)
    merged["params"] = params
    merged["command"] = ns.command
    if isinstance(merged.get("bbox"), str):
        merged["bbox"] = tuple(_parse_floats(merged["bbox"], "--bbox"))
    alphas = merged.get("alphas")
    if isinstance(alphas, str) and alphas != "auto":
        merged["alphas"] = _parse_floats(alphas, "--alphas")
    for key in ("source", "target"):
        if isinstance(merged.get(key), str):
            merged[key] = _component_id(merged[key])
    return RunConfig(**merged).validate()


# --------------------------------------------------------------------------- #
# output


def atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def render_svg(chart: DomainChart, orbit_nodes: Optional[np.ndarray] = None, size: int = 640) -> str:
    box = chart.bbox
    (x0, y0), (x1, y1) = box.lo, box.hi
    scale = size / max(x1 - x0, y1 - y0)
    w, h = (x1 - x0) * scale, (y1 - y0) * scale

    def pts(a):
        return " ".join(f"{(p[0] - x0) * scale:.2f},{(y1 - p[1]) * scale:.2f}" for p in a)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" viewBox="0 0 {w:.2f} {h:.2f}">',
           f'<rect width="{w:.2f}" height="{h:.2f}" fill="white" stroke="black"/>']
    for c in chart.components:
        out.append(f'<polyline points="{pts(c.polyline)}" fill="none" stroke="#1f4e9c" stroke-width="1.5">'
                   f'<title>component {c.id}</title></polyline>')
    colours = {0: "#2a9d4a", 1: "#d98c00", 2: "#c0392b"}
    for p in chart.critical_points:
        cx, cy = (p.location[0] - x0) * scale, (y1 - p.location[1]) * scale
        out.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="4" fill="{colours.get(p.morse_index, "grey")}">'
                   f'<title>critical point {p.id} index {p.morse_index}</title></circle>')
    if orbit_nodes is not None:
        out.append(f'<polyline points="{pts(orbit_nodes)}" fill="none" stroke="#8e1b8e" stroke-width="2"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _fmt(v) -> str:
    if v is None:
        return "inf"
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


# --------------------------------------------------------------------------- #
# commands


def _chart(cfg: RunConfig, V: Potential) -> DomainChart:
    box = cfg.box()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cps = find_critical_points(V, box) if V.smoothness == "C2" else []
        return chart_for(V, box, cfg.grid, critical_points=cps)


def cmd_potentials(cfg: RunConfig) -> int:
    for name in sorted(BUILTINS):
        params = ", ".join(f"{k}={v}" for k, v in BUILTIN_PARAMS[name].items()) or "-"
        print(f"{name:18s} params: {params:14s} bbox: {','.join(str(v) for v in DEFAULT_BBOX[name])}")
    return EXIT_OK


def cmd_chart(cfg: RunConfig) -> int:
    V = shift(cfg.potential(), cfg.alpha)
    chart = _chart(cfg, V)
    out = Path(cfg.out)
    svg, js, _ = cfg.formats()
    if js:
        atomic_write(out / "chart.json", chart.to_json(indent=1) + "\n")
    if svg:
        atomic_write(out / "chart.svg", render_svg(chart))
    print(f"components: {chart.n_components}")
    for c in chart.components:
        cps = ",".join(str(i) for i in c.critical_points) or "-"
        print(f"  {c.id}: diameter {c.diameter:.6g} closed {c.closed} singleton {c.is_singleton} critical {cps}")
    return EXIT_OK


def cmd_solve(cfg: RunConfig) -> int:
    V = shift(cfg.potential(), cfg.alpha)
    chart = _chart(cfg, V)
    scfg = cfg.solve_config()
    symmetric = cfg.symmetric or (cfg.source is None and float(V.value(np.zeros(V.dimension))) > 0)
    if symmetric:
        result = solve_symmetric(V, chart, scfg)
    else:
        source = 0 if cfg.source is None else cfg.source
        if not isinstance(source, int) or not 0 <= source < chart.n_components:
            raise ConfigError(f"--source must be a component id in 0..{chart.n_components - 1}")
        result = solve_connecting(V, chart, source, scfg)
    if not result.converged:
        raise SolverError("descent did not converge")
    c = classify(result, chart, V)
    out = Path(cfg.out)
    svg, js, csv_ = cfg.formats()
    if js:
        atomic_write(out / "chart.json", chart.to_json(indent=1) + "\n")
        summary = {"result": result.to_dict(), "classification": c.to_dict()}
        atomic_write(out / "solve.json", json.dumps(summary, indent=1) + "\n")
        atomic_write(out / "orbit.json", orbit_to_json(c.orbit) + "\n")
    if csv_:
        atomic_write(out / "orbit.csv", orbit_to_csv(c.orbit, V))
    if svg:
        atomic_write(out / "orbit.svg", render_svg(chart, c.orbit.nodes))
    print(f"kind: {c.kind}")
    print(f"jacobi: {c.jacobi:.12g}")
    print(f"period: {_fmt(c.period)}")
    print(f"endpoints: {' -> '.join(f'{e.kind}({e.ref})' if e.ref is not None else e.kind for e in c.endpoint_kinds)}")
    print(f"energy_residual: {c.orbit.energy_residual:.3g}")
    print(f"newton_residual: {c.orbit.newton_residual:.3g}")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    U = cfg.potential()
    box = cfg.box()
    alphas = auto_alphas(U, box) if cfg.alphas == "auto" else list(cfg.alphas)
    rows = bifurcation_sweep(U, alphas, cfg.solve_config(), box, cfg.grid)
    out = Path(cfg.out)
    _, js, csv_ = cfg.formats()
    text = sweep_to_csv(rows)
    if csv_:
        atomic_write(out / "sweep.csv", text)
    if js:
        atomic_write(out / "sweep.json", sweep_to_json(rows, indent=1) + "\n")
    sys.stdout.write(text)
    return EXIT_OK if all(r.error is None for r in rows) else EXIT_SOLVER


def cmd_oracle(cfg: RunConfig) -> int:
    V = shift(cfg.potential(), cfg.alpha)
    chart = _chart(cfg, V)
    for cid in (cfg.source, cfg.target):
        if cid != "origin" and not (isinstance(cid, int) and 0 <= cid < chart.n_components):
            raise ConfigError(f"component id {cid!r} out of range 0..{chart.n_components - 1}")
    value = grid_geodesic_oracle(V, chart, cfg.source, cfg.target)
    print(f"oracle: {value:.12g}")
    return EXIT_OK


COMMANDS = {"potentials": cmd_potentials, "chart": cmd_chart, "solve": cmd_solve, "sweep": cmd_sweep,
            "oracle": cmd_oracle}


def run(cfg: RunConfig) -> int:
    try:
        return COMMANDS[cfg.command](cfg)
    except (ConfigError, ex.ExprError, PotentialError, ChartError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, ClassificationError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(ns)
    except (ConfigError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
