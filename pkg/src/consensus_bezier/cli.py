"""Command-line front end: plan, hessian, analyze, corridors.

Settings come from built-in defaults, then an optional JSON config file
(--config), then command-line flags; later sources win.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from .corridor import CorridorError
from .gridmap import MapFormatError, NoPathError, load_map
from .objectives import (
    FAMILY_TITLES,
    Family,
    ObjectiveSpec,
    hessian_similarity,
    interaction_weights,
    normalized_weights,
    resolve_hessian_exact,
)
from .planner import (
    InputError,
    PlanningError,
    build_corridors,
    path_metrics,
    plan_on_grid,
)

log = logging.getLogger("consensus_bezier")

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE = 0, 1, 2
DEMO_MAP = "demo_map.txt"
DEMO_RESOLUTION = 0.1
DEMO_START = (0.3, 0.3)
DEMO_GOAL = (5.7, 3.7)
OBJECTIVE_CHOICES = ("dnorm", "ddiff", "dvar", "ddiffvar")


class CliError(Exception):
    """Bad user input; reported with exit status 1."""


@dataclasses.dataclass
class RunConfig:
    map: str | None = None
    map_format: str | None = None
    resolution: float | None = None
    start: tuple[float, float] | None = None
    goal: tuple[float, float] | None = None
    degree: int = 3
    continuity: int = 1
    objective: str = "dnorm"
    order: int = 2
    out: str = "out"
    strict_paper: bool = False
    heat: bool = False
    svg: bool = True

    def objective_spec(self) -> ObjectiveSpec:
        return ObjectiveSpec(Family(self.objective), self.order)


def demo_map_path() -> Path:
    return Path(str(resources.files("consensus_bezier") / "data" / DEMO_MAP))


def _parse_point(text) -> tuple[float, float]:
    if isinstance(text, (list, tuple)):
        vals = list(text)
    else:
        vals = str(text).split(",")
    try:
        pt = tuple(float(v) for v in vals)
    except ValueError:
        raise CliError(f"expected a point X,Y, got {text!r}") from None
    if len(pt) != 2 or not all(np.isfinite(pt)):
        raise CliError(f"expected a finite point X,Y, got {text!r}")
    return pt


def _coerce(cfg: RunConfig) -> RunConfig:
    try:
        if cfg.start is not None:
            cfg.start = _parse_point(cfg.start)
        if cfg.goal is not None:
            cfg.goal = _parse_point(cfg.goal)
        cfg.degree = int(cfg.degree)
        cfg.continuity = int(cfg.continuity)
        cfg.order = int(cfg.order)
        if cfg.resolution is not None:
            cfg.resolution = float(cfg.resolution)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid configuration value: {exc}") from None
    if cfg.objective not in OBJECTIVE_CHOICES:
        raise CliError(f"objective must be one of {', '.join(OBJECTIVE_CHOICES)}, got {cfg.objective!r}")
    if cfg.map_format not in (None, "text", "pgm"):
        raise CliError(f"map format must be 'text' or 'pgm', got {cfg.map_format!r}")
    if cfg.resolution is not None and not cfg.resolution > 0:
        raise CliError(f"resolution must be positive, got {cfg.resolution}")
    return cfg


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults < config file < flags; the map path is checked before any work."""
    cfg = RunConfig()
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise CliError("config file must hold a JSON object")
        known = {f.name for f in dataclasses.fields(RunConfig)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise CliError(f"unknown config keys: {', '.join(unknown)}")
        for k, v in data.items():
            setattr(cfg, k, v)
    for f in dataclasses.fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            setattr(cfg, f.name, v)
    cfg = _coerce(cfg)

    if cfg.map is None:
        cfg.map = str(demo_map_path())
        if cfg.resolution is None:
            cfg.resolution = DEMO_RESOLUTION
        cfg.start = cfg.start or DEMO_START
        cfg.goal = cfg.goal or DEMO_GOAL
    if not Path(cfg.map).is_file():
        raise CliError(f"map file not found: {cfg.map}")
    if cfg.resolution is None:
        cfg.resolution = 1.0
    if cfg.start is None or cfg.goal is None:
        raise CliError("--start and --goal are required with a custom map")
    return cfg


def _load_grid(cfg: RunConfig):
    return load_map(cfg.map, cfg.map_format, cfg.resolution)


def _fmt_float(v: float) -> str:
    return repr(float(v))


def write_path_csv(path, out: Path) -> None:
    t, pts = path.sample()
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "y"])
        for ti, (x, y) in zip(t, pts):
            w.writerow([_fmt_float(ti), _fmt_float(x), _fmt_float(y)])


def _validator_report(path) -> dict:
    d = path.diagnostics
    return {
        "min_sampled_margin": d.min_sampled_margin,
        "continuity_residual": d.continuity,
        "residual_eq": d.residual_eq,
        "residual_in": d.residual_in,
        "kkt_ok": d.kkt.ok,
        "kkt": d.kkt.summary(),
        "polished": d.polished,
    }


def _dump_json(obj, out: Path) -> None:
    out.write_text(json.dumps(obj, indent=2) + "\n")


def cmd_plan(args) -> int:
    from .plotting import plan_figure, save_svg

    cfg = resolve_config(args)
    spec = cfg.objective_spec()
    grid = _load_grid(cfg)
    res = plan_on_grid(grid, cfg.start, cfg.goal, cfg.degree, cfg.continuity, spec, cfg.strict_paper)
    path = res.path
    metrics = path_metrics(path)
    metrics["corridors"] = len(res.chain)
    metrics["validators"] = _validator_report(path)

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(path.to_json(metrics), out / "path.json")
    write_path_csv(path, out / "path.csv")
    written = ["path.json", "path.csv"]
    if cfg.svg:
        title = f"{spec.describe()}, n={cfg.degree}, C{cfg.continuity}"
        save_svg(plan_figure(res, heat=cfg.heat, title=title), out / "plan.svg")
        written.append("plan.svg")
    print(
        f"planned {len(path.segments)} segments with {spec.name}: "
        f"length={metrics['length']:.4f} max_curvature={metrics['max_curvature']:.4f}"
    )
    print(f"validators: {path.diagnostics.kkt.summary()}")
    print(f"wrote {', '.join(str(out / w) for w in written)}")
    return EXIT_OK


def cmd_corridors(args) -> int:
    from .plotting import corridor_figure, save_svg

    cfg = resolve_config(args)
    grid = _load_grid(cfg)
    res = build_corridors(grid, cfg.start, cfg.goal, cfg.strict_paper)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = res.chain.to_json()
    doc["reference_cells"] = [list(c) for c in res.reference.cells]
    doc["reference_cost"] = res.reference.cost
    _dump_json(doc, out / "corridors.json")
    if cfg.svg:
        save_svg(corridor_figure(res, heat=True), out / "corridors.svg")
    print(f"{len(res.chain)} corridors along a {res.reference.length:.4f} m reference path")
    for i, S in enumerate(res.chain.corridors):
        print(f"  corridor {i}: center=({S.center[0]:.4f}, {S.center[1]:.4f}) faces={len(S.b)}")
    return EXIT_OK


def _fmt_fraction(v: Fraction) -> str:
    return str(v) if v.denominator != 1 else str(v.numerator)


def cmd_hessian(args) -> int:
    try:
        spec = ObjectiveSpec(Family(args.objective), args.order)
        H = resolve_hessian_exact(spec, args.degree)
        g = normalized_weights(interaction_weights(H))
    except ValueError as exc:
        raise CliError(str(exc)) from None
    if args.graphviz:
        sys.stdout.write(g.to_dot(spec.name))
        return EXIT_OK
    cells = [[_fmt_fraction(v) for v in row] for row in H]
    width = max(len(c) for row in cells for c in row)
    print(f"Hessian of the {spec.describe()} at degree {args.degree} (exact):")
    for row in cells:
        print("  [" + " ".join(c.rjust(width) for c in row) + "]")
    print("normalized interaction weights:")
    for (i, j), w in g.edges().items():
        print(f"  ({i},{j}) = {_fmt_fraction(w)}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .plotting import save_svg, similarity_figure

    n = args.degree
    if n < 2:
        raise CliError(f"analysis needs degree >= 2, got {n}")
    dend = hessian_similarity(n)
    labels = dend.labels
    print(f"normalized Hessian distances, n={n}")
    print("     " + "".join(f"{lab:>8}" for lab in labels))
    for i, lab in enumerate(labels):
        print(f"  {lab:<3}" + "".join(f"{dend.distances[i, j]:8.4f}" for j in range(len(labels))))
    print("complete-linkage merges:")
    for k, (a, b, h) in enumerate(dend.merges):
        ma = "".join(labels[i] for i in dend.members(a))
        mb = "".join(labels[i] for i in dend.members(b))
        print(f"  {k + 1}: {{{ma}}} + {{{mb}}} at {h:.4f}")
    if args.svg:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        target = out / f"analysis_n{n}.svg"
        save_svg(similarity_figure(dend, f"Hessian similarity, n={n}"), target)
        print(f"wrote {target}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors are input errors, keep 2 for infeasible plans
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig keys; flags override it")
    p.add_argument("--map", help="occupancy map (text 0/1 rows or PGM); default: bundled demo map")
    p.add_argument("--map-format", choices=("text", "pgm"), help="default: from the file suffix")
    p.add_argument("--resolution", type=float, help="cell size in meters (demo map: 0.1)")
    p.add_argument("--start", help="start point X,Y in meters")
    p.add_argument("--goal", help="goal point X,Y in meters")
    p.add_argument("--strict-paper", action="store_true", default=None,
                   help="unweighted edge costs and no corridor constraint on the last segment")  # fmt: skip
    p.add_argument("--out", help="output directory (default: out)")
    p.add_argument("--svg", action=argparse.BooleanOptionalAction, default=None,
                   help="write the SVG figure (default: on)")  # fmt: skip


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="consensus-bezier",
        description=__doc__.splitlines()[0],
        epilog="Precedence: command-line flag > --config file > built-in default. "
        "Exit status: 0 success, 1 input error, 2 infeasible or failed plan.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("plan", help="plan a piecewise Bezier path and write JSON, CSV and SVG")
    _add_run_options(p)
    p.add_argument("--degree", type=int, help="Bezier degree n (default 3)")
    p.add_argument("--continuity", type=int, help="continuity order C (default 1)")
    p.add_argument("--objective", choices=OBJECTIVE_CHOICES, help="objective family (default dnorm)")
    p.add_argument("--order", type=int, help="objective order k (default 2)")
    p.add_argument("--heat", action="store_true", default=None, help="shade the clearance field")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("corridors", help="reference path and safe corridors only")
    _add_run_options(p)
    p.set_defaults(func=cmd_corridors)

    p = sub.add_parser("hessian", help="print an objective Hessian and its interaction weights")
    p.add_argument("--objective", choices=OBJECTIVE_CHOICES, required=True,
                   help="; ".join(f"{f.value}: {FAMILY_TITLES[f]}" for f in Family if f is not Family.CUSTOM))  # fmt: skip
    p.add_argument("--order", type=int, required=True)
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--graphviz", action="store_true", help="emit the weighted graph in DOT format")
    p.set_defaults(func=cmd_hessian)

    p = sub.add_parser("analyze", help="pairwise Hessian distances and complete-linkage clustering")
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--svg", action="store_true", help="write a heat map and dendrogram figure")
    p.add_argument("--out", default=".", help="directory for the figure")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, MapFormatError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NoPathError as exc:
        print(f"error: no reference path: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CorridorError as exc:
        print(f"error: corridor construction failed: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except PlanningError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("hint: raise the degree or rebuild the corridors with a different reference path", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ValueError as exc:
        # request validation (degree/continuity/objective combinations)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
