"""Command-line front end: ``poptas verify | synth | export``.

Exit codes: 0 property holds / query answered, 1 property fails, 2 unknown
(bounds straddle the threshold), 3 input error, 4 capacity exceeded.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path

from . import __version__
from .errors import CapacityError, DivergingValueError, ModelError, ParseError, PropertyError
from .logic import Property, compile_property, parse_property, verdict
from .modelfmt import elaborate, parse_model
from .pomdp import Pomdp, from_json, to_json
from .popta import Popta, digitalize
from .solver import solve
from .strategy import DEFAULT_NODE_BUDGET, Refinement, refine

EXIT_OK, EXIT_FAILS, EXIT_UNKNOWN, EXIT_INPUT, EXIT_CAPACITY = 0, 1, 2, 3, 4
DEFAULT_SCHEDULE = (2, 4, 8, 12, 16, 24, 32, 40)
BUNDLED_PREFIX = "bundled:"

log = logging.getLogger("poptas")


class InputError(Exception):
    pass


def bundled_models() -> list[str]:
    root = resources.files("poptas") / "models"
    return sorted(p.name[: -len(".poptam")] for p in root.iterdir() if p.name.endswith(".poptam"))


def read_model_text(spec: str) -> tuple[str, str]:
    """Source text and display name for a path or ``bundled:NAME``."""
    if spec.startswith(BUNDLED_PREFIX):
        name = spec[len(BUNDLED_PREFIX):]
        res = resources.files("poptas") / "models" / f"{name}.poptam"
        if not res.is_file():
            raise InputError(f"no bundled model {name!r}; available: {', '.join(bundled_models())}")
        return res.read_text(encoding="utf-8"), spec
    path = Path(spec)
    try:
        return path.read_text(encoding="utf-8"), str(path)
    except OSError as exc:
        raise InputError(f"cannot read model {spec}: {exc.strerror or exc}") from None


def parse_consts(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items or []:
        for part in item.split(","):
            name, sep, value = part.partition("=")
            if not sep or not name.strip():
                raise InputError(f"--const expects NAME=VALUE, got {part!r}")
            out[name.strip()] = value.strip()
    return out


def load(spec: str, consts: dict[str, str], reward: str | None = None) -> tuple[Popta | Pomdp, str]:
    text, name = read_model_text(spec)
    if text.lstrip().startswith("{"):
        if consts:
            raise InputError("--const does not apply to POMDP JSON documents")
        return from_json(text), name
    doc = parse_model(text)
    reward_arg = reward if doc.kind == "pomdp" else None
    return elaborate(doc, constants=consts, reward=reward_arg), name


def read_property(text: str) -> Property:
    path = Path(text)
    if not text.lstrip().startswith(("P", "R")) and path.is_file():
        text = path.read_text(encoding="utf-8").strip()
    try:
        return parse_property(text)
    except ParseError as exc:
        raise ParseError(f"in property: {exc}") from None


def parse_schedule(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise InputError(f"bad resolution schedule {text!r}") from None
    if not values or any(v < 1 for v in values) or any(b <= a for a, b in zip(values, values[1:])):
        raise InputError("resolution schedule must be a strictly increasing list of positive integers")
    return values


def _write(path: str, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc.strerror or exc}") from None


def _model_stats(pomdp: Pomdp, model) -> dict:
    largest = max((len(c) for c in pomdp.classes), default=0)
    return {
        "states": len(pomdp.states),
        "observations": len(pomdp.observations),
        "hidden_values": model.meta.get("hidden_valuations", largest),
        "largest_class": largest,
    }


def _report_dict(args, name, prop, mode, obj, stats, run: Refinement, answer, warnings) -> dict:
    final = run.final
    doc = {
        "model": name,
        "property": str(prop),
        "mode": mode,
        "objective": {"kind": obj.kind, "direction": obj.direction},
        "engine": args.engine,
        **stats,
        "rows": [r.as_dict() for r in run.history],
        "result": {"lower": final.lower, "upper": final.upper, "gap": final.gap},
        "gap_target": args.gap,
        "gap_met": run.gap_met,
        "verdict": answer,
        "warnings": warnings,
    }
    if run.stopped_by is not None:
        doc["stopped_by"] = str(run.stopped_by)
    if mode == "synth":
        doc["strategy_value"] = final.strategy_value
        doc["strategy_nodes"] = final.strategy_nodes
    return doc


def _print_human(out, name, prop, mode, obj, stats, run: Refinement, answer, warnings) -> None:
    w = out.write
    w(f"model     {name}\n")
    w(f"property  {prop}   ({mode}, {obj.direction} {'probability' if obj.kind == 'prob' else 'expected reward'})\n")
    w(f"states {stats['states']}   obs. {stats['observations']}   hidden values {stats['hidden_values']}\n")
    for msg in warnings:
        w(f"warning: {msg}\n")
    w(f"{'M':>4} {'grid points':>12} {'iters':>7} {'lower':>12} {'upper':>12} {'time (s)':>9}\n")
    for r in run.history:
        flag = "" if r.converged else "  (not converged)"
        w(f"{r.resolution:>4} {r.grid_points:>12} {r.iterations:>7} {r.lower:>12.6g} {r.upper:>12.6g} "
          f"{r.seconds:>9.2f}{flag}\n")
    if run.stopped_by is not None:
        w(f"stopped: {run.stopped_by}\n")
    final = run.final
    w(f"result    [{final.lower:.6g}, {final.upper:.6g}]")
    if answer is not None:
        w(f"   {answer}" + ("  (refine further)" if answer == "unknown" else ""))
    w("\n")
    if mode == "synth":
        w(f"strategy  {final.strategy_nodes} belief nodes, achieved value {final.strategy_value:.6g}\n")


def _run(args, mode: str) -> int:
    prop = read_property(args.property)
    model, name = load(args.model, parse_consts(args.const), reward=prop.reward)
    pomdp, obj, digital = compile_property(model, prop, mode, state_limit=args.state_limit)
    warnings = [v.message for v in digital.reset_violations] if digital else []
    schedule = parse_schedule(args.resolution_schedule)
    if args.gap <= 0:
        raise InputError("--gap must be positive")
    run = refine(pomdp, obj, schedule, gap=args.gap, engine=args.engine, eps=args.eps,
                 max_iters=args.max_iters, budget=args.node_budget, dedup_tol=args.dedup_tol,
                 grid_limit=args.grid_limit)
    final = run.final
    answer = verdict(prop, final.lower, final.upper)
    stats = _model_stats(pomdp, model)

    if args.export_pomdp:
        _write(args.export_pomdp, to_json(pomdp))
        if digital is not None:
            _write(_legend_path(args.export_pomdp), json.dumps(digital.legend_document(), indent=1))
    if args.export_values:
        _write(args.export_values, json.dumps(final.table.to_document(), indent=1))
    strategy_path = args.export_strategy or ("strategy.json" if mode == "synth" else None)
    if strategy_path:
        doc = final.strategy.to_document()
        doc.update({"property": str(prop), "resolution": final.resolution,
                    "value": final.strategy_value})
        _write(strategy_path, json.dumps(doc, indent=1))

    if args.json:
        report = _report_dict(args, name, prop, mode, obj, stats, run, answer, warnings)
        sys.stdout.write(json.dumps(report, indent=1) + "\n")
    elif not args.quiet:
        _print_human(sys.stdout, name, prop, mode, obj, stats, run, answer, warnings)
        if strategy_path:
            sys.stdout.write(f"strategy written to {strategy_path}\n")
    if answer is None:
        return EXIT_OK
    return {"holds": EXIT_OK, "fails": EXIT_FAILS, "unknown": EXIT_UNKNOWN}[answer]


def _legend_path(pomdp_path: str) -> str:
    p = Path(pomdp_path)
    return str(p.with_name(p.stem + ".legend.json"))


def cmd_verify(args) -> int:
    return _run(args, "verify")


def cmd_synth(args) -> int:
    return _run(args, "synth")


def cmd_export(args) -> int:
    consts = parse_consts(args.const)
    prop = read_property(args.property) if args.property else None
    model, _ = load(args.model, consts, reward=prop.reward if prop else None)
    digital = None
    obj = None
    if prop is not None:
        pomdp, obj, digital = compile_property(model, prop, "verify", state_limit=args.state_limit)
    elif isinstance(model, Popta):
        digital = digitalize(model, state_limit=args.state_limit)
        pomdp = digital.pomdp
    else:
        pomdp = model
    if not (args.pomdp or args.legend or args.values):
        raise InputError("nothing to export: give --pomdp, --legend and/or --values")
    if args.pomdp:
        _write(args.pomdp, to_json(pomdp))
    if args.legend:
        if digital is None:
            raise InputError("a legend is only produced for timed (popta) models")
        _write(args.legend, json.dumps(digital.legend_document(), indent=1))
    if args.values:
        if obj is None:
            raise InputError("--values needs --property to define the objective")
        table = solve(pomdp, obj, args.resolution, engine=args.engine, eps=args.eps,
                      max_iters=args.max_iters, grid_limit=args.grid_limit)
        _write(args.values, json.dumps(table.to_document(), indent=1))
    if not args.quiet:
        sys.stdout.write(f"{len(pomdp.states)} states, {len(pomdp.observations)} observations\n")
    return EXIT_OK


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("model", help="model file (.poptam or POMDP JSON) or bundled:NAME")
    p.add_argument("--const", action="append", metavar="NAME=VALUE",
                   help="override a model constant (repeatable, or comma separated)")
    p.add_argument("--engine", choices=("j1", "j2"), default="j1",
                   help="j1 interpolates successor beliefs, j2 the current belief")
    p.add_argument("--eps", type=float, default=1e-6, help="value iteration stopping threshold")
    p.add_argument("--max-iters", type=int, default=None, help="value iteration sweep limit")
    p.add_argument("--grid-limit", type=int, default=5_000_000, help="maximum total grid points")
    p.add_argument("--state-limit", type=int, default=2_000_000, help="maximum digital states")
    p.add_argument("--threads", type=int, default=1, help="worker thread cap (computation is single-threaded)")
    p.add_argument("--quiet", action="store_true", help="suppress the human-readable report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poptas", description="Verification and strategy synthesis for partially observable PTAs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, helptext in (("verify", cmd_verify, "bound the value of a property"),
                                 ("synth", cmd_synth, "synthesize and export a strategy")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("property", help="property text, e.g. 'Pmax=? [F goal]', or a file containing it")
        p.add_argument("--resolution-schedule", default=",".join(map(str, DEFAULT_SCHEDULE)),
                       help="comma-separated increasing grid resolutions")
        p.add_argument("--gap", type=float, default=1e-3, help="stop once upper - lower is at most this")
        p.add_argument("--node-budget", type=int, default=DEFAULT_NODE_BUDGET,
                       help="maximum belief nodes explored for the strategy")
        p.add_argument("--dedup-tol", type=float, default=1e-9,
                       help="beliefs closer than this (max-norm) are merged during exploration")
        p.add_argument("--export-strategy", metavar="PATH")
        p.add_argument("--export-pomdp", metavar="PATH", help="also writes PATH's .legend.json for timed models")
        p.add_argument("--export-values", metavar="PATH", help="value table of the final resolution")
        p.add_argument("--json", action="store_true", help="print a machine-readable report")
        p.set_defaults(func=func)
    p = sub.add_parser("export", help="write the digital POMDP, its legend and value tables")
    _common(p)
    p.add_argument("--property", help="property whose reduction and objective to use")
    p.add_argument("--pomdp", metavar="PATH")
    p.add_argument("--legend", metavar="PATH")
    p.add_argument("--values", metavar="PATH")
    p.add_argument("--resolution", type=int, default=2, help="grid resolution for --values")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except CapacityError as exc:
        sys.stderr.write(f"capacity exceeded: {exc}\n")
        return EXIT_CAPACITY
    except DivergingValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    except (InputError, ParseError, ModelError, PropertyError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
