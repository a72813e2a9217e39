"""``mbs`` command line: analyze, stats, plan, apply, report, tradeoff, zoo.

Failures print one line ``error[<category>]: <detail>`` on stderr and exit
with 2 (I/O), 3 (validation) or 4 (degenerate plan under ``--strict``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import ir, planner, report, rf, stats, zoo

log = logging.getLogger("mbs")

EXIT_IO, EXIT_VALIDATION, EXIT_DEGENERATE = 2, 3, 4


class CliError(Exception):
    def __init__(self, category: str, detail: str, code: int):
        super().__init__(detail)
        self.category, self.code = category, code


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise CliError("io", f"cannot read {path}: {exc.strerror}", EXIT_IO) from None


def _emit(text: str, out: str | None, force: bool) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    if path.exists() and not force:
        raise CliError("io", f"{out} exists; pass --force to overwrite", EXIT_IO)
    try:
        path.write_bytes(text.encode())
    except OSError as exc:
        raise CliError("io", f"cannot write {out}: {exc.strerror}", EXIT_IO) from None
    log.info("wrote %s", out)


def _model(args) -> ir.ModelGraph:
    return ir.parse_model(_read(args.model))


def _config(args) -> planner.PlannerConfig:
    return planner.PlannerConfig(z=args.z, k_factor=args.z_factor)


def cmd_zoo_emit(args) -> None:
    graph = zoo.generate(zoo.ZooSpec(args.family, args.depth, args.resolution))
    _emit(ir.serialize(graph), args.out, args.force)


def cmd_analyze(args) -> None:
    graph = _model(args)
    profile = rf.analyze(graph, z=_config(args).resolve(graph))
    if args.format == "csv":
        text = rf.profile_csv(profile)
    elif args.format == "json":
        text = ir.dumps({
            "z": float(profile.z),
            "k_factor": float(profile.k_factor),
            "boundary": profile.boundary,
            "layers": [vars(e) for e in profile.entries],
        })
    else:
        text = rf.profile_text(profile)
    _emit(text, args.out, args.force)


def cmd_stats_simulate(args) -> None:
    graph = _model(args)
    collection = stats.simulate_stats(graph, args.images, args.seed, budget=args.budget, workers=args.workers)
    _emit(collection.serialize(), args.out, args.force)


def cmd_plan(args) -> None:
    graph = _model(args)
    collection = stats.load_stats(_read(args.stats), graph)
    result = planner.run_mbs(graph, collection, _config(args))
    if result.degenerate:
        ids = [m.macroblock_id for m in result.macroblocks if m.degenerate]
        message = f"macroblocks {ids} have zero effective flops; beta forced to 1"
        if args.strict:
            raise CliError("degenerate", message, EXIT_DEGENERATE)
        log.warning(message)
    _emit(result.serialize(), args.out, args.force)


def _load_plan_for(args, graph: ir.ModelGraph) -> planner.ScalingPlan:
    plan = planner.load_plan(_read(args.plan))
    if plan.fingerprint and plan.fingerprint != ir.fingerprint(graph):
        raise stats.FingerprintMismatch(
            f"fingerprint mismatch: plan was made for {plan.fingerprint}, model is {ir.fingerprint(graph)}"
        )
    return plan


def cmd_apply(args) -> None:
    graph = _model(args)
    _emit(ir.serialize(ir.apply_plan(graph, _load_plan_for(args, graph))), args.out, args.force)


def cmd_report(args) -> None:
    graph = _model(args)
    rows = report.compare(graph, _load_plan_for(args, graph), args.alpha or ())
    if args.format == "csv":
        text = report.report_csv(rows)
    elif args.format == "json":
        text = ir.dumps([
            {**{c: getattr(r, c) for c in report.REPORT_COLUMNS}, "config": r.config, "conventions": r.conventions}
            for r in rows
        ])
    else:
        text = report.report_text(rows)
    _emit(text, args.out, args.force)


def cmd_tradeoff(args) -> None:
    graph = _model(args)
    collection = stats.load_stats(_read(args.stats), graph)
    rows = report.tradeoff_table(graph, collection, args.z_factor or report.K_SWEEP)
    if args.format == "csv":
        text = report.tradeoff_csv(rows)
    elif args.format == "json":
        text = ir.dumps([{c: getattr(r, c) for c in report.TRADEOFF_COLUMNS} for r in rows])
    else:
        text = report.tradeoff_text(rows)
    _emit(text, args.out, args.force)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mbs", description="Macroblock scaling model-reduction planner.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def common(p, *, model=True, fmt=False):
        if model:
            p.add_argument("--model", required=True, help="mbs-ir/1 model document")
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--force", action="store_true", help="overwrite an existing --out")
        if fmt:
            p.add_argument("--format", choices=("text", "csv", "json"), default="text")

    def threshold(p, sweep=False):
        if sweep:
            p.add_argument("--z-factor", type=float, action="append",
                           help="k in z = k*L (repeatable; default 1.4 1.2 1.0 0.8 0.6)")
            return
        group = p.add_mutually_exclusive_group()
        group.add_argument("--z", type=float, help="receptive-field threshold in pixels")
        group.add_argument("--z-factor", type=float, help="threshold as a multiple k of the input resolution (z = k*L)")

    p = sub.add_parser("analyze", help="receptive-field table and base/enhancement split")
    common(p, fmt=True)
    threshold(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("stats", help="activation statistics")
    stats_sub = p.add_subparsers(dest="stats_command", required=True, metavar="action")
    s = stats_sub.add_parser("simulate", help="simulate p_j with seeded weights on synthetic images")
    common(s)
    s.add_argument("--images", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--budget", type=int, default=stats.DEFAULT_BUDGET,
                   help="max activation elements per image")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_stats_simulate)

    p = sub.add_parser("plan", help="compute per-macroblock scaling factors")
    common(p)
    p.add_argument("--stats", required=True)
    p.add_argument("--strict", action="store_true", help="fail on degenerate (all-zero) macroblocks")
    threshold(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("apply", help="write the compact model described by a plan")
    common(p)
    p.add_argument("--plan", required=True)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("report", help="parameter/flop reduction versus alpha baselines")
    common(p, fmt=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--alpha", type=float, action="append", help="uniform baseline factor (repeatable)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("tradeoff", help="reduction for a sweep of z = k*L")
    common(p, fmt=True)
    p.add_argument("--stats", required=True)
    threshold(p, sweep=True)
    p.set_defaults(func=cmd_tradeoff)

    p = sub.add_parser("zoo", help="benchmark architectures")
    zoo_sub = p.add_subparsers(dest="zoo_command", required=True, metavar="action")
    z = zoo_sub.add_parser("emit", help="write a generated model document")
    common(z, model=False)
    z.add_argument("--family", required=True, choices=sorted(zoo.FAMILIES))
    z.add_argument("--depth", type=int)
    z.add_argument("--resolution", type=int)
    z.set_defaults(func=cmd_zoo_emit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s: %(message)s")
    try:
        args.func(args)
    except CliError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return exc.code
    except stats.FingerprintMismatch as exc:
        print(f"error[fingerprint]: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ir.IRError, json.JSONDecodeError, ValueError) as exc:
        print(f"error[validation]: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return 0


if __name__ == "__main__":
    sys.exit(main())
