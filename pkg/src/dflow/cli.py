"""``dflow`` command line: check, plan, gen, graph and bench."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .bench import DEFAULT_DELAY, BenchFailure, ExperimentConfig, run_bench, write_report
from .costmodel import DEFAULT_ENVELOPE_BYTES, CostModel
from .dsl import ERROR, CompileError, check, parse
from .graph import build_graph, export_edges
from .partition import UnknownSite, partition
from .runtime import RuntimeFailure
from .transport import Topology
from .workloads import PATTERNS, generate

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def _int_list(text: str) -> list[int]:
    try:
        return [int(float(v)) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _load(path: str):
    """Read and check a workflow. Returns (checked, diagnostics, exit code)."""
    try:
        source = Path(path).read_bytes()
    except OSError as exc:
        print(f"{path}: {exc.strerror or exc}", file=sys.stderr)
        return None, [], EXIT_USAGE
    try:
        checked = check(parse(source))
    except CompileError as exc:
        return None, exc.diagnostics, EXIT_FAILURE
    return checked, list(checked.warnings), EXIT_OK


def cmd_check(args) -> int:
    checked, diags, code = _load(args.file)
    for d in diags:
        print(d.format(args.file), file=sys.stderr)
    if code == EXIT_OK and any(d.severity == ERROR for d in diags):
        return EXIT_FAILURE
    return code


def cmd_plan(args) -> int:
    checked, diags, code = _load(args.file)
    if code != EXIT_OK:
        for d in diags:
            print(d.format(args.file), file=sys.stderr)
        return code
    try:
        topology = Topology.load(args.topology)
    except (OSError, ValueError, KeyError) as exc:
        print(f"{args.topology}: cannot load topology: {exc}", file=sys.stderr)
        return EXIT_USAGE
    cost = CostModel.uniform(args.payload, input_bytes=args.input_bytes)
    try:
        plan = partition(build_graph(checked, cost), topology)
    except UnknownSite as exc:
        print(f"{args.file}: UnknownSite {exc}", file=sys.stderr)
        return EXIT_FAILURE
    sys.stdout.write(plan.to_json())
    return EXIT_OK


def cmd_graph(args) -> int:
    checked, diags, code = _load(args.file)
    if code != EXIT_OK:
        for d in diags:
            print(d.format(args.file), file=sys.stderr)
        return code
    sys.stdout.write(export_edges(build_graph(checked, CostModel.uniform(args.payload))))
    return EXIT_OK


def cmd_gen(args) -> int:
    try:
        source = generate(args.pattern, args.n)
    except ValueError as exc:
        print(f"gen: {exc}", file=sys.stderr)
        return EXIT_USAGE
    sys.stdout.write(f"# {args.pattern}, n={args.n}, payload={args.payload} bytes per result\n")
    sys.stdout.write(source)
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        config = ExperimentConfig(
            patterns=[p for p in args.pattern.split(",") if p],
            ns=args.n,
            payloads=args.payloads,
            topology=args.topology,
            seed=args.seed,
            mode=args.mode,
            repetitions=args.reps,
            overhead=args.overhead,
            delay=args.delay,
            transport=args.transport,
        )
    except ValueError as exc:
        print(f"bench: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        report = run_bench(config)
    except (RuntimeFailure, BenchFailure, UnknownSite, CompileError) as exc:
        print(f"bench: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (OSError, ValueError) as exc:
        print(f"bench: {exc}", file=sys.stderr)
        return EXIT_USAGE
    path = write_report(report, args.out)
    print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dflow", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="parse and check a workflow")
    p.add_argument("file")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("plan", help="partition a workflow into per-site fragments (JSON)")
    p.add_argument("file")
    p.add_argument("--topology", required=True)
    p.add_argument("--payload", type=int, default=1_000_000, help="result size of every operation")
    p.add_argument("--input-bytes", type=int, default=None, help="workflow input size (default: --payload)")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("graph", help="print the dataflow edge list")
    p.add_argument("file")
    p.add_argument("--payload", type=int, default=1_000_000)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("gen", help="emit a pattern workload as DSL source")
    p.add_argument("pattern", choices=PATTERNS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--payload", type=int, default=1_000_000)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("bench", help="run centralised vs decentralised experiments")
    p.add_argument("--pattern", default=",".join(PATTERNS),
                   help="comma-separated patterns, or file:<path>")
    p.add_argument("--n", type=_int_list, default=[3])
    p.add_argument("--payloads", type=_int_list, default=[1_000_000, 2_000_000, 4_000_000, 8_000_000])
    p.add_argument("--topology", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=["centralised", "decentralised", "both"], default="both")
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--out", default="bench-out")
    p.add_argument("--overhead", type=int, default=DEFAULT_ENVELOPE_BYTES, help="envelope bytes per message")
    p.add_argument("--delay", type=float, default=DEFAULT_DELAY, help="service processing delay in seconds")
    p.add_argument("--transport", choices=["sim", "socket"], default="sim")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
