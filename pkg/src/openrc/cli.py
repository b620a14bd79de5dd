"""Command-line front end: ``openrc run | graph | validate``.

Exit status: 0 success, 2 usage or parse error, 3 invariant or validation
failure, 4 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .engine import InvariantViolation, replay_events, run, write_metrics_csv, write_states_csv
from .protocol import ProtocolError
from .scenario import PAPER_SCENARIO_TEXT, ScenarioError, Streams, parse_scenario
from .topology import generate_pool_graph, is_strongly_connected

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_INTERNAL = 0, 2, 3, 4

BUILTIN = {"builtin:paper": PAPER_SCENARIO_TEXT}

log = logging.getLogger("openrc")


class UsageError(Exception):
    pass


def load_scenario_text(path: str) -> str:
    if path in BUILTIN:
        return BUILTIN[path]
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"scenario not found: {path}")
    return p.read_text(encoding="utf-8")


def u64(s: str) -> int:
    v = int(s)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def cmd_run(args) -> int:
    text = load_scenario_text(args.scenario)
    sc = parse_scenario(text)
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    meta = {
        "scenario": args.scenario,
        "scenario_sha256": hashlib.sha256(text.encode("utf-8")).hexdigest(),
        "seed": sc.seed,
        "rounds": sc.rounds,
        "pool": sc.pool_size,
        "flags": {"check": args.check, "oracle": args.oracle, "emit_states": args.emit_states},
        "version": __version__,
    }
    try:
        res = run(sc, check=args.check, oracle=args.oracle, trace_states=args.emit_states)
    except (InvariantViolation, ProtocolError, ScenarioError) as exc:
        meta["status"] = "failed"
        meta["error"] = str(exc)
        _write_meta(out, meta)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    with open(out / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        write_metrics_csv(res.metrics, fh)
    if args.emit_states:
        with open(out / "states.csv", "w", encoding="utf-8", newline="") as fh:
            write_states_csv(res.states_trace, fh)

    meta["status"] = "ok"
    meta["final_n"] = res.metrics[-1].n_k if res.metrics else sum(res.final.active)
    meta["final_err"] = res.metrics[-1].err if res.metrics else None
    meta["degenerate_rounds"] = res.final.flags
    meta["skipped_events"] = res.skipped_events
    if args.check:
        meta["max_mass_residual"] = list(res.max_mass_residual)
    if res.max_column_deviation is not None:
        meta["max_column_deviation"] = res.max_column_deviation
    if res.max_oracle_deviation is not None:
        meta["max_oracle_deviation"] = res.max_oracle_deviation
    _write_meta(out, meta)
    print(f"wrote {len(res.metrics)} rounds to {out / 'metrics.csv'}")
    return EXIT_OK


def _write_meta(out: Path, meta: dict) -> None:
    with open(out / "run.meta", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_graph(args) -> int:
    if args.pool < 1:
        raise UsageError("pool must be >= 1")
    if not 0.0 <= args.p <= 1.0:
        raise UsageError("edge probability must lie in [0, 1]")
    g = generate_pool_graph(args.pool, args.p, Streams(args.seed).graph)
    ok = is_strongly_connected(range(g.pool_size), g.edges)
    print(f"# pool {g.pool_size}, {len(g.edges)} edges, "
          f"strongly connected: {'yes' if ok else 'no'}")
    for i, j in g.sorted_edges():
        print(f"edge {i} {j}")
    return EXIT_OK


def cmd_validate(args) -> int:
    sc = parse_scenario(load_scenario_text(args.scenario))
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    try:
        events = replay_events(sc)
    except (ScenarioError, InvariantViolation) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    n_events = sum(len(e.arrivals) + len(e.departures) for e in events)
    print(f"ok: {sc.rounds} rounds, {n_events} churn events")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="openrc", description=__doc__.splitlines()[0])
    ap.add_argument("--verbose", action="store_true", help="log skipped churn events")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write CSV traces")
    r.add_argument("scenario", help="scenario file or builtin:paper")
    r.add_argument("--seed", type=u64, default=None, help="override the scenario seed")
    r.add_argument("--out", default="out", help="output directory (default: out)")
    r.add_argument("--emit-states", action="store_true", help="also write states.csv")
    r.add_argument("--check", action="store_true", help="check invariants every round")
    r.add_argument("--oracle", action="store_true",
                   help="cross-validate against the matrix-form recursion")
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("graph", help="generate a random strongly connected pool graph")
    g.add_argument("--pool", type=int, required=True)
    g.add_argument("--p", type=float, default=0.1, help="extra edge probability")
    g.add_argument("--seed", type=u64, default=0)
    g.set_defaults(func=cmd_graph)

    v = sub.add_parser("validate", help="parse a scenario and dry-run its event stream")
    v.add_argument("scenario", help="scenario file or builtin:paper")
    v.add_argument("--seed", type=u64, default=None)
    v.set_defaults(func=cmd_validate)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_USAGE if exc.lineno is not None or exc.round is None else EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error: %s", exc)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
