"""Command line: ``sfostm check`` and ``sfostm bench``."""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from .bench import BenchConfig, Workload, emit_csv, run_bench
from .checker import CheckMode, HistoryError, check
from .core import Mode
from .history import read_history, write_history


def _check(args: argparse.Namespace) -> int:
    try:
        history = read_history(args.input)
        verdict = check(history, args.mode)
    except (HistoryError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(verdict.describe())
    return 0 if verdict.ok else 1


def _bench(args: argparse.Namespace) -> int:
    try:
        cfg = BenchConfig(
            threads=args.threads,
            keys=args.keys,
            ops_per_txn=args.ops,
            workload=Workload(args.workload),
            mode=Mode(args.mode),
            k_versions=args.k,
            c_factor=args.c,
            buckets=args.buckets,
            txn_budget=None if args.duration is not None else args.txns,
            duration=args.duration,
            warmup_seconds=args.warmup,
            interval_seconds=args.interval,
            seed=args.seed,
            record=args.record is not None,
            slow_thread=args.slow_thread,
            slow_delay=args.slow_delay,
        )
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    m = run_bench(cfg)
    if args.record is not None:
        write_history(m.history, args.record)
    if args.csv is not None:
        emit_csv(m, args.csv)
    cv = m.stability_cv
    print(
        f"mode={cfg.mode.value} threads={cfg.threads} commits={m.commits} "
        f"aborts={m.total_abort_count} max_time_ms={m.max_worst_time / 1e6:.3f} "
        f"max_incarnations={m.max_incarnations} versions={m.version_count} "
        f"elapsed_s={m.elapsed:.2f}" + ("" if cv is None else f" interval_cv={cv:.3f}")
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sfostm", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", help="verify a recorded history")
    c.add_argument("--mode", choices=[m.value for m in CheckMode], required=True)
    c.add_argument("--in", dest="input", required=True, metavar="FILE")
    c.set_defaults(func=_check)

    b = sub.add_parser("bench", help="run the counter application")
    b.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.KOSTM.value)
    b.add_argument("--threads", type=int, default=4)
    b.add_argument("--keys", type=int, default=30)
    b.add_argument("--k", type=int, default=5, help="versions per key (kostm)")
    b.add_argument("--c", type=float, default=0.1, help="wts drift factor C")
    b.add_argument("--buckets", type=int, default=5)
    b.add_argument("--workload", choices=[w.value for w in Workload], default="w1")
    b.add_argument("--ops", type=int, default=10, help="operations per transaction")
    b.add_argument("--txns", type=int, default=1000, help="transactions over all threads")
    b.add_argument("--duration", type=float, default=None, metavar="S")
    b.add_argument("--warmup", type=float, default=0.0, metavar="S")
    b.add_argument("--interval", type=float, default=None, metavar="S")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--record", default=None, metavar="FILE", help="write the history here")
    b.add_argument("--csv", default=None, metavar="FILE")
    b.add_argument("--slow-thread", type=int, default=None, help="thread index to slow down")
    b.add_argument("--slow-delay", type=float, default=0.001, metavar="S")
    b.set_defaults(func=_bench)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
