"""Counter-application benchmark: threads retrying transactions until commit."""

from __future__ import annotations

import csv
import enum
import math
import os
import random
import statistics
import threading
import time
from dataclasses import dataclass, field
from typing import IO

from .base import BaseSTM
from .core import Mode, OpKind, TransactionAborted
from .history import HistoryEvent, Recorder
from .kostm import make_stm


class Workload(enum.Enum):
    W1 = "w1"
    W2 = "w2"
    W3 = "w3"

    @property
    def mix(self) -> tuple[int, int, int]:
        """Percentages of (insert, delete, lookup)."""
        return _MIXES[self]


_MIXES = {Workload.W1: (5, 5, 90), Workload.W2: (25, 25, 50), Workload.W3: (45, 45, 10)}


@dataclass(frozen=True)
class BenchConfig:
    threads: int = 4
    keys: int = 30
    ops_per_txn: int = 10
    workload: Workload = Workload.W1
    mode: Mode = Mode.KOSTM
    k_versions: int = 5
    c_factor: float = 0.1
    buckets: int = 5
    txn_budget: int | None = 1000  # application transactions over all threads
    duration: float | None = None  # seconds; used when txn_budget is None
    warmup_seconds: float = 0.0
    interval_seconds: float | None = None
    seed: int = 0
    record: bool = False
    # Starvation experiments: this thread sleeps between its operations.
    slow_thread: int | None = None
    slow_delay: float = 0.001
    # Seconds between version-list samples; None disables the sampler.
    sample_every: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "workload", Workload(self.workload))
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.threads < 1 or self.keys < 1 or self.ops_per_txn < 1:
            raise ValueError("threads, keys and ops_per_txn must be >= 1")
        if (self.txn_budget is None) == (self.duration is None):
            raise ValueError("give exactly one of txn_budget and duration")
        if self.txn_budget is not None and self.txn_budget < 0:
            raise ValueError("txn_budget must be >= 0")
        if self.duration is not None and self.duration <= 0:
            raise ValueError("duration must be > 0")
        if self.interval_seconds is not None and self.interval_seconds <= 0:
            raise ValueError("interval_seconds must be > 0")
        if self.slow_thread is not None and not 0 <= self.slow_thread < self.threads:
            raise ValueError("slow_thread out of range")


@dataclass
class ThreadStats:
    thread: int
    commits: int = 0
    abort_count: int = 0
    total_ns: int = 0
    worst_ns: int = 0
    max_incarnations: int = 0
    chains_started: int = 0
    # Commits per stability interval, indexed from the end of warmup.
    interval_commits: list[int] = field(default_factory=list)

    @property
    def avg_ns(self) -> float:
        return self.total_ns / self.commits if self.commits else 0.0


@dataclass
class Metrics:
    threads: list[ThreadStats]
    elapsed: float = 0.0
    interval_seconds: float | None = None
    interval_commits: list[int] = field(default_factory=list)
    version_count: int = 0
    version_samples: list[int] = field(default_factory=list)
    max_versions_seen: int = 0
    k_violations: int = 0
    history: list[HistoryEvent] | None = None
    abort_reasons: dict[str, int] = field(default_factory=dict)

    @property
    def commits(self) -> int:
        return sum(t.commits for t in self.threads)

    @property
    def total_abort_count(self) -> int:
        return sum(t.abort_count for t in self.threads)

    @property
    def max_worst_time(self) -> int:
        """Slowest commit over all chains, in nanoseconds."""
        return max((t.worst_ns for t in self.threads), default=0)

    @property
    def max_incarnations(self) -> int:
        return max((t.max_incarnations for t in self.threads), default=0)

    @property
    def unterminated_chains(self) -> int:
        return sum(t.chains_started - t.commits for t in self.threads)

    @property
    def stability_cv(self) -> float | None:
        xs = self.interval_commits
        if len(xs) < 2 or not statistics.fmean(xs):
            return None
        return statistics.pstdev(xs) / statistics.fmean(xs)


def _draw_ops(rng: random.Random, cfg: BenchConfig) -> list[tuple[OpKind, int, int]]:
    ins, dele, _ = cfg.workload.mix
    ops = []
    for _ in range(cfg.ops_per_txn):
        r = rng.randrange(100)
        kind = OpKind.INSERT if r < ins else OpKind.DELETE if r < ins + dele else OpKind.LOOKUP
        ops.append((kind, rng.randrange(cfg.keys), rng.randrange(1 << 20)))
    return ops


def _worker(
    stm: BaseSTM,
    cfg: BenchConfig,
    idx: int,
    budget: int | None,
    t0: int,
    deadline: int | None,
    stats: ThreadStats,
) -> None:
    rng = random.Random(cfg.seed + idx)
    delay = cfg.slow_delay if idx == cfg.slow_thread else 0.0
    warm = int(cfg.warmup_seconds * 1e9)
    step = int(cfg.interval_seconds * 1e9) if cfg.interval_seconds else 0
    done = 0
    while budget is None or done < budget:
        if deadline is not None and time.monotonic_ns() >= deadline:
            break
        ops = _draw_ops(rng, cfg)
        stats.chains_started += 1
        start = time.monotonic_ns()
        its = None
        tries = 0
        while True:
            txn = stm.begin(its)
            its = txn.its
            tries += 1
            try:
                for kind, key, val in ops:
                    if kind is OpKind.INSERT:
                        stm.insert(txn, key, val)
                    elif kind is OpKind.DELETE:
                        stm.delete(txn, key)
                    else:
                        stm.lookup(txn, key)
                    if delay:
                        time.sleep(delay)
                stm.try_commit(txn)
                break
            except TransactionAborted:
                stats.abort_count += 1
        end = time.monotonic_ns()
        lat = end - start
        done += 1
        stats.commits += 1
        stats.total_ns += lat
        stats.worst_ns = max(stats.worst_ns, lat)
        stats.max_incarnations = max(stats.max_incarnations, tries)
        if step and end - t0 >= warm:
            i = (end - t0 - warm) // step
            if i >= len(stats.interval_commits):
                stats.interval_commits.extend([0] * (i + 1 - len(stats.interval_commits)))
            stats.interval_commits[i] += 1


def sample_versions(stm: BaseSTM) -> int:
    """Largest version-list length over all keys, read under each node lock."""
    longest = 0
    for node in stm.store.iter_nodes():
        with node.lock:
            longest = max(longest, len(node.versions))
    return longest


def run_bench(cfg: BenchConfig, stm: BaseSTM | None = None) -> Metrics:
    """Run the counter application and gather metrics.

    ``stm`` lets callers keep a handle on the protocol instance; it must
    match ``cfg.mode`` and carry a recorder if ``cfg.record`` is set.
    """
    recorder = None
    if stm is None:
        recorder = Recorder() if cfg.record else None
        stm = make_stm(
            cfg.mode,
            k_versions=cfg.k_versions,
            c_factor=cfg.c_factor,
            buckets=cfg.buckets,
            recorder=recorder,
        )
    else:
        recorder = stm.recorder
    stats = [ThreadStats(i) for i in range(cfg.threads)]
    budgets: list[int | None]
    if cfg.txn_budget is None:
        budgets = [None] * cfg.threads
    else:
        q, r = divmod(cfg.txn_budget, cfg.threads)
        budgets = [q + (i < r) for i in range(cfg.threads)]

    metrics = Metrics(stats, interval_seconds=cfg.interval_seconds)
    stop = threading.Event()
    sampler = None
    if cfg.sample_every is not None:
        bound = cfg.k_versions if cfg.mode is Mode.KOSTM else None

        def sample() -> None:
            while True:
                n = sample_versions(stm)
                metrics.max_versions_seen = max(metrics.max_versions_seen, n)
                if bound is not None and n > bound:
                    metrics.k_violations += 1
                metrics.version_samples.append(stm.store.version_count)
                if stop.wait(cfg.sample_every):
                    return

        sampler = threading.Thread(target=sample, name="version-sampler", daemon=True)

    t0 = time.monotonic_ns()
    deadline = None if cfg.duration is None else t0 + int(cfg.duration * 1e9)
    workers = [
        threading.Thread(
            target=_worker,
            args=(stm, cfg, i, budgets[i], t0, deadline, stats[i]),
            name=f"bench-{i}",
        )
        for i in range(cfg.threads)
    ]
    if sampler is not None:
        sampler.start()
    for w in workers:
        w.start()
    for w in workers:
        w.join()
    metrics.elapsed = (time.monotonic_ns() - t0) / 1e9
    stop.set()
    if sampler is not None:
        sampler.join()

    metrics.interval_commits = _merge_intervals(cfg, stats)
    metrics.version_count = stm.store.version_count
    metrics.abort_reasons = dict(stm.abort_reasons)
    if recorder is not None:
        metrics.history = recorder.events()
    return metrics


def _merge_intervals(cfg: BenchConfig, stats: list[ThreadStats]) -> list[int]:
    if not cfg.interval_seconds:
        return []
    if cfg.duration is not None:
        n = math.floor((cfg.duration - cfg.warmup_seconds) / cfg.interval_seconds + 1e-9)
    else:
        n = max((len(s.interval_commits) for s in stats), default=0)
    out = [0] * max(n, 0)
    for s in stats:
        for i, c in enumerate(s.interval_commits[: len(out)]):
            out[i] += c
    return out


CSV_FIELDS = (
    "row",
    "id",
    "commits",
    "aborts",
    "avg_time_ms",
    "worst_time_ms",
    "max_incarnations",
    "version_count",
)


def emit_csv(metrics: Metrics, dest: str | os.PathLike | IO[str], *, timing: bool = True) -> None:
    """Header, one row per thread, a summary row, then one row per interval.

    ``timing=False`` blanks the latency columns so seeded single-thread runs
    produce identical files.
    """
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", newline="", encoding="ascii") as fh:
            emit_csv(metrics, fh, timing=timing)
        return

    def ms(ns: float) -> str:
        return f"{ns / 1e6:.3f}" if timing else ""

    w = csv.writer(dest, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for t in metrics.threads:
        w.writerow(
            ["thread", t.thread, t.commits, t.abort_count, ms(t.avg_ns), ms(t.worst_ns), t.max_incarnations, ""]
        )
    total_ns = sum(t.total_ns for t in metrics.threads)
    avg = total_ns / metrics.commits if metrics.commits else 0.0
    w.writerow(
        [
            "summary",
            "",
            metrics.commits,
            metrics.total_abort_count,
            ms(avg),
            ms(metrics.max_worst_time),
            metrics.max_incarnations,
            metrics.version_count,
        ]
    )
    for i, c in enumerate(metrics.interval_commits):
        w.writerow(["interval", i, c, "", "", "", "", ""])

