"""Test scaffolding: scripted interleavings, a random scheduler and oracles."""

from __future__ import annotations

import itertools
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

from sfostm import HistoryEvent, Method, TransactionAborted
from sfostm.base import BaseSTM


# -- hand-written histories ---------------------------------------------------


def hist(*steps: tuple, ts: dict[int, tuple[int, int, int]] | None = None) -> list[HistoryEvent]:
    """Build a history from ``(txn, METHOD, key, value, version_ts)`` tuples,
    numbering lps 1, 2, ... in the order given. ``ts`` overrides a txn's
    (its, cts, wts); the default is (txn, txn, txn)."""
    out = []
    for lp, (tid, method, *rest) in enumerate(steps, 1):
        key, value, version = (list(rest) + [None] * 3)[:3]
        its, cts, wts = (ts or {}).get(tid, (tid, tid, tid))
        out.append(HistoryEvent(tid, its, cts, wts, Method[method], key, value, version, lp))
    return out


# The running example: l1(k5), l2(k7), d1(k6), C1, i2(k5,v2), C2, l3(k5,v2), i3(k7,v3), C3.
EXAMPLE = hist(
    (1, "BEGIN"),
    (2, "BEGIN"),
    (1, "LOOKUP", 5, None, 0),
    (2, "LOOKUP", 7, None, 0),
    (1, "DELETE", 6, None, 0),
    (1, "TRYC_COMMIT"),
    (2, "INSERT_LOG", 5, 2),
    (2, "TRYC_COMMIT"),
    (3, "BEGIN"),
    (3, "LOOKUP", 5, 2, 2),
    (3, "INSERT_LOG", 7, 3),
    (3, "TRYC_COMMIT"),
)


# -- threaded step-by-step execution --------------------------------------------


class Stepper:
    """Each named transaction runs on its own thread; the test decides which
    thread takes the next step and waits for it to finish."""

    def __init__(self) -> None:
        self._pools: dict[str, ThreadPoolExecutor] = {}

    def step(self, who: str, fn: Callable[[], Any]) -> Any:
        pool = self._pools.get(who)
        if pool is None:
            pool = self._pools[who] = ThreadPoolExecutor(max_workers=1, thread_name_prefix=who)
        return pool.submit(fn).result(timeout=10)

    def close(self) -> None:
        for pool in self._pools.values():
            pool.shutdown()

    def __enter__(self) -> Stepper:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def run_permutation(stm: BaseSTM, row: str, key: int = 1) -> dict[str, str]:
    """Play one execution sequence such as ``"l10 i10 l20 i20"``.

    A version of ``key`` is preloaded at cts 5 and the transactions begin
    with cts 10 and 20. ``i`` is the insert followed by tryC. Returns the
    outcome per transaction: "commit" or "abort".
    """
    stm.counter.set_next(5)
    t5 = stm.begin()
    stm.insert(t5, key, 5)
    stm.try_commit(t5)
    outcome: dict[str, str] = {}
    with Stepper() as s:
        stm.counter.set_next(10)
        txns = {"10": s.step("T10", stm.begin)}
        stm.counter.set_next(20)
        txns["20"] = s.step("T20", stm.begin)
        for tok in row.split():
            op, who = tok[0], tok[1:]
            txn = txns[who]
            if who in outcome:
                continue

            def act() -> None:
                if op == "l":
                    stm.lookup(txn, key)
                else:
                    stm.insert(txn, key, int(who))
                    stm.try_commit(txn)

            try:
                s.step(f"T{who}", act)
                if op == "i":
                    outcome[who] = "commit"
            except TransactionAborted:
                outcome[who] = "abort"
    return outcome


PERMUTATIONS = {
    1: "l10 i10 l20 i20",
    2: "l10 l20 i10 i20",
    3: "l10 l20 i20 i10",
    4: "l20 l10 i20 i10",
    5: "l20 l10 i10 i20",
    6: "l20 i20 l10 i10",
}


# -- random interleavings on one thread -----------------------------------------


@dataclass
class _Chain:
    ops: list[tuple[str, int]]
    its: int | None = None
    txn: Any = None
    pos: int = 0
    tries: int = 0


@dataclass
class SimResult:
    commits: int = 0
    aborts: int = 0
    max_tries: int = 0
    unfinished: int = 0


def simulate(
    stm: BaseSTM,
    seed: int,
    *,
    chains: int = 8,
    concurrency: int = 3,
    keys: int = 3,
    ops: int = 3,
    mix: tuple[int, int, int] = (40, 40, 20),
    max_steps: int = 20_000,
) -> SimResult:
    """Interleave up to ``concurrency`` transactions step by step at random.

    Every step is one protocol call, so the protocol's locks are never held
    across steps and one thread is enough. Aborted transactions retry with
    their its, as the counter application does. Insert values are unique.
    """
    rng = random.Random(seed)
    values = itertools.count(1)
    todo = []
    for _ in range(chains):
        seq = []
        for _ in range(rng.randint(1, ops)):
            r = rng.randrange(100)
            kind = "i" if r < mix[0] else "d" if r < mix[0] + mix[1] else "l"
            seq.append((kind, rng.randrange(keys)))
        todo.append(_Chain(seq))
    active: list[_Chain] = []
    res = SimResult()
    for _ in range(max_steps):
        while todo and len(active) < concurrency:
            active.append(todo.pop(0))
        if not active:
            break
        ch = rng.choice(active)
        try:
            if ch.txn is None:
                ch.txn = stm.begin(ch.its)
                ch.its = ch.txn.its
                ch.tries += 1
                ch.pos = 0
            elif ch.pos < len(ch.ops):
                kind, key = ch.ops[ch.pos]
                if kind == "i":
                    stm.insert(ch.txn, key, next(values))
                elif kind == "d":
                    stm.delete(ch.txn, key)
                else:
                    stm.lookup(ch.txn, key)
                ch.pos += 1
            else:
                stm.try_commit(ch.txn)
                res.commits += 1
                res.max_tries = max(res.max_tries, ch.tries)
                active.remove(ch)
        except TransactionAborted:
            res.aborts += 1
            ch.txn = None
    res.unfinished = len(active) + len(todo)
    return res


# -- oracles written from the definitions -------------------------------------------


@dataclass
class _T:
    tid: int
    order: tuple[int, int]
    begin: int
    end: int | None = None
    committed: bool = False
    aborted: bool = False
    last_ok: int = 0
    reads: list[tuple[int, int, Any, int]] = field(default_factory=list)  # key, writer, value, lp
    writes: dict[int, Any] = field(default_factory=dict)


def group(events: list[HistoryEvent]) -> dict[int, _T]:
    txns: dict[int, _T] = {}
    for e in sorted(events, key=lambda e: e.lp_seq):
        if e.method is Method.BEGIN:
            txns[e.txn_id] = _T(e.txn_id, (e.wts, e.cts), e.lp_seq, last_ok=e.lp_seq)
            continue
        t = txns[e.txn_id]
        if e.method is Method.TRYC_COMMIT:
            t.end, t.committed = e.lp_seq, True
        elif e.method is Method.TRYC_ABORT:
            t.end, t.aborted = e.lp_seq, True
        else:
            t.last_ok = e.lp_seq
            if e.method is Method.INSERT_LOG:
                t.writes[e.key] = e.value
            else:
                if e.version_ts is not None:
                    t.reads.append((e.key, e.version_ts, e.value, e.lp_seq))
                if e.method is Method.DELETE:
                    t.writes[e.key] = None
    return txns


def _rt_ok(order: tuple[_T, ...], end: Callable[[_T], int]) -> bool:
    pos = {t.tid: i for i, t in enumerate(order)}
    return all(
        pos[a.tid] < pos[b.tid] for a in order for b in order if end(a) < b.begin
    )


def _legal(order: tuple[_T, ...], reader_only: int | None = None) -> bool:
    """Every read returns the latest write before it in ``order``."""
    latest: dict[int, tuple[int, Any]] = {}
    for t in order:
        for key, writer, value, _ in t.reads:
            w, v = latest.get(key, (0, None))
            if (w, v) != (writer, value):
                return False
        if t.tid != reader_only:
            for key, value in t.writes.items():
                latest[key] = (t.tid, value)
    return True


def _version_ok(order: tuple[_T, ...], vertices: dict[int, _T], reader_only: int | None) -> bool:
    """Serial order consistent with the version order (writers by (wts, cts))."""
    pos = {t.tid: i for i, t in enumerate(order)}
    for j in order:
        for key, w, _, _ in j.reads:
            if w and pos[w] > pos[j.tid]:
                return False
            wo = vertices[w].order if w else (0, 0)
            for x in order:
                if x.tid in (w, reader_only) or key not in x.writes:
                    continue
                if x is j and x.order > wo:
                    continue
                if x.order < wo and w and pos[x.tid] > pos[w]:
                    return False
                if x.order > wo and pos[x.tid] < pos[j.tid]:
                    return False
    return True


def oracle_sub_histories(events: list[HistoryEvent]) -> list[tuple[dict[int, _T], int | None]]:
    txns = group(events)
    out = []
    for a in sorted((t for t in txns.values() if t.aborted), key=lambda t: t.end):
        if a.last_ok == a.begin:
            continue
        vs = {t.tid: t for t in txns.values() if t.committed and t.end < a.last_ok}
        vs[a.tid] = a
        out.append((vs, a.tid))
    out.append(({t.tid: t for t in txns.values() if t.committed}, None))
    return out


def brute_local_opacity(events: list[HistoryEvent], *, with_versions: bool = True) -> bool:
    """Some serial order of every sub-history respects real time and is legal;
    with ``with_versions`` it must also follow the (wts, cts) version order."""
    for vs, a in oracle_sub_histories(events):

        def end(t: _T) -> int:
            return t.last_ok + 0.5 if t.tid == a else t.end

        ok = False
        for order in itertools.permutations(sorted(vs.values(), key=lambda t: t.tid)):
            if not _rt_ok(order, end):
                continue
            if with_versions and not _version_ok(order, vs, a):
                continue
            if not with_versions and not _legal(order, reader_only=a):
                continue
            ok = True
            break
        if not ok:
            return False
    return True


def brute_co_opacity(events: list[HistoryEvent]) -> bool:
    """Some serial order of the committed transactions respects real time and
    orders every conflicting pair as their shared-memory events were ordered."""
    txns = {t.tid: t for t in group(events).values() if t.committed}
    before = set()
    for i in txns.values():
        for j in txns.values():
            if i is j:
                continue
            for k in i.writes:
                if k in j.writes and i.end < j.end:
                    before.add((i.tid, j.tid))
                if any(r[0] == k and i.end < r[3] for r in j.reads):
                    before.add((i.tid, j.tid))
            for k, _, _, lp in i.reads:
                if k in j.writes and lp < j.end:
                    before.add((i.tid, j.tid))
    for order in itertools.permutations(sorted(txns.values(), key=lambda t: t.tid)):
        if not _rt_ok(order, lambda t: t.end):
            continue
        pos = {t.tid: n for n, t in enumerate(order)}
        if all(pos[a] < pos[b] for a, b in before):
            return True
    return False


def replay_ok(events: list[HistoryEvent], order: list[int]) -> bool:
    """Each committed read returns the closest preceding writer in ``order``."""
    txns = group(events)
    return _legal(tuple(txns[t] for t in order))


# -- uncontrolled stores: legal histories that may well be incorrect ---------------


def random_history(
    seed: int, *, multiversion: bool, txns: int = 4, keys: int = 2, ops: int = 3, abort_pct: int = 25
) -> list[HistoryEvent]:
    """Random interleaving against a store with no concurrency control.

    Reads see the latest committed value (single-version) or the committed
    version with the largest (wts, cts) below the reader's (multi-version).
    Transactions commit or abort at random; wts may exceed cts to mimic
    retried incarnations.
    """
    rng = random.Random(seed)
    lp = itertools.count(1)
    events: list[HistoryEvent] = []
    store: dict[int, list[tuple[tuple[int, int], int, Any]]] = {k: [((0, 0), 0, None)] for k in range(keys)}
    live: dict[int, dict] = {}
    next_id = itertools.count(1)
    started = 0
    values = itertools.count(100)

    def emit(t, method, key=None, value=None, version=None):
        events.append(
            HistoryEvent(t["id"], t["its"], t["id"], t["wts"], method, key, value, version, next(lp))
        )

    while started < txns or live:
        if started < txns and (not live or rng.random() < 0.3):
            tid = next(next_id)
            wts = tid + (rng.randrange(4) if multiversion else 0)
            t = {"id": tid, "its": tid, "wts": wts, "log": {}, "left": rng.randint(1, ops)}
            live[tid] = t
            started += 1
            emit(t, Method.BEGIN)
            continue
        t = live[rng.choice(sorted(live))]
        if t["left"] == 0:
            del live[t["id"]]
            if rng.randrange(100) < abort_pct:
                emit(t, Method.TRYC_ABORT)
                continue
            order = (t["wts"], t["id"])
            for k, v in t["log"].items():
                if v is not _READ:
                    vl = store[k]
                    if multiversion:
                        vl.append((order, t["id"], v))
                        vl.sort(key=lambda x: x[0])
                    else:
                        vl.append(((0, 0), t["id"], v))
            emit(t, Method.TRYC_COMMIT)
            continue
        t["left"] -= 1
        k = rng.randrange(keys)
        kind = rng.choice("ild")
        if kind == "i":
            v = next(values)
            t["log"][k] = v
            emit(t, Method.INSERT_LOG, k, v)
            continue
        method = Method.LOOKUP if kind == "l" else Method.DELETE
        if k in t["log"]:
            v = t["log"][k]
            emit(t, method, k, None if v is _READ or v is _DEL else v)
        else:
            if multiversion:
                order = (t["wts"], t["id"])
                _, w, v = max((x for x in store[k] if x[0] < order), key=lambda x: x[0])
            else:
                _, w, v = store[k][-1]
            emit(t, method, k, v, w)
            t["log"][k] = _READ
        if kind == "d":
            t["log"][k] = _DEL
    return events


class _Marker:
    def __init__(self, name: str) -> None:
        self.name = name

    def __repr__(self) -> str:
        return self.name


_READ = _Marker("read")
_DEL = None


# -- priority instrumentation ---------------------------------------------------


class KillWatch:
    """Swap in descriptors that check, whenever one is marked FALSE, that a
    live transaction with a smaller its exists (the killer). The minimum-its
    live transaction can therefore never be killed."""

    def __init__(self) -> None:
        self.live: set = set()
        self.kills = 0
        self.violations: list[tuple[int, int]] = []

    def __enter__(self) -> KillWatch:
        import sfostm.base as base
        import sfostm.core as core

        watch = self

        class Watched(core.TxnDescriptor):
            __slots__ = ()

            @property
            def status(self):
                return core.TxnDescriptor.status.__get__(self)

            @status.setter
            def status(self, value):
                if value is core.Status.FALSE:
                    watch.kills += 1
                    others = [t.its for t in watch.live if t is not self]
                    if not others or min(others) >= self.its:
                        watch.violations.append((self.its, self.cts))
                if value is core.Status.LIVE:
                    watch.live.add(self)
                else:
                    watch.live.discard(self)
                core.TxnDescriptor.status.__set__(self, value)

        def begin(counter, c_factor=0, prior_its=None):
            cts = counter.get_and_inc()
            if prior_its is None:
                return Watched(cts, cts, cts)
            return Watched(prior_its, cts, core.compute_wts(prior_its, cts, c_factor))

        self._saved = base.begin
        base.begin = begin
        return self

    def __exit__(self, *exc) -> None:
        import sfostm.base as base

        base.begin = self._saved


# -- sequential reference ---------------------------------------------------------


def sequential_mismatches(stm: BaseSTM, n_ops: int, seed: int, keys: int = 50) -> int:
    """Run ``n_ops`` random operations single-threaded, in transactions of
    1 to 10 operations, against a plain dict. Returns the mismatch count."""
    rng = random.Random(seed)
    ref: dict[int, int] = {}
    bad = 0
    done = 0
    while done < n_ops:
        txn = stm.begin()
        view = dict(ref)
        for _ in range(min(rng.randint(1, 10), n_ops - done)):
            k = rng.randrange(keys)
            r = rng.random()
            if r < 0.4:
                v = rng.randrange(1 << 30)
                stm.insert(txn, k, v)
                view[k] = v
            elif r < 0.7:
                bad += stm.delete(txn, k) != view.pop(k, None)
            else:
                bad += stm.lookup(txn, k) != view.get(k)
            done += 1
        stm.try_commit(txn)
        ref = view
    bad += stm.contents() != ref
    return bad


# -- timestamp-range scenario -----------------------------------------------------


@dataclass
class RangeScenario:
    stm: Any
    t1: Any
    t2: Any
    t3: Any
    t3_value: Any = None
    t3_abort: TransactionAborted | None = None


def range_scenario() -> RangeScenario:
    """T1 (cts 100) commits at counter 120; T2 (its 70, cts 110, wts 150 with
    C = 1) then overwrites k1 and gets tltl 121; T3 (cts 130) reads k1."""
    from sfostm import Mode, make_stm

    stm = make_stm(Mode.KOSTM, c_factor=1.0)
    k1, k2 = 1, 2
    t0 = stm.begin()
    stm.insert(t0, k1, 10)
    stm.insert(t0, k2, 20)
    stm.try_commit(t0)
    with Stepper() as run:
        stm.counter.set_next(100)
        t1 = run.step("T1", stm.begin)
        stm.counter.set_next(110)
        t2 = run.step("T2", lambda: stm.begin(70))
        run.step("T1", lambda: stm.lookup(t1, k1))
        run.step("T2", lambda: stm.lookup(t2, k2))
        run.step("T1", lambda: stm.insert(t1, k1, 11))
        stm.counter.set_next(120)
        run.step("T1", lambda: stm.try_commit(t1))
        run.step("T2", lambda: stm.insert(t2, k1, 12))
        run.step("T2", lambda: stm.try_commit(t2))
        stm.counter.set_next(130)
        t3 = run.step("T3", stm.begin)
        sc = RangeScenario(stm, t1, t2, t3)
        try:
            sc.t3_value = run.step("T3", lambda: stm.lookup(t3, k1))
        except TransactionAborted as e:
            sc.t3_abort = e
    return sc
