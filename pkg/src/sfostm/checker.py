"""Offline co-opacity and local-opacity checking of recorded histories.

Graphs are kept compact. Edge families that would be quadratic (real-time
order, per-key conflict order, version-order edges) are routed through chains
of auxiliary nodes. A real transaction reaches another through a chain
exactly when the corresponding edge exists. Cycles, reachability and
topological orders over real vertices are therefore the same as in the
explicit graph, and ``MethodGraph.edges()`` expands the explicit edge set on
demand.
"""

from __future__ import annotations

import bisect
import enum
import heapq
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .history import HistoryEvent, Method

T0 = 0
INF = float("inf")


class HistoryError(ValueError):
    """Malformed or illegal history."""


class EdgeKind(enum.Enum):
    RT = "rt"
    CONF_TRYC_TRYC = "tryC-tryC"
    CONF_TRYC_RV = "tryC-rv"
    CONF_RV_TRYC = "rv-tryC"
    RVF = "rvf"
    MV = "mv"


class CheckMode(enum.Enum):
    CO_OPACITY = "co"
    LOCAL_OPACITY = "lo"


# (entry chain tag, exit chain tag) -> kind of the real edge a chain path encodes
_CHAIN_KIND = {
    ("R", "R"): EdgeKind.RT,
    ("X", "X"): EdgeKind.CONF_TRYC_RV,
    ("X", "Y"): EdgeKind.CONF_TRYC_TRYC,
    ("Y", "Y"): EdgeKind.CONF_RV_TRYC,
    ("P", "P"): EdgeKind.MV,
    ("S", "S"): EdgeKind.MV,
}


# -- parsed history -----------------------------------------------------------


@dataclass
class Read:
    key: int
    writer: int
    value: int | None
    lp: int


@dataclass
class TxnRecord:
    tid: int
    its: int
    cts: int
    wts: int
    begin_lp: int
    end_lp: int | None = None
    committed: bool = False
    aborted: bool = False
    last_ok_lp: int = 0
    has_ops: bool = False
    reads: list[Read] = field(default_factory=list)
    writes: dict[int, int | None] = field(default_factory=dict)

    @property
    def order(self) -> tuple[int, int]:
        return (self.wts, self.cts)


def parse(history: Iterable[HistoryEvent]) -> dict[int, TxnRecord]:
    """Group events per transaction and reject malformed histories."""
    txns: dict[int, TxnRecord] = {}
    last_lp = None
    for ev in sorted(history, key=lambda e: e.lp_seq):
        if last_lp is not None and ev.lp_seq == last_lp:
            raise HistoryError(f"duplicate lp_seq {ev.lp_seq}")
        last_lp = ev.lp_seq
        if ev.txn_id == T0:
            raise HistoryError("txn_id 0 is reserved for the initial transaction")
        t = txns.get(ev.txn_id)
        if ev.method is Method.BEGIN:
            if t is not None:
                raise HistoryError(f"txn {ev.txn_id}: second BEGIN")
            txns[ev.txn_id] = TxnRecord(
                ev.txn_id, ev.its, ev.cts, ev.wts, ev.lp_seq, last_ok_lp=ev.lp_seq
            )
            continue
        if t is None:
            raise HistoryError(f"txn {ev.txn_id}: {ev.method.value} before BEGIN")
        if t.end_lp is not None:
            raise HistoryError(f"txn {ev.txn_id}: {ev.method.value} after termination")
        if (ev.its, ev.cts, ev.wts) != (t.its, t.cts, t.wts):
            raise HistoryError(f"txn {ev.txn_id}: timestamps change between events")
        m = ev.method
        if m is Method.TRYC_COMMIT:
            t.end_lp, t.committed = ev.lp_seq, True
            continue
        if m is Method.TRYC_ABORT:
            t.end_lp, t.aborted = ev.lp_seq, True
            continue
        if ev.key is None:
            raise HistoryError(f"txn {ev.txn_id}: {m.value} without key")
        t.last_ok_lp = ev.lp_seq
        t.has_ops = True
        if m is Method.INSERT_LOG:
            t.writes[ev.key] = ev.value
            continue
        if ev.version_ts is not None:
            t.reads.append(Read(ev.key, ev.version_ts, ev.value, ev.lp_seq))
        if m is Method.DELETE:
            t.writes[ev.key] = None
    return txns


def _check_reads(txns: dict[int, TxnRecord], readers: Iterable[TxnRecord]) -> None:
    for t in readers:
        for r in t.reads:
            if r.writer == T0:
                if r.value is not None:
                    raise HistoryError(f"txn {t.tid} read {r.value} from T0 on key {r.key}")
                continue
            w = txns.get(r.writer)
            if w is None or r.key not in w.writes:
                raise HistoryError(
                    f"txn {t.tid} read key {r.key} from {r.writer}, which never wrote it"
                )
            if not w.committed or w.end_lp > r.lp:
                raise HistoryError(f"txn {t.tid} read key {r.key} from uncommitted {w.tid}")
            if w.writes[r.key] != r.value:
                raise HistoryError(
                    f"txn {t.tid} read {r.value} on key {r.key} but {w.tid} wrote "
                    f"{w.writes[r.key]}"
                )


# -- compact graph ------------------------------------------------------------


class MethodGraph:
    """Directed graph over transactions with auxiliary chain nodes.

    Node ids ``0 .. len(vertices)-1`` are transactions, larger ids are
    auxiliary. ``gate`` maps some edges to the lp at which they become
    present; the full graph includes every gated edge.
    """

    def __init__(self, vertices: Sequence[int]) -> None:
        self.vertices = list(vertices)
        self.index = {t: i for i, t in enumerate(self.vertices)}
        self.n_real = len(self.vertices)
        self.succ: list[list[int]] = [[] for _ in self.vertices]
        self.tag: list[str | None] = [None] * self.n_real
        self.floor: list[float] = [INF] * self.n_real
        self.direct: dict[tuple[int, int], set[EdgeKind]] = {}
        self.gate: dict[tuple[int, int], float] = {}

    def aux(self, tag: str, floor: float = INF) -> int:
        self.succ.append([])
        self.tag.append(tag)
        self.floor.append(floor)
        return len(self.succ) - 1

    def link(self, x: int, y: int) -> None:
        self.succ[x].append(y)

    def add_edge(self, u: int, v: int, kind: EdgeKind) -> None:
        """Direct edge between transactions given by node id."""
        if u == v:
            return
        kinds = self.direct.get((u, v))
        if kinds is None:
            self.direct[(u, v)] = {kind}
            self.succ[u].append(v)
        else:
            kinds.add(kind)

    def is_real(self, x: int) -> bool:
        return x < self.n_real

    # -- explicit view --

    def _targets(self, u: int) -> Iterable[tuple[int, EdgeKind]]:
        for x in self.succ[u]:
            if x < self.n_real:
                yield from ((x, k) for k in self.direct[(u, x)])
                continue
            entry = self.tag[x]
            stack, seen = [x], {x}
            while stack:
                a = stack.pop()
                for b in self.succ[a]:
                    if b < self.n_real:
                        if b != u:
                            yield b, _CHAIN_KIND[(entry, self.tag[a])]
                    elif b not in seen:
                        seen.add(b)
                        stack.append(b)

    def edges(self) -> set[tuple[int, int, EdgeKind]]:
        out = set()
        for u in range(self.n_real):
            for v, kind in self._targets(u):
                out.add((self.vertices[u], self.vertices[v], kind))
        return out

    # -- order and cycles --

    def topo(self) -> tuple[list[int], list[int]] | None:
        """Kahn's algorithm; transactions leave in cts order among the ready
        ones. Returns (order of txn ids, rank per node) or None on a cycle."""
        n = len(self.succ)
        indeg = [0] * n
        for x in range(n):
            for y in self.succ[x]:
                indeg[y] += 1
        heap = [((0, x) if x >= self.n_real else (1, self.vertices[x])) for x in range(n) if not indeg[x]]
        heapq.heapify(heap)
        rank = [-1] * n
        order = []
        done = 0
        while heap:
            key = heapq.heappop(heap)
            x = key[1] if key[0] == 0 else self.index[key[1]]
            rank[x] = done
            done += 1
            if x < self.n_real:
                order.append(self.vertices[x])
            for y in self.succ[x]:
                indeg[y] -= 1
                if not indeg[y]:
                    heapq.heappush(heap, (0, y) if y >= self.n_real else (1, self.vertices[y]))
        if done < n:
            return None
        return order, rank

    def find_cycle(self) -> list[int]:
        """Node ids of some cycle, or [] if the graph is acyclic."""
        color = [0] * len(self.succ)
        for root in range(len(self.succ)):
            if color[root]:
                continue
            cyc = _dfs_cycle(root, lambda x: self.succ[x], color)
            if cyc:
                return cyc
        return []

    def explain(self, cyc: Sequence[int]) -> list[tuple[int, int, EdgeKind]]:
        """Turn a node cycle into the transaction edges it encodes."""
        return explain_cycle(cyc, self.n_real, self.tag, self.vertices, self.direct)


def _dfs_cycle(root, succ, color, allowed=None) -> list[int]:
    # color: 0 white, 1 on stack, 2 done. Returns the cycle's nodes in order.
    stack = [(root, iter(succ(root)))]
    path = [root]
    on_path = {root: 0}
    color[root] = 1
    while stack:
        x, it = stack[-1]
        for y in it:
            if allowed is not None and not allowed(x, y):
                continue
            c = color.get(y, 0) if isinstance(color, dict) else color[y]
            if c == 1:
                return path[on_path[y]:]
            if c == 0:
                color[y] = 1
                on_path[y] = len(path)
                path.append(y)
                stack.append((y, iter(succ(y))))
                break
        else:
            color[x] = 2
            stack.pop()
            path.pop()
            del on_path[x]
    return []


def explain_cycle(cyc, n_real, tag, vertices, direct, extra_id=None):
    def name(x):
        return extra_id if x == -1 else vertices[x]

    def real(x):
        return x == -1 or x < n_real

    start = next(i for i, x in enumerate(cyc) if real(x))
    seq = list(cyc[start:]) + list(cyc[: start + 1])
    out = []
    i = 0
    while i < len(seq) - 1:
        u = seq[i]
        j = i + 1
        if real(seq[j]):
            kinds = direct.get((u, seq[j]), {EdgeKind.MV})
            out.append((name(u), name(seq[j]), sorted(kinds, key=lambda k: k.value)[0]))
        else:
            entry = tag[seq[j]]
            while not real(seq[j]):
                j += 1
            out.append((name(u), name(seq[j]), _CHAIN_KIND[(entry, tag[seq[j - 1]])]))
        i = j
    return out


# -- builders -----------------------------------------------------------------


def _rt_chain(g: MethodGraph, recs: Sequence[TxnRecord]) -> list[tuple[int, int]]:
    """Add the real-time chain. Returns (lp, node) pairs sorted by lp."""
    events = []
    for i, t in enumerate(recs):
        events.append((t.begin_lp, 0, i))
        events.append((t.end_lp, 1, i))
    events.sort()
    chain = []
    prev = None
    for lp, is_commit, i in events:
        r = g.aux("R", floor=lp)
        if prev is not None:
            g.link(prev, r)
        if is_commit:
            g.link(i, r)
        else:
            g.link(r, i)
        chain.append((lp, r))
        prev = r
    return chain


def build_co_opacity_graph(history: Iterable[HistoryEvent]) -> MethodGraph:
    """Conflict graph of the committed transactions of a single-version
    history: rt, tryC-tryC, tryC-rv and rv-tryC edges."""
    txns = history if isinstance(history, dict) else parse(history)
    recs = sorted((t for t in txns.values() if t.committed), key=lambda t: t.cts)
    _check_reads(txns, recs)
    g = MethodGraph([t.tid for t in recs])
    _rt_chain(g, recs)

    writers: dict[int, list[tuple[int, int]]] = {}
    reads: dict[int, list[tuple[int, int]]] = {}
    for i, t in enumerate(recs):
        for k in t.writes:
            writers.setdefault(k, []).append((t.end_lp, i))
        for r in t.reads:
            reads.setdefault(r.key, []).append((r.lp, i))
    for k in sorted(set(writers) | set(reads)):
        ws = sorted(writers.get(k, []))
        m = len(ws)
        commit_lps = [lp for lp, _ in ws]
        pos = {i: t + 1 for t, (_, i) in enumerate(ws)}
        xs = [g.aux("X") for _ in range(m)]
        ys = [g.aux("Y") for _ in range(m)]
        for t in range(m):
            w = ws[t][1]
            g.link(w, xs[t])
            g.link(ys[t], w)
            if t + 1 < m:
                g.link(xs[t], xs[t + 1])
                g.link(xs[t], ys[t + 1])
                g.link(ys[t], ys[t + 1])
        for lp, j in reads.get(k, []):
            before = bisect.bisect_left(commit_lps, lp)
            if before:
                g.link(xs[before - 1], j)
            q = pos.get(j)
            if q is not None and q > before:
                # Skip j's own commit: no self edge.
                for s in range(before, q - 1):
                    g.add_edge(j, ws[s][1], EdgeKind.CONF_RV_TRYC)
                if q < m:
                    g.link(j, ys[q])
            elif before < m:
                g.link(j, ys[before])
    return g


@dataclass
class _KeyChains:
    writers: list[int]  # node ids in version order, T0 excluded
    pnodes: list[int]
    snodes: list[int]


class OpacityGraph(MethodGraph):
    """Local-opacity graph plus what the incremental sub-history check needs."""

    commit_lp: list[int]
    rt_chain: list[tuple[int, int]]
    keys: dict[int, _KeyChains]
    pos: dict[int, dict[int, int]]


def build_opacity_graph(
    history: Iterable[HistoryEvent] | dict[int, TxnRecord],
    version_order: dict[int, Sequence[int]] | None = None,
    *,
    readers_only: frozenset[int] = frozenset(),
) -> OpacityGraph:
    """rt, rvf and mv edges over the committed transactions.

    ``version_order`` maps a key to its writers' txn ids, oldest first; the
    default orders writers by (wts, cts). T0 always precedes every writer.
    Transactions in ``readers_only`` contribute their reads but no versions.
    """
    txns = history if isinstance(history, dict) else parse(history)
    recs = sorted((t for t in txns.values() if t.committed), key=lambda t: t.cts)
    _check_reads(txns, recs)
    g = OpacityGraph([t.tid for t in recs])
    g.commit_lp = [t.end_lp for t in recs]
    g.rt_chain = _rt_chain(g, recs)
    g.keys, g.pos = {}, {}

    writers: dict[int, list[int]] = {}
    reads: dict[int, list[tuple[int, Read]]] = {}
    for i, t in enumerate(recs):
        if t.tid not in readers_only:
            for k in t.writes:
                writers.setdefault(k, []).append(i)
        for r in t.reads:
            reads.setdefault(r.key, []).append((i, r))

    for k in sorted(set(writers) | set(reads)):
        ws = writers.get(k, [])
        if version_order is not None and k in version_order:
            given = [g.index[t] for t in version_order[k] if t in g.index]
            if sorted(given) != sorted(ws):
                raise HistoryError(f"version order for key {k} does not match its writers")
            ws = given
        else:
            ws = sorted(ws, key=lambda i: recs[i].order)
        m = len(ws)
        pos = {i: t + 1 for t, i in enumerate(ws)}
        g.pos[k] = pos
        # Smallest commit lp among writers at positions >= t (1-based).
        suffix = [INF] * (m + 2)
        for t in range(m, 0, -1):
            suffix[t] = min(suffix[t + 1], recs[ws[t - 1]].end_lp)
        pnodes = [g.aux("P", floor=suffix[t + 2]) for t in range(m)]
        snodes = [g.aux("S", floor=suffix[t + 1]) for t in range(m)]
        g.keys[k] = _KeyChains(ws, pnodes, snodes)
        first_reader: dict[int, int] = {}
        for j, r in reads.get(k, []):
            p = 0 if r.writer == T0 else pos.get(g.index.get(r.writer, -1))
            if p is None:
                raise HistoryError(f"key {k}: txn {recs[j].tid} read a version outside the order")
            if p:
                g.add_edge(ws[p - 1], j, EdgeKind.RVF)
                lp = recs[j].end_lp
                first_reader[p] = min(first_reader.get(p, lp), lp)
            q = pos.get(j)
            if q is not None and q > p:
                for s in range(p + 1, q):
                    g.add_edge(j, ws[s - 1], EdgeKind.MV)
                if q < m:
                    g.link(j, snodes[q])
            elif p < m:
                g.link(j, snodes[p])
        for t in range(m):
            g.link(ws[t], pnodes[t])
            g.link(snodes[t], ws[t])
            if t + 1 < m:
                g.link(pnodes[t], pnodes[t + 1])
                g.link(snodes[t], snodes[t + 1])
        for p, lp in first_reader.items():
            if p >= 2:
                g.link(pnodes[p - 2], ws[p - 1])
                g.gate[(pnodes[p - 2], ws[p - 1])] = lp
    return g


# -- sub-histories ------------------------------------------------------------


@dataclass
class SubHistory:
    events: list[HistoryEvent]
    aborted: int | None  # the aborted txn treated as committed, if any


def sub_histories(history: Sequence[HistoryEvent]) -> list[SubHistory]:
    """One sub-history per aborted transaction and one over all committed ones.

    For an aborted transaction A the sub-history holds every event of the
    transactions that committed before A's last successful event, then A's
    successful events and a synthetic commit. If A never got past BEGIN it
    adds nothing and only the committed prefix remains.
    """
    evs = sorted(history, key=lambda e: e.lp_seq)
    txns = parse(evs)
    committed = {t.tid for t in txns.values() if t.committed}
    out = []
    for a in sorted((t for t in txns.values() if t.aborted), key=lambda t: t.end_lp):
        cut = a.last_ok_lp
        keep = {t.tid for t in txns.values() if t.committed and t.end_lp < cut}
        sub = [e for e in evs if e.txn_id in keep or (a.has_ops and e.txn_id == a.tid)]
        if not a.has_ops:
            out.append(SubHistory(sub, None))
            continue
        sub = [e for e in sub if e.method is not Method.TRYC_ABORT]
        # Nothing kept has an lp above the cut, so cut + 1 is free.
        sub.append(HistoryEvent(a.tid, a.its, a.cts, a.wts, Method.TRYC_COMMIT, lp_seq=cut + 1))
        out.append(SubHistory(sub, a.tid))
    out.append(SubHistory([e for e in evs if e.txn_id in committed], None))
    return out


# -- verdicts -----------------------------------------------------------------


@dataclass(frozen=True)
class Verdict:
    ok: bool
    serial_order: list[int] | None = None
    cycle: list[tuple[int, int, EdgeKind]] | None = None
    # For a local-opacity failure, the aborted txn whose sub-history failed.
    sub_history: int | None = None

    def describe(self) -> str:
        if self.ok:
            return "OK " + " ".join(f"T{t}" for t in self.serial_order)
        where = f" in sub-history of T{self.sub_history}" if self.sub_history else ""
        edges = ", ".join(f"T{u}->T{v} {k.value}" for u, v, k in self.cycle)
        return f"CYCLE{where}: {edges}"


def _graph_verdict(g: MethodGraph) -> Verdict:
    res = g.topo()
    if res is not None:
        return Verdict(True, serial_order=res[0])
    return Verdict(False, cycle=g.explain(g.find_cycle()))


def _check_co_legal(txns: dict[int, TxnRecord]) -> None:
    commits: dict[int, list[tuple[int, int]]] = {}
    for t in txns.values():
        if t.committed:
            for k in t.writes:
                commits.setdefault(k, []).append((t.end_lp, t.tid))
    for ws in commits.values():
        ws.sort()
    for t in txns.values():
        if not t.committed:
            continue
        for r in t.reads:
            ws = commits.get(r.key, [])
            i = bisect.bisect_left(ws, (r.lp, -1))
            latest = ws[i - 1][1] if i else T0
            if latest != r.writer:
                raise HistoryError(
                    f"txn {t.tid} read key {r.key} from {r.writer} but the latest "
                    f"committed writer was {latest}"
                )


def check(history: Iterable[HistoryEvent], mode: CheckMode | str) -> Verdict:
    """Verify a history: co-opacity for single-version runs, local opacity
    (every sub-history) for multi-version runs."""
    mode = CheckMode(mode)
    txns = parse(history)
    if mode is CheckMode.CO_OPACITY:
        _check_co_legal(txns)
        return _graph_verdict(build_co_opacity_graph(txns))
    g = build_opacity_graph(txns)
    res = g.topo()
    if res is None:
        return Verdict(False, cycle=g.explain(g.find_cycle()))
    order, rank = res
    aborted = [t for t in txns.values() if t.aborted and t.has_ops]
    _check_reads(txns, aborted)
    for a in sorted(aborted, key=lambda t: t.end_lp):
        cyc = _aborted_cycle(g, rank, a)
        if cyc:
            return Verdict(False, cycle=cyc, sub_history=a.tid)
    return Verdict(True, serial_order=order)


def _aborted_cycle(g: OpacityGraph, rank: list[int], a: TxnRecord):
    """Look for a cycle in the sub-history of aborted ``a``.

    The committed part of that sub-history is the subgraph of ``g`` induced by
    transactions committed before ``a``'s last successful event, with gated
    edges present only once their first reader is in. ``g`` is acyclic, so a
    cycle must use one of the edges ``a`` adds: its own in/out edges and the
    gated edges its reads switch on. The search starts from their heads and
    never leaves the rank window below the largest tail.
    """
    cut = a.last_ok_lp
    A = -1
    extra: dict[int, list[int]] = {A: []}
    tails = []
    # Real-time predecessors: everything reaching the last chain node before A began.
    lps = [lp for lp, _ in g.rt_chain]
    b = bisect.bisect_left(lps, a.begin_lp)
    if b:
        r = g.rt_chain[b - 1][1]
        extra.setdefault(r, []).append(A)
        tails.append(r)
    direct = {}
    roots = [A]
    for rd in a.reads:
        ch = g.keys.get(rd.key)
        pos = g.pos.get(rd.key, {})
        p = 0 if rd.writer == T0 else pos[g.index[rd.writer]]
        if p:
            w = ch.writers[p - 1]
            extra.setdefault(w, []).append(A)
            direct[(w, A)] = {EdgeKind.RVF}
            tails.append(w)
            if p >= 2:
                u = ch.pnodes[p - 2]
                if g.gate.get((u, w), INF) >= cut:
                    extra.setdefault(u, []).append(w)
                    tails.append(u)
                    roots.append(w)
        if ch is not None and p < len(ch.writers):
            extra[A].append(ch.snodes[p])
    if not tails:
        return []
    bound = max(rank[x] for x in tails)
    n_real = g.n_real
    commit_lp = g.commit_lp
    floor = g.floor
    gate = g.gate

    def succ(x):
        if x == A:
            return extra[A]
        more = extra.get(x)
        return g.succ[x] + more if more else g.succ[x]

    def allowed(x, y):
        if y == A:
            return True
        if rank[y] > bound:
            return False
        if y < n_real:
            if commit_lp[y] >= cut:
                return False
            gl = gate.get((x, y))
            if gl is not None and gl >= cut:
                return (x, y) in _extra_pairs
            return True
        return floor[y] < cut

    _extra_pairs = {(x, y) for x, ys in extra.items() for y in ys}
    color: dict[int, int] = {}
    for root in roots:
        if color.get(root):
            continue
        cyc = _dfs_cycle(root, succ, color, allowed)
        if cyc:
            merged = dict(g.direct)
            merged.update(direct)
            return explain_cycle(cyc, n_real, g.tag, g.vertices, merged, extra_id=a.tid)
    return []


def check_by_sub_histories(history: Sequence[HistoryEvent]) -> Verdict:
    """Reference local-opacity check that builds every sub-history graph
    explicitly. Quadratic; meant for small histories and cross-checking."""
    final = None
    for sub in sub_histories(history):
        ro = frozenset() if sub.aborted is None else frozenset({sub.aborted})
        verdict = _graph_verdict(build_opacity_graph(parse(sub.events), readers_only=ro))
        if not verdict.ok:
            return Verdict(False, cycle=verdict.cycle, sub_history=sub.aborted)
        final = verdict
    return final
