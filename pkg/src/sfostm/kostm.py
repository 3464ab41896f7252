"""K-version starvation-free protocol, plus its unbounded and GC variants.

Reads return the version with the largest timestamp below the reader's
working timestamp ``wts``. Every transaction keeps a window ``[tltl, tutl]``
for its serialization point. Reads and commits narrow the window, and an
empty window means abort. A committing writer fixes its point at
``tltl == tutl`` and stamps its versions with it (``vrt``).

Priority follows ``its``. A writer that conflicts with a live reader holding a
larger ``its`` kills that reader. When the reader holds the smaller ``its``,
the writer aborts itself. Retries keep ``its`` and get a larger ``wts``.
"""

from __future__ import annotations

import itertools
from typing import Any

from .base import BaseSTM
from .core import Mode, OpKind, Status, TxnConfig, TxnDescriptor
from .history import Method
from .store import (
    POS_INF,
    Node,
    Version,
    Visibility,
    find_lts_index,
    insert_node,
    lock_nodes,
    po_validate,
    rv_validate,
    unlock_nodes,
)

#: Timestamp of the initial version written by the virtual transaction T0.
T0_TS = (0, 0)
#: GC bound used when nothing is live.
NO_LIVE = (POS_INF,)


class KOSTM(BaseSTM):
    mode = Mode.KOSTM

    def __init__(self, config: TxnConfig | None = None, *, gc_interval: int = 64, **kw) -> None:
        config = config or TxnConfig()
        if config.c_factor <= 0:
            raise ValueError("c_factor must be > 0 for the K-version protocol")
        super().__init__(config, **kw)
        if config.gc_enabled:
            self.mode = Mode.MVOSTM_GC
        elif config.k_versions is None:
            self.mode = Mode.MVOSTM
        self.k = config.k_versions
        self.gc_interval = gc_interval
        self._commit_ticks = itertools.count(1)
        self.gc_reclaimed = 0

    def _c_factor(self) -> Any:
        return self.config.c_factor

    # -- return-value methods ------------------------------------------

    def _rv(self, txn: TxnDescriptor, key: int, kind: OpKind) -> Any:
        if txn.status is not Status.LIVE:
            self._abort(txn, "killed")
        pc, held = self.store.locate_locked(key)
        reason = None
        try:
            node = pc.found()
            with txn.status_lock:
                if txn.status is not Status.LIVE:
                    reason = "killed"
                elif node is None:
                    node = Node(key, self.store.bucket_of(key), marked=True)
                    node.versions.append(Version(T0_TS, None, 0, 0, rvl={txn}))
                    self.store.count_created()
                    insert_node(pc, node, Visibility.RED_ONLY)
                    txn.tltl = max(txn.tltl, 1)
                    val, writer = None, 0
                else:
                    reason, val, writer = self._read_version(txn, node)
                if reason is None:
                    lp = self._lp()
        finally:
            unlock_nodes(held)
        if reason is not None:
            self._abort(txn, reason)
        self._log_read(txn, key, kind, val)
        if self.recorder:
            m = Method.LOOKUP if kind is OpKind.LOOKUP else Method.DELETE
            self.recorder.record(txn, m, key, val, writer, lp=lp)
        return val

    def _read_version(self, txn: TxnDescriptor, node: Node):
        vl = node.versions
        i = find_lts_index(node, txn.order)
        if i < 0:
            return "no-version", None, None
        v = vl[i]
        if i + 1 < len(vl):
            txn.tutl = min(txn.tutl, vl[i + 1].vrt - 1)
        txn.tltl = max(txn.tltl, v.vrt + 1)
        if txn.tltl > txn.tutl:
            return "range", None, None
        v.rvl.add(txn)
        return None, v.val, v.creator

    # -- commit --------------------------------------------------------

    def try_commit(self, txn: TxnDescriptor) -> None:
        self._check_open(txn)
        keys = self._update_keys(txn)
        if not keys:
            self._commit_read_only(txn)
            return
        if txn.status is not Status.LIVE:
            self._abort(txn, "killed")
        store = self.store
        while True:
            pcs = [store.locate(k) for k in keys]
            held = lock_nodes(n for pc in pcs for n in pc.nodes())
            if all(rv_validate(pc) for pc in pcs):
                break
            unlock_nodes(held)

        new_nodes: list[Node] = []
        status_held: list[TxnDescriptor] = []
        reason = None
        lp = None
        try:
            curr: list[Version | None] = []
            nxt: list[Version] = []
            large: set[TxnDescriptor] = set()
            small: set[TxnDescriptor] = set()
            for pc in pcs:
                node = pc.found()
                if node is None:
                    curr.append(None)
                    continue
                i = find_lts_index(node, txn.order)
                if i < 0:
                    reason = "no-version"
                    break
                v = node.versions[i]
                curr.append(v)
                if i + 1 < len(node.versions):
                    nxt.append(node.versions[i + 1])
                for p in v.rvl:
                    if p is not txn:
                        (large if p.order > txn.order else small).add(p)
            if reason is None:
                for d in sorted(large | small | {txn}, key=lambda d: d.cts):
                    d.status_lock.acquire()
                    status_held.append(d)
                reason = self._validate(txn, curr, nxt, large, small)
            if reason is None:
                self._apply(txn, keys, pcs, new_nodes)
                txn.status = Status.COMMIT
                lp = self._lp()
        finally:
            for d in reversed(status_held):
                d.status_lock.release()
            for n in new_nodes:
                n.lock.release()
            unlock_nodes(held)
        if reason is not None:
            self._abort(txn, reason)
        self._committed(txn, lp)
        if self.config.gc_enabled and next(self._commit_ticks) % self.gc_interval == 0:
            self.run_gc()

    def _validate(self, txn, curr, nxt, large, small) -> str | None:
        """Decide the commit under all node and status locks. On success the
        window is closed and losing readers are marked FALSE."""
        if txn.status is not Status.LIVE:
            return "killed"
        victims = []
        for p in large:
            if p.status is Status.LIVE and txn.its < p.its:
                victims.append(p)
            elif p.status is Status.LIVE or p.status is Status.COMMIT:
                return "later-reader"
        tutl = txn.tutl
        for v in nxt:
            tutl = min(tutl, v.vrt - 1)
        tltl = txn.tltl
        for v in curr:
            tltl = max(tltl, (0 if v is None else v.vrt) + 1)
        com_time = self.counter.add_and_get(1)
        tutl = min(tutl, com_time)
        txn.tltl, txn.tutl = tltl, tutl
        if tltl > tutl:
            return "range"
        for p in small:
            if p.status is Status.FALSE or p.status is Status.ABORT:
                continue
            if p.tltl > tutl:
                if p.status is Status.LIVE and txn.its < p.its:
                    victims.append(p)
                else:
                    return "earlier-reader"
        # Point of no return.
        txn.tltl = tutl
        for p in small:
            if p.status is Status.LIVE:
                p.tutl = min(p.tutl, txn.tltl - 1)
        for p in victims:
            p.status = Status.FALSE
        return None

    def _apply(self, txn, keys, pcs, new_nodes: list[Node]) -> None:
        store = self.store
        hints = {}
        for key, pc in zip(keys, pcs):
            b = store.bucket_of(key)
            pc = po_validate(hints.get(b), pc)
            entry = txn.tx_log[key]
            val = entry.value if entry.op_kind is OpKind.INSERT else None
            v = Version(txn.order, val, txn.tltl, txn.cts)
            node = pc.found()
            if node is None:
                node = Node(key, b)
                node.lock.acquire()
                new_nodes.append(node)
                node.versions.append(Version(T0_TS, None, 0, 0))
                store.count_created()
                store.add_version(node, v, self.k)
                vis = Visibility.RED_ONLY if val is None else Visibility.RED_AND_BLUE
                insert_node(pc, node, vis)
            else:
                store.add_version(node, v, self.k, pc)
            hints[b] = pc

    def _commit_read_only(self, txn: TxnDescriptor) -> None:
        lp = None
        with txn.status_lock:
            ok = txn.status is Status.LIVE and txn.tltl <= txn.tutl
            if ok:
                txn.status = Status.COMMIT
                lp = self._lp()
        if not ok:
            self._abort(txn, "killed" if txn.status is Status.FALSE else "range")
        self._committed(txn, lp)

    # -- garbage collection ----------------------------------------------

    def min_live_order(self) -> tuple:
        """Order of the oldest live transaction, or NO_LIVE."""
        m = self.livelist.min()
        return NO_LIVE if m is None else m

    def gc_bound(self) -> tuple:
        """Versions below this order, other than the newest such one per
        key, can no longer be read by any transaction."""
        return self.livelist.bound(self.counter)

    def run_gc(self) -> int:
        if not self.config.gc_enabled:
            raise RuntimeError("garbage collection needs the mvostm-gc mode")
        n = self.store.gc_collect(self.gc_bound())
        self.gc_reclaimed += n
        return n

    # -- inspection ----------------------------------------------------

    def contents(self) -> dict[int, Any]:
        out = {}
        for n in self.store.iter_nodes():
            if n.versions and n.versions[-1].val is not None:
                out[n.key] = n.versions[-1].val
        return out


def make_stm(mode: Mode | str, *, k_versions: int = 5, c_factor: float = 0.1, buckets: int = 5, **kw):
    """Build a protocol instance for ``mode``."""
    from .svostm import SVOSTM

    mode = Mode(mode)
    cfg = TxnConfig.for_mode(mode, k_versions=k_versions, c_factor=c_factor, buckets=buckets)
    if mode is Mode.SVOSTM:
        kw.pop("gc_interval", None)
        return SVOSTM(cfg, **kw)
    return KOSTM(cfg, **kw)


__all__ = ["KOSTM", "NO_LIVE", "T0_TS", "make_stm"]
