"""Single-version starvation-free protocol.

Each node holds one value and one reader list. A committing writer aborts
every live reader of its keys that has a larger ``its``; meeting a live
reader with a smaller ``its`` aborts the writer instead. The transaction with
the smallest ``its`` therefore never loses a conflict.
"""

from __future__ import annotations

from typing import Any

from .base import BaseSTM
from .core import Mode, OpKind, Status, TxnConfig, TxnDescriptor
from .history import Method
from .store import (
    Node,
    Visibility,
    insert_node,
    lock_nodes,
    po_validate,
    rv_validate,
    set_blue,
    unlock_nodes,
)


class SVOSTM(BaseSTM):
    mode = Mode.SVOSTM

    def __init__(self, config: TxnConfig | None = None, **kw) -> None:
        super().__init__(config or TxnConfig(k_versions=1), **kw)

    def _rv(self, txn: TxnDescriptor, key: int, kind: OpKind) -> Any:
        if txn.status is not Status.LIVE:
            self._abort(txn, "killed")
        pc, held = self.store.locate_locked(key)
        try:
            # Killers set FALSE while holding the node locks of their keys,
            # so this read cannot miss a kill by a writer of this key.
            killed = txn.status is not Status.LIVE
            if not killed:
                node = pc.found()
                if node is None:
                    node = Node(key, self.store.bucket_of(key), marked=True)
                    node.rvl = {txn}
                    insert_node(pc, node, Visibility.RED_ONLY)
                else:
                    node.rvl.add(txn)
                val, writer = node.value, node.writer
                lp = self._lp()
        finally:
            unlock_nodes(held)
        if killed:
            self._abort(txn, "killed")
        self._log_read(txn, key, kind, val)
        if self.recorder:
            m = Method.LOOKUP if kind is OpKind.LOOKUP else Method.DELETE
            self.recorder.record(txn, m, key, val, writer, lp=lp)
        return val

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
            readers = set()
            for pc in pcs:
                node = pc.found()
                if node is not None:
                    readers |= node.rvl
            readers.discard(txn)
            for d in sorted(readers | {txn}, key=lambda d: d.cts):
                d.status_lock.acquire()
                status_held.append(d)

            victims = []
            if txn.status is not Status.LIVE:
                reason = "killed"
            else:
                for p in readers:
                    # Finished readers no longer constrain anybody.
                    if p.status is not Status.LIVE:
                        continue
                    if txn.its < p.its:
                        victims.append(p)
                    else:
                        reason = "older-reader"
                        break
            if reason is None:
                for p in victims:
                    p.status = Status.FALSE
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

    def _apply(self, txn, keys, pcs, new_nodes: list[Node]) -> None:
        store = self.store
        hints = {}
        for key, pc in zip(keys, pcs):
            b = store.bucket_of(key)
            pc = po_validate(hints.get(b), pc)
            entry = txn.tx_log[key]
            val = entry.value if entry.op_kind is OpKind.INSERT else None
            node = pc.found()
            if node is None:
                node = Node(key, b)
                node.lock.acquire()
                new_nodes.append(node)
                node.value, node.writer = val, txn.cts
                vis = Visibility.RED_ONLY if val is None else Visibility.RED_AND_BLUE
                insert_node(pc, node, vis)
            else:
                node.value, node.writer = val, txn.cts
                node.rvl = set()
                set_blue(pc, node, val is not None)
            hints[b] = pc

    def _commit_read_only(self, txn: TxnDescriptor) -> None:
        lp = None
        with txn.status_lock:
            ok = txn.status is Status.LIVE
            if ok:
                txn.status = Status.COMMIT
                lp = self._lp()
        if not ok:
            self._abort(txn, "killed")
        self._committed(txn, lp)

    def contents(self) -> dict[int, Any]:
        return {n.key: n.value for n in self.store.iter_nodes() if not n.marked}
