"""Behaviour shared by the single-version and K-version protocols."""

from __future__ import annotations

import collections
import threading
from typing import Any, Callable, NoReturn

from .core import (
    GlobalCounter,
    LogEntry,
    Mode,
    OpKind,
    Status,
    TransactionAborted,
    TxnConfig,
    TxnDescriptor,
    begin,
)
from .history import Method, Recorder
from .store import Store


class LiveList:
    """Ordered view of the live transactions' (wts, cts)."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._live: dict[int, tuple[int, int]] = {}

    def add(self, txn: TxnDescriptor) -> None:
        with self._lock:
            self._live[txn.cts] = txn.order

    def enter(self, make: Callable[[], TxnDescriptor]) -> TxnDescriptor:
        """Create a descriptor and register it in one step, so no begun
        transaction is ever missing from the list."""
        with self._lock:
            txn = make()
            self._live[txn.cts] = txn.order
            return txn

    def bound(self, counter: GlobalCounter) -> tuple:
        """Smallest order any current or future transaction can read at.

        A future transaction gets a cts of at least the counter's next
        value, and its wts is never below its cts.
        """
        with self._lock:
            floor = (counter.next_value,)
            return min(min(self._live.values(), default=floor), floor)

    def discard(self, txn: TxnDescriptor) -> None:
        with self._lock:
            self._live.pop(txn.cts, None)

    def min(self) -> tuple[int, int] | None:
        with self._lock:
            return min(self._live.values(), default=None)

    def __len__(self) -> int:
        return len(self._live)


class BaseSTM:
    mode: Mode

    def __init__(
        self,
        config: TxnConfig,
        *,
        recorder: Recorder | None = None,
        counter: GlobalCounter | None = None,
    ) -> None:
        self.config = config
        self.counter = counter if counter is not None else GlobalCounter()
        self.store = Store(config.buckets)
        self.recorder = recorder
        self.livelist = LiveList()
        self._stats_lock = threading.Lock()
        self.commits = 0
        self.abort_reasons: collections.Counter[str] = collections.Counter()

    # -- lifecycle -----------------------------------------------------

    def _c_factor(self) -> Any:
        return 0

    def begin(self, its: int | None = None) -> TxnDescriptor:
        rec = self.recorder
        # The begin LP precedes the counter fetch so that "committed before
        # this begin" implies a smaller counter value.
        lp = rec.lp() if rec else None
        txn = self.livelist.enter(lambda: begin(self.counter, self._c_factor(), its))
        if rec:
            rec.record(txn, Method.BEGIN, lp=lp)
        return txn

    def _abort(self, txn: TxnDescriptor, reason: str) -> NoReturn:
        with txn.status_lock:
            if txn.status is Status.LIVE:
                txn.status = Status.ABORT
            elif txn.status is Status.COMMIT:
                raise RuntimeError("committed transaction cannot abort")
        txn.closed = True
        self.livelist.discard(txn)
        if self.recorder:
            self.recorder.record(txn, Method.TRYC_ABORT)
        with self._stats_lock:
            self.abort_reasons[reason] += 1
        raise TransactionAborted(txn, reason)

    def _committed(self, txn: TxnDescriptor, lp: int | None) -> None:
        txn.closed = True
        self.livelist.discard(txn)
        if self.recorder:
            self.recorder.record(txn, Method.TRYC_COMMIT, lp=lp)
        with self._stats_lock:
            self.commits += 1

    def _lp(self) -> int | None:
        return self.recorder.lp() if self.recorder else None

    def _check_open(self, txn: TxnDescriptor) -> None:
        if txn.closed:
            raise ValueError(f"transaction {txn.cts} already finished")

    # -- methods -------------------------------------------------------

    def _local_lp(self, txn: TxnDescriptor) -> int | None:
        """LP of a method answered from the local log.

        The status check and the LP share the status lock, so a transaction
        killed by a committed writer cannot log a success after that commit.
        """
        with txn.status_lock:
            live = txn.status is Status.LIVE
            lp = self._lp() if live else None
        if not live:
            self._abort(txn, "killed")
        return lp

    def lookup(self, txn: TxnDescriptor, key: int) -> Any:
        self._check_open(txn)
        e = txn.tx_log.get(key)
        if e is not None:
            lp = self._local_lp(txn)
            val = None if e.op_kind is OpKind.DELETE else e.value
            if self.recorder:
                self.recorder.record(txn, Method.LOOKUP, key, val, lp=lp)
            return val
        return self._rv(txn, key, OpKind.LOOKUP)

    def delete(self, txn: TxnDescriptor, key: int) -> Any:
        self._check_open(txn)
        e = txn.tx_log.get(key)
        if e is not None:
            lp = self._local_lp(txn)
            val = None if e.op_kind is OpKind.DELETE else e.value
            e.op_kind, e.value = OpKind.DELETE, None
            if self.recorder:
                self.recorder.record(txn, Method.DELETE, key, val, lp=lp)
            return val
        return self._rv(txn, key, OpKind.DELETE)

    def insert(self, txn: TxnDescriptor, key: int, value: Any) -> None:
        if value is None:
            raise ValueError("None is reserved for absent keys")
        self._check_open(txn)
        lp = self._local_lp(txn)
        e = txn.tx_log.get(key)
        if e is None:
            txn.tx_log[key] = LogEntry(key, OpKind.INSERT, value)
        else:
            e.op_kind, e.value = OpKind.INSERT, value
        if self.recorder:
            self.recorder.record(txn, Method.INSERT_LOG, key, value, lp=lp)

    def _log_read(self, txn: TxnDescriptor, key: int, kind: OpKind, val: Any) -> None:
        txn.tx_log[key] = LogEntry(
            key, kind, val if kind is OpKind.LOOKUP else None, read_shared=True
        )

    def _update_keys(self, txn: TxnDescriptor) -> list[int]:
        return sorted(k for k, e in txn.tx_log.items() if e.op_kind is not OpKind.LOOKUP)

    def _rv(self, txn: TxnDescriptor, key: int, kind: OpKind) -> Any:
        raise NotImplementedError

    def try_commit(self, txn: TxnDescriptor) -> None:
        raise NotImplementedError

    # -- inspection ----------------------------------------------------

    def contents(self) -> dict[int, Any]:
        """Latest committed value per present key (quiescent use only)."""
        raise NotImplementedError
