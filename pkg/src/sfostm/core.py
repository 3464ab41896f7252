"""Transaction identity, timestamps, status and the shared counter."""

from __future__ import annotations

import enum
import math
import threading
from dataclasses import dataclass
from fractions import Fraction
from typing import Any

#: Upper-limit sentinel for ``tutl``; the largest unsigned 64-bit value.
TS_INFINITY = (1 << 64) - 1

#: ``k_versions`` value meaning "keep every version".
UNBOUNDED = None


class TransactionAborted(Exception):
    """Raised by any transactional method whose transaction must abort."""

    def __init__(self, txn: "TxnDescriptor", reason: str) -> None:
        super().__init__(f"txn {txn.cts} (its {txn.its}) aborted: {reason}")
        self.txn = txn
        self.reason = reason


class Status(enum.Enum):
    LIVE = "live"
    COMMIT = "commit"
    # Set by another transaction through its-priority.
    FALSE = "false"
    # Set by the transaction itself when one of its own gates fails.
    ABORT = "abort"


class OpKind(enum.Enum):
    LOOKUP = "lookup"
    INSERT = "insert"
    DELETE = "delete"


class Mode(enum.Enum):
    SVOSTM = "svostm"
    KOSTM = "kostm"
    MVOSTM = "mvostm"
    MVOSTM_GC = "mvostm-gc"


@dataclass(frozen=True)
class TxnConfig:
    k_versions: int | None = 5
    c_factor: float | Fraction = 0.1
    buckets: int = 5
    gc_enabled: bool = False

    def __post_init__(self) -> None:
        if self.k_versions is not UNBOUNDED and self.k_versions < 1:
            raise ValueError("k_versions must be >= 1 or UNBOUNDED")
        if self.gc_enabled and self.k_versions is not UNBOUNDED:
            raise ValueError("gc_enabled requires k_versions == UNBOUNDED")
        if self.c_factor < 0:
            raise ValueError("c_factor must be nonnegative")
        if self.buckets < 1:
            raise ValueError("buckets must be positive")

    @classmethod
    def for_mode(
        cls, mode: Mode, k_versions: int = 5, c_factor: float = 0.1, buckets: int = 5
    ) -> TxnConfig:
        if mode is Mode.SVOSTM:
            return cls(k_versions=1, c_factor=c_factor, buckets=buckets)
        if mode is Mode.KOSTM:
            return cls(k_versions=k_versions, c_factor=c_factor, buckets=buckets)
        return cls(
            k_versions=UNBOUNDED,
            c_factor=c_factor,
            buckets=buckets,
            gc_enabled=mode is Mode.MVOSTM_GC,
        )


def _exact(c: float | Fraction | int | str) -> Fraction:
    # A float is read as the decimal it was written as (0.1 means 1/10),
    # not as its binary approximation.
    if isinstance(c, float):
        return Fraction(repr(c))
    return Fraction(c)


def compute_wts(its: int, cts: int, c_factor: float | Fraction | int | str) -> int:
    """Working timestamp ``cts + ceil(C * (cts - its))`` in exact arithmetic."""
    if cts < its:
        raise ValueError(f"cts {cts} is smaller than its {its}")
    c = _exact(c_factor)
    if c < 0:
        raise ValueError("c_factor must be nonnegative")
    return cts + math.ceil(c * (cts - its))


class GlobalCounter:
    """Shared timestamp source. Every fetch returns a fresh, larger value."""

    def __init__(self, start: int = 1) -> None:
        self._lock = threading.Lock()
        self._next = start

    @property
    def next_value(self) -> int:
        return self._next

    def get_and_inc(self) -> int:
        with self._lock:
            v = self._next
            self._next += 1
            return v

    def add_and_get(self, incr: int = 1) -> int:
        # Returns the new value minus one so that begin and commit fetches
        # never hand out the same number.
        if incr < 1:
            raise ValueError("incr must be >= 1")
        with self._lock:
            self._next += incr
            return self._next - 1

    def set_next(self, value: int) -> None:
        """Test hook: jump the counter forward."""
        with self._lock:
            if value < self._next:
                raise ValueError("counter can only move forward")
            self._next = value


@dataclass
class LogEntry:
    key: int
    op_kind: OpKind
    value: Any = None
    # True when the entry came from a shared-memory read.
    read_shared: bool = False
    cached_preds_currs: Any = None


class TxnDescriptor:
    """Per-incarnation state. Only ``status``, ``tltl`` and ``tutl`` are
    touched by other threads, always under ``status_lock``."""

    __slots__ = (
        "its",
        "cts",
        "wts",
        "tltl",
        "tutl",
        "status",
        "status_lock",
        "tx_log",
        "order",
        "closed",
        "__weakref__",
    )

    def __init__(self, its: int, cts: int, wts: int) -> None:
        self.its = its
        self.cts = cts
        self.wts = wts
        self.tltl = cts
        self.tutl = TS_INFINITY
        self.status = Status.LIVE
        self.status_lock = threading.Lock()
        self.tx_log: dict[int, LogEntry] = {}
        # Total order used for versions and priority comparisons on wts;
        # cts breaks ties between different incarnation chains.
        self.order = (wts, cts)
        # Set once the owner has seen the commit or the abort.
        self.closed = False

    @property
    def txn_id(self) -> int:
        return self.cts

    def __repr__(self) -> str:
        return (
            f"Txn(its={self.its}, cts={self.cts}, wts={self.wts}, "
            f"tltl={self.tltl}, tutl={self.tutl}, {self.status.name})"
        )


def begin(
    counter: GlobalCounter, c_factor: float | Fraction = 0, prior_its: int | None = None
) -> TxnDescriptor:
    cts = counter.get_and_inc()
    if prior_its is None:
        return TxnDescriptor(cts, cts, cts)
    return TxnDescriptor(prior_its, cts, compute_wts(prior_its, cts, c_factor))

