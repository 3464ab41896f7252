"""Starvation-free object-based software transactional memory."""

from .core import (
    TS_INFINITY,
    UNBOUNDED,
    GlobalCounter,
    LogEntry,
    Mode,
    OpKind,
    Status,
    TransactionAborted,
    TxnConfig,
    TxnDescriptor,
    begin,
    compute_wts,
)
from .history import HistoryEvent, Method, Recorder, read_history, write_history
from .kostm import KOSTM, make_stm
from .svostm import SVOSTM

__all__ = [
    "KOSTM",
    "SVOSTM",
    "TS_INFINITY",
    "UNBOUNDED",
    "GlobalCounter",
    "HistoryEvent",
    "LogEntry",
    "Method",
    "Mode",
    "OpKind",
    "Recorder",
    "Status",
    "TransactionAborted",
    "TxnConfig",
    "TxnDescriptor",
    "begin",
    "compute_wts",
    "make_stm",
    "read_history",
    "write_history",
]
