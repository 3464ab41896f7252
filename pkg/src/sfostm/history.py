"""History events, the concurrent recorder and the line-oriented file format."""

from __future__ import annotations

import enum
import io
import os
import threading
from dataclasses import dataclass
from typing import IO, Iterable, Iterator

FIELDS = ("txn_id", "its", "cts", "wts", "method", "key", "value", "version_ts", "lp_seq")
DASH = "-"


class Method(enum.Enum):
    BEGIN = "BEGIN"
    LOOKUP = "LOOKUP"
    INSERT_LOG = "INSERT_LOG"
    DELETE = "DELETE"
    TRYC_COMMIT = "TRYC_COMMIT"
    TRYC_ABORT = "TRYC_ABORT"


@dataclass(frozen=True, slots=True)
class HistoryEvent:
    txn_id: int
    its: int
    cts: int
    wts: int
    method: Method
    key: int | None = None
    value: int | None = None
    # txn_id of the writer whose value was returned; 0 is T0 and None means
    # the method was answered from the local log.
    version_ts: int | None = None
    lp_seq: int = 0

    def to_line(self) -> str:
        return " ".join(
            DASH if v is None else (v.value if isinstance(v, Method) else str(v))
            for v in (
                self.txn_id,
                self.its,
                self.cts,
                self.wts,
                self.method,
                self.key,
                self.value,
                self.version_ts,
                self.lp_seq,
            )
        )

    @classmethod
    def from_line(cls, line: str) -> HistoryEvent:
        parts = line.split()
        if len(parts) != len(FIELDS):
            raise ValueError(f"expected {len(FIELDS)} fields, got {len(parts)}: {line!r}")

        def opt(s: str) -> int | None:
            return None if s == DASH else int(s)

        return cls(
            txn_id=int(parts[0]),
            its=int(parts[1]),
            cts=int(parts[2]),
            wts=int(parts[3]),
            method=Method(parts[4]),
            key=opt(parts[5]),
            value=opt(parts[6]),
            version_ts=opt(parts[7]),
            lp_seq=int(parts[8]),
        )


class Recorder:
    """Collects events from many threads.

    ``lp()`` hands out linearization sequence numbers; protocols call it while
    still holding the locks of the method being recorded.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._seq = 0
        self._events: list[HistoryEvent] = []

    def lp(self) -> int:
        with self._lock:
            self._seq += 1
            return self._seq

    def record(
        self,
        txn,
        method: Method,
        key: int | None = None,
        value: int | None = None,
        version_ts: int | None = None,
        lp: int | None = None,
    ) -> HistoryEvent:
        ev = HistoryEvent(
            txn.cts,
            txn.its,
            txn.cts,
            txn.wts,
            method,
            key,
            value,
            version_ts,
            self.lp() if lp is None else lp,
        )
        self._events.append(ev)
        return ev

    def events(self) -> list[HistoryEvent]:
        return sorted(self._events, key=lambda e: e.lp_seq)


def write_history(events: Iterable[HistoryEvent], dest: str | os.PathLike | IO[str]) -> None:
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="ascii") as fh:
            write_history(events, fh)
        return
    for ev in events:
        dest.write(ev.to_line())
        dest.write("\n")


def iter_history(src: str | os.PathLike | IO[str]) -> Iterator[HistoryEvent]:
    if isinstance(src, (str, os.PathLike)):
        with open(src, encoding="ascii") as fh:
            yield from iter_history(fh)
        return
    for n, line in enumerate(src, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            yield HistoryEvent.from_line(line)
        except ValueError as e:
            raise ValueError(f"line {n}: {e}") from None


def read_history(src: str | os.PathLike | IO[str]) -> list[HistoryEvent]:
    return list(iter_history(src))


def history_text(events: Iterable[HistoryEvent]) -> str:
    buf = io.StringIO()
    write_history(events, buf)
    return buf.getvalue()


def load_text(text: str) -> list[HistoryEvent]:
    return read_history(io.StringIO(text))


__all__ = [
    "FIELDS",
    "HistoryEvent",
    "Method",
    "Recorder",
    "history_text",
    "iter_history",
    "load_text",
    "read_history",
    "write_history",
]
