"""Hash table of red-blue lazy lists with per-key version lists.

Every bucket is a sorted singly linked list between two sentinels. The red
chain (``rn``) links every node, including logically deleted (marked) ones.
The blue chain (``bn``) is the subsequence of unmarked nodes. Traversal is
optimistic; callers lock the nodes they found and then validate.
"""

from __future__ import annotations

import bisect
import enum
import threading
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Iterator

NEG_INF = float("-inf")
POS_INF = float("inf")


class Visibility(enum.Enum):
    RED_ONLY = "red"
    RED_AND_BLUE = "red+blue"


class Version:
    __slots__ = ("ts", "val", "rvl", "vrt", "creator")

    def __init__(self, ts: Any, val: Any, vrt: int, creator: int, rvl: set | None = None):
        self.ts = ts
        self.val = val
        # Readers of this version (transaction descriptors).
        self.rvl: set = set() if rvl is None else rvl
        self.vrt = vrt
        # txn_id of the writer; 0 is the initial transaction T0.
        self.creator = creator

    def __repr__(self) -> str:
        return f"Version(ts={self.ts}, val={self.val!r}, vrt={self.vrt})"


class Node:
    __slots__ = (
        "key",
        "bucket",
        "lock",
        "marked",
        "versions",
        "rn",
        "bn",
        "value",
        "rvl",
        "writer",
    )

    def __init__(self, key: float, bucket: int, marked: bool = True) -> None:
        self.key = key
        self.bucket = bucket
        self.lock = threading.Lock()
        self.marked = marked
        # Multi-version payload, sorted by ts.
        self.versions: list[Version] = []
        self.rn: Node | None = None
        self.bn: Node | None = None
        # Single-version payload.
        self.value: Any = None
        self.rvl: set = set()
        self.writer = 0

    @property
    def sort_key(self) -> tuple[float, int]:
        return (self.key, self.bucket)

    @property
    def is_sentinel(self) -> bool:
        return self.key == NEG_INF or self.key == POS_INF

    def __repr__(self) -> str:
        m = "m" if self.marked else ""
        return f"Node({self.key}{m})"


@dataclass
class PredsCurrs:
    key: int
    blue_pred: Node
    blue_curr: Node
    red_pred: Node
    red_curr: Node

    def nodes(self) -> list[Node]:
        out: list[Node] = []
        for n in (self.blue_pred, self.red_pred, self.red_curr, self.blue_curr):
            if not any(n is m for m in out):
                out.append(n)
        return out

    def found(self) -> Node | None:
        return self.red_curr if self.red_curr.key == self.key else None


def lock_nodes(nodes: Iterable[Node]) -> list[Node]:
    """Lock distinct nodes in ascending (key, bucket) order."""
    uniq = {id(n): n for n in nodes}
    ordered = sorted(uniq.values(), key=lambda n: n.sort_key)
    for n in ordered:
        n.lock.acquire()
    return ordered


def unlock_nodes(ordered: list[Node]) -> None:
    for n in reversed(ordered):
        n.lock.release()


def rv_validate(pc: PredsCurrs) -> bool:
    return not (
        pc.blue_pred.marked
        or pc.blue_curr.marked
        or pc.blue_pred.bn is not pc.blue_curr
        or pc.red_pred.rn is not pc.red_curr
    )


def po_validate(log_hint: PredsCurrs | None, current: PredsCurrs) -> PredsCurrs:
    """Re-resolve ``current`` after earlier methods of the same commit changed
    the list. Every node walked over is locked by the committing thread."""
    key = current.key
    bp = current.blue_pred
    if bp.marked and log_hint is not None:
        bp = log_hint.blue_pred
    while bp.bn.key < key:
        bp = bp.bn
    rp = current.red_pred
    if rp.key < bp.key:
        rp = bp
    while rp.rn.key < key:
        rp = rp.rn
    out = PredsCurrs(key, bp, bp.bn, rp, rp.rn)
    if (
        out.blue_pred is current.blue_pred
        and out.blue_curr is current.blue_curr
        and out.red_pred is current.red_pred
        and out.red_curr is current.red_curr
    ):
        return current
    return out


def insert_node(pc: PredsCurrs, node: Node, visibility: Visibility) -> None:
    if pc.red_curr.key == node.key:
        raise ValueError(f"key {node.key} already has a node; unmark it instead")
    node.rn = pc.red_curr
    if visibility is Visibility.RED_AND_BLUE:
        node.marked = False
        node.bn = pc.blue_curr
        pc.red_pred.rn = node
        pc.blue_pred.bn = node
    else:
        node.marked = True
        node.bn = pc.blue_curr
        pc.red_pred.rn = node


def set_blue(pc: PredsCurrs, node: Node, visible: bool) -> None:
    """Join or leave the blue chain; ``pc`` must be validated for node.key."""
    if visible == (not node.marked):
        return
    if visible:
        node.bn = pc.blue_curr
        node.marked = False
        pc.blue_pred.bn = node
    else:
        node.marked = True
        pc.blue_pred.bn = node.bn


def find_lts_index(node: Node, reader_ts: Any) -> int:
    """Index of the version with the largest ts below ``reader_ts``, or -1."""
    return bisect.bisect_left(node.versions, reader_ts, key=lambda v: v.ts) - 1


def find_lts_version(node: Node, reader_ts: Any) -> Version | None:
    i = find_lts_index(node, reader_ts)
    return node.versions[i] if i >= 0 else None


class Store:
    """M buckets of red-blue lazy lists."""

    def __init__(self, buckets: int = 5) -> None:
        if buckets < 1:
            raise ValueError("buckets must be positive")
        self.m = buckets
        self.heads: list[Node] = []
        for b in range(buckets):
            head, tail = Node(NEG_INF, b, marked=False), Node(POS_INF, b, marked=False)
            head.rn = head.bn = tail
            self.heads.append(head)
        self._vc_lock = threading.Lock()
        self.version_count = 0
        self.versions_created = 0
        self.versions_reclaimed = 0

    def bucket_of(self, key: int) -> int:
        return key % self.m

    def locate(self, key: int) -> PredsCurrs:
        bp = self.heads[self.bucket_of(key)]
        bc = bp.bn
        while bc.key < key:
            bp, bc = bc, bc.bn
        rp = bp
        rc = rp.rn
        while rc.key < key:
            rp, rc = rc, rc.rn
        return PredsCurrs(key, bp, bc, rp, rc)

    def locate_locked(self, key: int) -> tuple[PredsCurrs, list[Node]]:
        """Locate, lock and validate, retrying until the snapshot holds."""
        while True:
            pc = self.locate(key)
            held = lock_nodes(pc.nodes())
            if rv_validate(pc):
                return pc, held
            unlock_nodes(held)

    # -- version bookkeeping -------------------------------------------

    def count_created(self, n: int = 1) -> None:
        with self._vc_lock:
            self.version_count += n
            self.versions_created += n

    def count_reclaimed(self, n: int) -> None:
        if n:
            with self._vc_lock:
                self.version_count -= n
                self.versions_reclaimed += n

    def add_version(
        self, node: Node, v: Version, k: int | None, pc: PredsCurrs | None = None
    ) -> None:
        """Insert ``v`` at its ts position, evict the oldest beyond ``k`` and
        make the mark follow the newest version (absent value means marked)."""
        vl = node.versions
        i = bisect.bisect_left(vl, v.ts, key=lambda x: x.ts)
        if i < len(vl) and vl[i].ts == v.ts:
            raise ValueError(f"duplicate version ts {v.ts}")
        vl.insert(i, v)
        self.count_created()
        dropped = 0
        if k is not None:
            while len(vl) > k:
                vl.pop(0).rvl = set()
                dropped += 1
        self.count_reclaimed(dropped)
        deleted = vl[-1].val is None
        if pc is not None:
            set_blue(pc, node, not deleted)
        else:
            node.marked = deleted

    def gc_node(self, node: Node, min_live_ts: Any) -> int:
        """Drop versions older than ``min_live_ts`` except the newest of them."""
        vl = node.versions
        below = bisect.bisect_left(vl, min_live_ts, key=lambda x: x.ts)
        if below <= 1:
            return 0
        n = below - 1
        for v in vl[:n]:
            v.rvl = set()
        del vl[:n]
        self.count_reclaimed(n)
        return n

    def gc_collect(self, min_live_ts: Any) -> int:
        reclaimed = 0
        for node in self.iter_nodes():
            with node.lock:
                reclaimed += self.gc_node(node, min_live_ts)
        return reclaimed

    # -- inspection ----------------------------------------------------

    def iter_nodes(self, bucket: int | None = None) -> Iterator[Node]:
        heads = self.heads if bucket is None else [self.heads[bucket]]
        for head in heads:
            n = head.rn
            while n.key != POS_INF:
                yield n
                n = n.rn

    def red_keys(self, bucket: int) -> list[Any]:
        return [n.key for n in self.iter_nodes(bucket)]

    def blue_keys(self, bucket: int) -> list[Any]:
        out = []
        n = self.heads[bucket].bn
        while n.key != POS_INF:
            out.append(n.key)
            n = n.bn
        return out

    def check_structure(self) -> list[str]:
        """Quiescent-state invariant scan; returns a list of violations."""
        problems = []
        for b in range(self.m):
            red = self.red_keys(b)
            if any(x >= y for x, y in zip(red, red[1:])):
                problems.append(f"bucket {b}: red chain not strictly increasing {red}")
            blue = self.blue_keys(b)
            unmarked = [n.key for n in self.iter_nodes(b) if not n.marked]
            if blue != unmarked:
                problems.append(f"bucket {b}: blue chain {blue} != unmarked {unmarked}")
            for n in self.iter_nodes(b):
                if self.bucket_of(n.key) != b:
                    problems.append(f"key {n.key} in wrong bucket {b}")
        return problems

    def snapshot(self, reader: Callable[[Node], Any]) -> dict[int, Any]:
        return {n.key: reader(n) for n in self.iter_nodes()}
