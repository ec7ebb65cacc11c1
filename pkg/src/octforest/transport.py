"""In-process multi-rank message passing with a deterministic trace.

Each rank runs on its own thread. In ``roundrobin`` mode exactly one rank
runs at a time and control passes in rank order whenever a rank blocks; in
``parallel`` mode ranks run freely. Point-to-point messages are FIFO per
(sender, receiver) pair and sends never block. Collectives are matched by a
per-rank epoch counter.
"""

import json
import threading
import zlib
from array import array
from collections import deque


class TransportError(RuntimeError):
    pass


class DeadlockError(TransportError):
    def __init__(self, blocked):
        super().__init__(f"deadlock: ranks {sorted(blocked)} cannot progress")
        self.blocked = sorted(blocked)


class Aborted(TransportError):
    """Raised inside a rank when another rank failed."""


def prefix_sums(values):
    """Exclusive prefix sums with a leading zero, one entry per value."""
    out = []
    total = 0
    for v in values:
        out.append(total)
        total += v
    return out


def pack_ints(values):
    return array("q", values).tobytes()


def unpack_ints(data):
    a = array("q")
    a.frombytes(data)
    return a.tolist()


def _checksum(data):
    return zlib.crc32(data) & 0xFFFFFFFF


class RankGroup:
    def __init__(self, size, mode="roundrobin", trace=False):
        if size < 1:
            raise TransportError("need at least one rank")
        if mode not in ("roundrobin", "parallel"):
            raise TransportError(f"unknown scheduling mode {mode!r}")
        self.size = size
        self.mode = mode
        self.tracing = trace
        self.records = []
        self._cond = threading.Condition()
        self._queues = {}
        self._seq = {}
        self._epoch = [0] * size
        self._gather = {}
        self._finished = set()
        self._waiting = {}
        self._current = 0
        self._error = None

    # scheduling helpers; all called with the lock held
    def _ready(self, rank):
        pred = self._waiting.get(rank)
        return pred is None or pred()

    def _check_deadlock(self):
        active = [r for r in range(self.size) if r not in self._finished]
        if active and all(r in self._waiting and not self._waiting[r]() for r in active):
            self._error = self._error or DeadlockError(active)
            self._cond.notify_all()

    def _pass_baton(self, rank):
        for step in range(1, self.size + 1):
            r = (rank + step) % self.size
            if r not in self._finished and self._ready(r):
                self._current = r
                self._cond.notify_all()
                return
        self._check_deadlock()

    def _block(self, rank, pred):
        if self._error is not None:
            raise Aborted("another rank failed")
        if pred() and (self.mode == "parallel" or self._current == rank):
            return
        self._waiting[rank] = pred
        if self.mode == "roundrobin":
            if self._current == rank:
                self._pass_baton(rank)
        else:
            self._check_deadlock()
        while True:
            if self._error is not None:
                self._waiting.pop(rank, None)
                raise Aborted("another rank failed")
            if pred() and (self.mode == "parallel" or self._current == rank):
                break
            self._cond.wait()
        self._waiting.pop(rank, None)

    def _trace(self, rec):
        if self.tracing:
            self.records.append(rec)

    def trace_lines(self):
        recs = sorted(self.records, key=lambda r: (r["epoch"], r["sender"], r["receiver"], r["seq"]))
        return [json.dumps(r, sort_keys=True) for r in recs]

    def run(self, fn):
        """Run ``fn(comm)`` on every rank; return the per-rank results."""
        results = [None] * self.size
        errors = [None] * self.size

        def body(rank):
            comm = Comm(self, rank)
            try:
                with self._cond:
                    self._block(rank, lambda: True)
                results[rank] = fn(comm)
            except BaseException as exc:  # noqa: BLE001 - forwarded to the caller
                errors[rank] = exc
                with self._cond:
                    if self._error is None and not isinstance(exc, Aborted):
                        self._error = exc
                    self._cond.notify_all()
            finally:
                with self._cond:
                    self._finished.add(rank)
                    self._waiting.pop(rank, None)
                    if self.mode == "roundrobin" and self._current == rank:
                        self._pass_baton(rank)
                    else:
                        self._check_deadlock()
                    self._cond.notify_all()

        threads = [threading.Thread(target=body, args=(r,), daemon=True) for r in range(self.size)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if self._error is not None:
            raise self._error
        for e in errors:
            if e is not None:
                raise e
        return results


class Comm:
    """Per-rank handle onto a RankGroup."""

    def __init__(self, group, rank):
        self.group = group
        self.rank = rank
        self.size = group.size

    def send(self, to, data):
        g = self.group
        if not 0 <= to < g.size or to == self.rank:
            raise TransportError(f"invalid destination {to}")
        data = bytes(data)
        with g._cond:
            if g._error is not None:
                raise Aborted("another rank failed")
            pair = (self.rank, to)
            seq = g._seq.get(pair, 0)
            g._seq[pair] = seq + 1
            g._queues.setdefault(pair, deque()).append(data)
            g._trace({"epoch": g._epoch[self.rank], "sender": self.rank, "receiver": to,
                      "seq": seq, "kind": "p2p", "bytes": len(data),
                      "checksum": _checksum(data)})
            g._cond.notify_all()

    def recv(self, frm):
        g = self.group
        if not 0 <= frm < g.size or frm == self.rank:
            raise TransportError(f"invalid source {frm}")
        pair = (frm, self.rank)
        with g._cond:
            q = g._queues.setdefault(pair, deque())
            g._block(self.rank, lambda: bool(q))
            return q.popleft()

    def allgather(self, value, kind="allgather"):
        g = self.group
        with g._cond:
            if g._error is not None:
                raise Aborted("another rank failed")
            e = g._epoch[self.rank]
            g._epoch[self.rank] = e + 1
            slot = g._gather.setdefault(e, {"values": {}, "kinds": {}, "read": 0})
            slot["values"][self.rank] = value
            slot["kinds"][self.rank] = kind
            payload = repr(value).encode()
            g._trace({"epoch": e, "sender": self.rank, "receiver": -1, "seq": 0,
                      "kind": kind, "bytes": len(payload), "checksum": _checksum(payload)})
            g._cond.notify_all()
            g._block(self.rank, lambda: len(slot["values"]) == g.size)
            if len(set(slot["kinds"].values())) != 1:
                raise TransportError(f"mismatched collectives in epoch {e}: {slot['kinds']}")
            result = [slot["values"][r] for r in range(g.size)]
            slot["read"] += 1
            if slot["read"] == g.size:
                del g._gather[e]
            return result

    def barrier(self):
        self.allgather(None, kind="barrier")


def run(size, fn, mode="roundrobin", trace=False):
    """Convenience wrapper: returns per-rank results (and the group if tracing)."""
    group = RankGroup(size, mode=mode, trace=trace)
    results = group.run(fn)
    if trace:
        return results, group
    return results
