"""Schedule traces: event log, per-iteration records, CSV and binary replay formats."""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from asgd.shared_model import IterationRecord

FAA, READ, COMPUTE, ADD = "faa", "read", "compute", "add"
KIND_CODES = {FAA: 0, READ: 1, COMPUTE: 2, ADD: 3}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}

REPLAY_MAGIC = b"ASGDTRC1"
_EVENT = struct.Struct("<IHBid")
EVENT_CSV_HEADER = "rank,thread,kind,index,delta"
ITERATION_CSV_HEADER = "t,thread,startEvent,endEvent,tau_t,rho,dist_sq"


@dataclass(frozen=True)
class SimEvent:
    rank: int
    thread: int
    kind: str
    index: int = -1
    delta: float = 0.0
    local_step: int = 0


@dataclass
class ScheduleTrace:
    n: int
    d: int
    T: int
    alpha: float
    x0: np.ndarray
    iterations: list[IterationRecord]
    accumulators: np.ndarray
    events: list[SimEvent] = field(default_factory=list)
    total_events: int = 0
    header: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.iterations.sort(key=lambda r: r.index)

    @property
    def num_iterations(self) -> int:
        return len(self.iterations)

    def events_csv(self) -> str:
        buf = io.StringIO()
        buf.write(EVENT_CSV_HEADER + "\n")
        for ev in self.events:
            idx = "" if ev.index < 0 else str(ev.index)
            delta = repr(float(ev.delta)) if ev.kind == ADD else ""
            buf.write(f"{ev.rank},{ev.thread},{ev.kind},{idx},{delta}\n")
        return buf.getvalue()

    def iterations_csv(self, taus=None, rhos=None, x_star=None) -> str:
        """One row per iteration: t, thread, startEvent, endEvent, tau_t, rho, dist_sq."""
        buf = io.StringIO()
        buf.write(ITERATION_CSV_HEADER + "\n")
        xs = self.accumulators
        ref = np.zeros(self.d) if x_star is None else np.asarray(x_star)
        for k, rec in enumerate(self.iterations):
            tau = "" if taus is None else int(taus[k])
            rho = "" if rhos is None else int(rhos[k])
            diff = xs[rec.index] - ref
            buf.write(
                f"{rec.index},{rec.thread},{rec.start},{rec.end},{tau},{rho},{float(diff @ diff)!r}\n"
            )
        return buf.getvalue()

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.events_csv().encode())
        for rec in self.iterations:
            h.update(
                f"{rec.index}:{rec.thread}:{rec.start}:{rec.end}:{rec.read_versions}:"
                f"{sorted(rec.positions.items())}:".encode()
            )
            h.update(np.ascontiguousarray(rec.delta, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.accumulators, dtype="<f8").tobytes())
        return h.hexdigest()

    def thread_schedule(self) -> list[int]:
        return [ev.thread for ev in self.events]


def write_replay(trace: ScheduleTrace, path: str | Path) -> None:
    """Binary replay file: magic, JSON header (seed, strategy, sizes), packed events."""
    header = dict(trace.header)
    header.update(n=trace.n, d=trace.d, T=trace.T, alpha=trace.alpha, x0=[float(v) for v in trace.x0])
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(REPLAY_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<Q", len(trace.events)))
        for ev in trace.events:
            fh.write(_EVENT.pack(ev.rank, ev.thread, KIND_CODES[ev.kind], ev.index, float(ev.delta)))


def read_replay(path: str | Path) -> tuple[dict[str, Any], list[SimEvent]]:
    with open(path, "rb") as fh:
        if fh.read(len(REPLAY_MAGIC)) != REPLAY_MAGIC:
            raise ValueError("not a replay file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen))
        (count,) = struct.unpack("<Q", fh.read(8))
        events = []
        for _ in range(count):
            rank, thread, code, index, delta = _EVENT.unpack(fh.read(_EVENT.size))
            events.append(SimEvent(rank, thread, KIND_NAMES[code], index, delta))
    return header, events
