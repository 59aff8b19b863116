"""Deterministic step-level simulator of lock-free SGD in sequentially consistent memory.

Each thread runs the same program: counter fetch-and-add, ``d`` reads, one
local gradient computation, then the fetch-and-adds (cell 0 unconditionally,
other cells only for nonzero entries).  One shared-memory step is one event;
the strategy picks which enabled thread takes the next event.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

import asgd.engine as engine
from asgd.problems import ProblemSpec, thread_rngs
from asgd.shared_model import IterationRecord
from asgd.sim.analysis import ContentionStats, contention_stats
from asgd.sim.strategies import Scripted
from asgd.sim.trace import ADD, COMPUTE, FAA, READ, ScheduleTrace, SimEvent, read_replay


class IllegalSchedule(RuntimeError):
    pass


class _Iter:
    __slots__ = (
        "thread", "local_step", "start", "view", "read_versions", "gradient", "delta",
        "adds", "next_add", "positions", "index", "first_update", "end", "rho", "generated",
    )

    def __init__(self, thread: int, local_step: int, start: int, d: int, rho: int):
        self.thread = thread
        self.local_step = local_step
        self.start = start
        self.view = [0.0] * d
        self.read_versions = [0] * d
        self.gradient = None
        self.delta = None
        self.adds: list[int] = []
        self.next_add = 0
        self.positions: dict[int, int] = {}
        self.index = -1
        self.first_update = -1
        self.end = -1
        self.rho = rho
        self.generated = -1

    @property
    def gradient_ready(self) -> bool:
        return self.gradient is not None

    @property
    def unapplied(self) -> bool:
        return self.gradient is not None and self.index < 0

    def record(self, epoch: int = 0) -> IterationRecord:
        return IterationRecord(
            index=self.index, thread=self.thread, start=self.start, end=self.end,
            first_update=self.first_update, view=np.array(self.view), gradient=self.gradient,
            delta=self.delta, read_versions=tuple(self.read_versions), positions=dict(self.positions),
            epoch=epoch, local_step=self.local_step, generated=self.generated,
        )


class Simulator:
    """State of one simulated execution; strategies inspect it read-only."""

    def __init__(
        self,
        spec: ProblemSpec,
        cfg: "engine.EpochConfig",
        x0=None,
        record_events: bool = True,
        stop_on_hit: bool = False,
    ):
        self.spec = spec
        self.n, self.d, self.T, self.alpha = cfg.n, spec.d, cfg.T, cfg.alpha
        self.epsilon = cfg.epsilon
        self.seed = cfg.seed
        x0 = spec.x_star + 1.0 if x0 is None else np.asarray(x0, dtype=float)
        if x0.shape != (spec.d,):
            raise ValueError(f"x0 has shape {x0.shape}, expected ({spec.d},)")
        self.x0 = x0.copy()
        self.cells = [float(v) for v in x0]
        self.versions = [0] * self.d
        self.counter = 0
        self.rank = 0
        self.rngs = thread_rngs(cfg.seed, cfg.n)
        self.pending: list[tuple[str, int] | None] = [(FAA, -1)] * self.n
        self.enabled: list[int] = list(range(self.n))
        self.current: list[_Iter | None] = [None] * self.n
        self.in_flight: dict[int, _Iter] = {}
        self.local_steps = [0] * self.n
        self.completed_by = [0] * self.n
        self.finished: list[_Iter] = []
        self.indexed: list[_Iter] = []
        self.accumulators = [self.x0.copy()]
        self.record_events = record_events
        self.events: list[SimEvent] = []
        self.stop_on_hit = stop_on_hit
        self.hit_time: int | None = 0 if spec.dist_sq(self.x0) <= self.epsilon else None
        self.halted = stop_on_hit and self.hit_time is not None

    # queries used by strategies

    def is_start(self, tid: int) -> bool:
        op = self.pending[tid]
        return op is not None and op[0] == FAA and self.counter < self.T

    def at_first_add(self, tid: int) -> bool:
        it = self.current[tid]
        return it is not None and self.pending[tid][0] == ADD and it.next_add == 0

    def mid_update(self, tid: int) -> bool:
        it = self.current[tid]
        return it is not None and self.pending[tid][0] == ADD and it.next_add > 0

    # execution

    def step(self, tid: int) -> None:
        op = self.pending[tid]
        if op is None:
            raise IllegalSchedule(f"illegal schedule: thread {tid} has terminated")
        kind, j = op
        self.rank += 1
        r = self.rank
        delta_logged = 0.0
        if kind == FAA:
            c = self.counter
            self.counter += 1
            if c >= self.T:
                self.pending[tid] = None
                self.enabled.remove(tid)
            else:
                it = _Iter(tid, self.local_steps[tid], r, self.d, len(self.in_flight))
                for other in self.in_flight.values():
                    other.rho += 1
                self.in_flight[tid] = it
                self.current[tid] = it
                self.pending[tid] = (READ, 0)
        elif kind == READ:
            it = self.current[tid]
            it.view[j] = self.cells[j]
            it.read_versions[j] = self.versions[j]
            self.pending[tid] = (READ, j + 1) if j + 1 < self.d else (COMPUTE, -1)
        elif kind == COMPUTE:
            it = self.current[tid]
            value, _ = self.spec.draw(np.array(it.view), self.rngs[tid])
            it.gradient = value
            it.delta = -self.alpha * value
            it.adds = [0] + [k for k in range(1, self.d) if value[k] != 0]
            it.generated = r
            self.pending[tid] = (ADD, 0)
        else:
            it = self.current[tid]
            dj = float(it.delta[j])
            delta_logged = dj
            self.cells[j] = self.cells[j] + dj
            self.versions[j] += 1
            it.positions[j] = self.versions[j]
            if j == 0:
                self._assign_index(it, r)
            it.next_add += 1
            if it.next_add < len(it.adds):
                self.pending[tid] = (ADD, it.adds[it.next_add])
            else:
                it.end = r
                del self.in_flight[tid]
                self.current[tid] = None
                self.finished.append(it)
                self.local_steps[tid] += 1
                self.completed_by[tid] += 1
                self.pending[tid] = (FAA, -1)
        if self.record_events:
            self.events.append(SimEvent(r, tid, kind, j, delta_logged, self.local_steps[tid]))

    def _assign_index(self, it: _Iter, r: int) -> None:
        it.index = self.versions[0]
        it.first_update = r
        self.indexed.append(it)
        x = self.accumulators[-1] + it.delta
        self.accumulators.append(x)
        if self.hit_time is None and self.spec.dist_sq(x) <= self.epsilon:
            self.hit_time = it.index
            if self.stop_on_hit:
                self.halted = True

    def run(self, strategy) -> None:
        strategy.reset(self)
        while self.enabled and not self.halted:
            tid = strategy.choose(self)
            if tid not in self.enabled:
                raise IllegalSchedule(f"illegal schedule: thread {tid} is not enabled at event {self.rank + 1}")
            self.step(tid)

    def to_trace(self, header: dict | None = None) -> ScheduleTrace:
        return ScheduleTrace(
            n=self.n, d=self.d, T=self.T, alpha=self.alpha, x0=self.x0,
            iterations=[it.record() for it in self.indexed],
            accumulators=np.array(self.accumulators),
            events=self.events,
            total_events=self.rank,
            header=dict(header or {}),
        )


@dataclass
class SimResult:
    run: "engine.RunResult"
    stats: ContentionStats | None
    trace: ScheduleTrace


def simulate(
    spec: ProblemSpec,
    cfg: "engine.EpochConfig",
    strategy,
    x0=None,
    stop_on_hit: bool = False,
    record_events: bool = True,
    analyze: bool = True,
) -> SimResult:
    """Execute the lock-free iteration under ``strategy``; bit-reproducible per seed."""
    sim = Simulator(spec, cfg, x0=x0, record_events=record_events, stop_on_hit=stop_on_hit)
    sim.run(strategy)
    header = {
        "backend": "sim", "seed": cfg.seed, "strategy": strategy.describe(), "epoch": 0,
        "epsilon": cfg.epsilon, "stop_on_hit": stop_on_hit,
    }
    trace = sim.to_trace(header)
    xs = trace.accumulators
    run = engine.RunResult(
        hit_time=sim.hit_time,
        final_model=np.array(sim.cells),
        final_accumulator=xs[-1].copy(),
        accumulators=xs,
        iterations=len(sim.indexed),
        trace=trace,
    )
    stats = None
    if analyze:
        stats = contention_stats(trace)
        run.rho, run.taus = stats.rho, stats.tau
        run.tau_max, run.tau_avg = stats.tau_max, stats.tau_avg
    return SimResult(run=run, stats=stats, trace=trace)


def replay(spec: ProblemSpec, path, analyze: bool = True) -> SimResult:
    """Re-execute a run from a binary replay file by following its thread schedule."""
    header, events = read_replay(path)
    if header.get("d") != spec.d:
        raise ValueError(f"replay file is for d={header.get('d')}, problem has d={spec.d}")
    cfg = engine.EpochConfig(
        T=header["T"], alpha=header["alpha"], n=header["n"],
        epsilon=header.get("epsilon", 1.0), seed=header.get("seed", 0),
    )
    strategy = Scripted([ev.thread for ev in events])
    return simulate(
        spec, cfg, strategy, x0=np.array(header["x0"]),
        stop_on_hit=bool(header.get("stop_on_hit", False)), analyze=analyze,
    )
