"""Deterministic simulation of lock-free SGD under chosen schedules."""

from asgd.sim.analysis import (
    ContentionStats,
    Verdict,
    check_contention_windows,
    check_indicator_bound,
    contention_stats,
    iteration_delays,
    run_all_checks,
)
from asgd.sim.core import IllegalSchedule, SimResult, Simulator, replay, simulate
from asgd.sim.strategies import (
    BoundedDelay,
    RoundRobin,
    Scripted,
    Sequential,
    StaleReplay,
    UniformRandom,
    make_strategy,
    stale_replay_adversary,
)
from asgd.sim.trace import ScheduleTrace, SimEvent, read_replay, write_replay

__all__ = [
    "BoundedDelay", "ContentionStats", "IllegalSchedule", "RoundRobin", "ScheduleTrace", "Scripted",
    "Sequential", "SimEvent", "SimResult", "Simulator", "StaleReplay", "UniformRandom", "Verdict",
    "check_contention_windows", "check_indicator_bound", "contention_stats", "iteration_delays",
    "make_strategy", "read_replay", "replay", "run_all_checks", "simulate", "stale_replay_adversary",
    "write_replay",
]
