"""Schedulers for the simulator.

A strategy sees the whole simulator state (including gradients already drawn,
so it is as strong as an adversary that reads the threads' coins) and returns
the id of the enabled thread that takes the next shared-memory step.
"""

from __future__ import annotations

import numpy as np

STRATEGY_NAMES = ("Sequential", "RoundRobin", "UniformRandom", "BoundedDelay", "StaleReplay")


class Strategy:
    name = "Strategy"

    def reset(self, sim) -> None:
        pass

    def choose(self, sim) -> int:
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    def describe(self) -> str:
        inner = ",".join(f"{k}={v}" for k, v in self.params().items())
        return f"{self.name}({inner})"


class Sequential(Strategy):
    """Run one thread until it terminates, then the next."""

    name = "Sequential"

    def choose(self, sim) -> int:
        return sim.enabled[0]


class RoundRobin(Strategy):
    """One step per enabled thread in cyclic order."""

    name = "RoundRobin"

    def reset(self, sim) -> None:
        self._last = -1

    def choose(self, sim) -> int:
        later = [t for t in sim.enabled if t > self._last]
        self._last = later[0] if later else sim.enabled[0]
        return self._last


class UniformRandom(Strategy):
    name = "UniformRandom"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def params(self) -> dict:
        return {"seed": self.seed}

    def reset(self, sim) -> None:
        self._rng = np.random.default_rng([self.seed, 7919])

    def choose(self, sim) -> int:
        enabled = sim.enabled
        return enabled[int(self._rng.integers(len(enabled)))]


class BoundedDelay(Strategy):
    """Random scheduling that stalls victims yet keeps every interval contention <= tau_max.

    A thread is stalled either right after computing its gradient
    (``stall_at="apply"``) or right after its cell-0 update (``"split"``),
    until its live contention reaches a random target in ``[1, tau_max]``.
    New iterations are not started when that would push any contention
    past ``tau_max``.
    """

    name = "BoundedDelay"

    def __init__(self, tau_max: int, seed: int = 0, stall_prob: float = 0.5, stall_at: str = "apply"):
        if tau_max < 0:
            raise ValueError("tau_max must be nonnegative")
        if stall_at not in ("apply", "split"):
            raise ValueError(f"stall_at must be 'apply' or 'split', got {stall_at!r}")
        if not 0 <= stall_prob <= 1:
            raise ValueError("stall_prob must lie in [0, 1]")
        self.tau_max = tau_max
        self.seed = seed
        self.stall_prob = stall_prob
        self.stall_at = stall_at

    def params(self) -> dict:
        return {"tau_max": self.tau_max, "seed": self.seed, "stall_prob": self.stall_prob, "stall_at": self.stall_at}

    def reset(self, sim) -> None:
        self._rng = np.random.default_rng([self.seed, 7919])
        self._stalled: dict[int, int] = {}
        self._considered: set[tuple[int, int]] = set()

    def _at_stall_point(self, it) -> bool:
        if self.stall_at == "apply":
            return it.next_add == 0
        return it.next_add == 1 and len(it.adds) > 1

    def choose(self, sim) -> int:
        cap = self.tau_max
        in_flight = sim.in_flight
        start_ok = len(in_flight) <= cap and all(it.rho < cap for it in in_flight.values())
        exhausted = sim.counter >= sim.T
        pending, current, stalled = sim.pending, sim.current, self._stalled
        while True:
            candidates = []
            for tid in sim.enabled:
                if pending[tid][0] == "faa":
                    if start_ok or exhausted:
                        candidates.append(tid)
                    continue
                if tid in stalled:
                    if current[tid].rho < stalled[tid]:
                        continue
                    del stalled[tid]
                candidates.append(tid)
            if not candidates:
                # only stalled threads can move: release the most contended one
                tid = max(stalled, key=lambda t: (current[t].rho, -t))
                del stalled[tid]
                return tid
            tid = candidates[int(self._rng.integers(len(candidates)))]
            it = current[tid]
            if cap == 0 or it is None or pending[tid][0] != "add" or not self._at_stall_point(it):
                return tid
            key = (tid, it.start)
            if key in self._considered:
                return tid
            self._considered.add(key)
            if self._rng.random() >= self.stall_prob:
                return tid
            target = int(self._rng.integers(1, cap + 1))
            if it.rho >= target:
                return tid
            stalled[tid] = target


class StaleReplay(Strategy):
    """Two-thread adversary: thread 1 computes a gradient at the round's start,
    thread 0 then completes ``tau`` iterations, then thread 1 applies its stale
    gradient.  Rounds repeat until the counter is exhausted."""

    name = "StaleReplay"

    def __init__(self, tau: int):
        if tau < 1:
            raise ValueError("tau must be at least 1")
        self.tau = tau

    def params(self) -> dict:
        return {"tau": self.tau}

    def reset(self, sim) -> None:
        if sim.n != 2:
            raise ValueError(f"StaleReplay is defined for exactly two threads, got n={sim.n}")
        self._phase = "gen"
        self._target = 0

    def choose(self, sim) -> int:
        enabled = sim.enabled
        if 1 not in enabled:
            return enabled[0]
        if 0 not in enabled:
            return 1
        if self._phase == "gen":
            if sim.pending[1][0] != "add":
                return 1
            self._phase = "run"
            self._target = sim.completed_by[0] + self.tau
        if self._phase == "run":
            if sim.completed_by[0] < self._target:
                return 0
            self._phase = "merge"
        # merge: finish thread 1's iteration, then start the next round with it
        if sim.current[1] is not None:
            return 1
        self._phase = "gen"
        return 1


class Scripted(Strategy):
    """Replays an explicit list of thread ids, then defers to ``then`` (default Sequential)."""

    name = "Scripted"

    def __init__(self, schedule, then: Strategy | None = None):
        self.schedule = [int(t) for t in schedule]
        self.then = then if then is not None else Sequential()

    def params(self) -> dict:
        return {"steps": len(self.schedule), "then": self.then.describe()}

    def reset(self, sim) -> None:
        self._pos = 0
        self.then.reset(sim)

    def choose(self, sim) -> int:
        if self._pos < len(self.schedule):
            self._pos += 1
            return self.schedule[self._pos - 1]
        return self.then.choose(sim)


def stale_replay_adversary(tau: int) -> StaleReplay:
    return StaleReplay(tau)


def make_strategy(name: str, *, seed: int = 0, tau: int = 2, tau_max: int = 8, **extra) -> Strategy:
    """Build a strategy from its name and the ``sim.*`` config values."""
    key = name.replace("_", "").replace("-", "").lower()
    if key == "sequential":
        return Sequential()
    if key == "roundrobin":
        return RoundRobin()
    if key in ("uniformrandom", "random"):
        return UniformRandom(seed)
    if key == "boundeddelay":
        return BoundedDelay(tau_max, seed, **extra)
    if key == "stalereplay":
        return StaleReplay(tau)
    raise ValueError(f"unknown strategy {name!r}; expected one of {', '.join(STRATEGY_NAMES)}")
