"""Real-thread lock-free SGD: per-epoch workers and the epoch-halving driver.

Each worker loops: claim an iteration on the shared counter, read the model
entry by entry, draw a stochastic gradient at that view, and fetch-add the
scaled negative gradient into every cell.  Cell 0 is always written (even
for a zero entry) and always first, which fixes the iteration order.
"""

from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from asgd.problems import ProblemSpec, thread_rngs
from asgd.shared_model import AtomicCounter, IterationRecord, SharedModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpochConfig:
    T: int
    alpha: float
    n: int = 1
    epsilon: float = 1.0
    seed: int = 0
    theta: float = 1.0
    trace: bool = False

    def __post_init__(self) -> None:
        if self.T < 0:
            raise ValueError("T must be nonnegative")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.n < 1:
            raise ValueError("need at least one thread")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.theta <= 1:
            raise ValueError("theta must lie in (0, 1]")


@dataclass
class RunResult:
    hit_time: int | None
    final_model: np.ndarray
    final_accumulator: np.ndarray
    accumulators: np.ndarray
    iterations: int
    trace: object | None = None
    tau_max: int | None = None
    tau_avg: float | None = None
    rho: np.ndarray | None = None
    taus: np.ndarray | None = None
    failures: dict[int, str] = field(default_factory=dict)

    def dist_sq(self, x_star) -> np.ndarray:
        diff = self.accumulators - np.asarray(x_star)
        return np.einsum("ij,ij->i", diff, diff)


class WorkerCrash(RuntimeError):
    """A worker thread raised; ``result`` holds what the survivors produced."""

    def __init__(self, failures: dict[int, str], result: RunResult):
        names = ", ".join(f"worker-{tid}: {msg}" for tid, msg in sorted(failures.items()))
        super().__init__(f"worker thread(s) crashed: {names}")
        self.failures = failures
        self.result = result


def first_hit(accumulators: np.ndarray, x_star, epsilon: float) -> int | None:
    diff = accumulators - np.asarray(x_star)
    inside = np.flatnonzero(np.einsum("ij,ij->i", diff, diff) <= epsilon)
    return int(inside[0]) if inside.size else None


def accumulate(x0: np.ndarray, deltas_by_index: list[np.ndarray]) -> np.ndarray:
    xs = np.empty((len(deltas_by_index) + 1, x0.size))
    xs[0] = x0
    for t, delta in enumerate(deltas_by_index, start=1):
        xs[t] = xs[t - 1] + delta
    return xs


def epoch_sgd(
    spec: ProblemSpec,
    model: SharedModel,
    cfg: EpochConfig,
    rngs: list[np.random.Generator] | None = None,
    local_acc: list[np.ndarray] | None = None,
) -> RunResult:
    """Run ``cfg.n`` worker threads for ``cfg.T`` iterations on ``model``.

    With ``local_acc`` (one zero vector per thread) every worker also sums its
    own deltas there.  Hit time is measured on the ordered accumulator
    sequence, not on transient model contents.
    """
    if model.d != spec.d:
        raise ValueError(f"model has {model.d} cells, problem has d={spec.d}")
    if rngs is None:
        rngs = thread_rngs(cfg.seed, cfg.n)
    x0 = model.snapshot()
    alpha, T, d, epoch = cfg.alpha, cfg.T, spec.d, model.epoch
    events = AtomicCounter(0) if cfg.trace else None
    per_thread: list[list] = [[] for _ in range(cfg.n)]
    failures: dict[int, str] = {}

    def stamp() -> int:
        return events.fetch_add(1) + 1

    def worker(tid: int) -> None:
        rng, out = rngs[tid], per_thread[tid]
        acc = local_acc[tid] if local_acc is not None else None
        step = 0
        try:
            while True:
                if model.next_iteration() >= T:
                    return
                if events is not None:
                    start = stamp()
                    view, versions = model.read_view_versioned()
                else:
                    view = model.read_view()
                value, _ = spec.draw(view, rng)
                delta = -alpha * value
                generated = stamp() if events is not None else -1
                _, index = model.fetch_add_versioned(0, float(delta[0]), epoch)
                first = stamp() if events is not None else -1
                if events is not None:
                    rec = IterationRecord(
                        index=index, thread=tid, start=start, end=-1, first_update=first,
                        view=view, gradient=value, delta=delta, read_versions=versions,
                        positions={0: index}, epoch=epoch, local_step=step, generated=generated,
                    )
                    out.append(rec)
                else:
                    out.append((index, delta))
                for j in range(1, d):
                    if value[j] != 0:
                        _, pos = model.fetch_add_versioned(j, float(delta[j]), epoch)
                        if events is not None:
                            rec.positions[j] = pos
                if events is not None:
                    rec.end = stamp()
                if acc is not None:
                    acc += delta
                step += 1
        except BaseException as exc:  # surfaced after join
            failures[tid] = f"{type(exc).__name__}: {exc}"

    threads = [threading.Thread(target=worker, args=(i,), name=f"asgd-worker-{i}") for i in range(cfg.n)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()

    merged = [item for chunk in per_thread for item in chunk]
    if events is not None:
        merged.sort(key=lambda r: r.index)
        deltas = [r.delta for r in merged]
    else:
        merged.sort(key=lambda item: item[0])
        deltas = [item[1] for item in merged]
    xs = accumulate(x0, deltas)
    result = RunResult(
        hit_time=first_hit(xs, spec.x_star, cfg.epsilon),
        final_model=model.snapshot(),
        final_accumulator=xs[-1].copy(),
        accumulators=xs,
        iterations=len(deltas),
        failures=dict(failures),
    )
    if events is not None:
        from asgd.sim.analysis import contention_stats
        from asgd.sim.trace import ScheduleTrace

        trace = ScheduleTrace(
            n=cfg.n, d=d, T=T, alpha=alpha, x0=x0, iterations=merged, accumulators=xs,
            total_events=events.load(), header={"backend": "threads", "seed": cfg.seed, "epoch": epoch},
        )
        stats = contention_stats(trace)
        result.trace = trace
        result.rho, result.taus = stats.rho, stats.tau
        result.tau_max, result.tau_avg = stats.tau_max, stats.tau_avg
    if failures:
        raise WorkerCrash(failures, result)
    return result


def epoch_count(alpha: float, M: float, n: int, epsilon: float) -> int:
    """Number of halving epochs before the final one: ceil(log2(alpha 2 M n / sqrt(eps)))."""
    ratio = alpha * 2.0 * M * n / math.sqrt(epsilon)
    if ratio <= 1.0:
        return 0
    return max(0, math.ceil(math.log2(ratio) - 1e-12))


@dataclass
class FullSGDResult:
    r: np.ndarray
    epochs: list[RunResult]
    alphas: list[float]
    halving_epochs: int

    @property
    def epoch_total(self) -> int:
        return len(self.epochs)

    @property
    def total_iterations(self) -> int:
        return sum(e.iterations for e in self.epochs)


def full_sgd(spec: ProblemSpec, cfg: EpochConfig, x0=None) -> FullSGDResult:
    """Epochs of ``epoch_sgd`` with the step halved after each one.

    Every epoch gets its own buffer seeded from the previous epoch's final
    accumulator, so a gradient is only ever applied in the epoch that made it.
    The last epoch also sums each worker's deltas locally; the result is that
    epoch's starting point plus the summed local deltas.
    """
    k = epoch_count(cfg.alpha, spec.M, cfg.n, cfg.epsilon)
    if k == 0:
        log.warning("alpha*2Mn/sqrt(eps) <= 1: running a single epoch")
    rngs = thread_rngs(cfg.seed, cfg.n)
    start = spec.x_star + 1.0 if x0 is None else np.asarray(x0, dtype=float)
    alpha = cfg.alpha
    epochs, alphas = [], []
    for e in range(k):
        run_cfg = EpochConfig(cfg.T, alpha, cfg.n, cfg.epsilon, cfg.seed, cfg.theta, cfg.trace)
        res = epoch_sgd(spec, SharedModel(start, epoch=e), run_cfg, rngs)
        epochs.append(res)
        alphas.append(alpha)
        start = res.final_accumulator
        alpha /= 2.0
    acc = [np.zeros(spec.d) for _ in range(cfg.n)]
    run_cfg = EpochConfig(cfg.T, alpha, cfg.n, cfg.epsilon, cfg.seed, cfg.theta, cfg.trace)
    last = epoch_sgd(spec, SharedModel(start, epoch=k), run_cfg, rngs, local_acc=acc)
    epochs.append(last)
    alphas.append(alpha)
    r = start + np.sum(acc, axis=0)
    return FullSGDResult(r=r, epochs=epochs, alphas=alphas, halving_epochs=k)
