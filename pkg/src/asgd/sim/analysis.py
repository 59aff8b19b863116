"""Exact delay/contention measurement and invariant checks over schedule traces.

Conventions: iterations are indexed ``t = 1..N`` by the order of their update
on cell 0.  ``accumulators[t]`` is ``x_0`` plus the deltas of iterations
``1..t``; iteration ``t`` reads its view while ``accumulators[t-1]`` is the
object it approximates.  If ``s`` is the oldest iteration with an update
missing from the view of ``t``, then ``tau[t] = t - s``; otherwise 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from asgd.sim.trace import ScheduleTrace


@dataclass
class Verdict:
    name: str
    passed: bool
    checked: int = 0
    test: str = ""
    counterexample: dict[str, Any] | None = None

    def __bool__(self) -> bool:
        return self.passed


@dataclass
class ContentionStats:
    rho: np.ndarray
    tau: np.ndarray
    tau_max: int
    tau_avg: float
    max_delay: int
    bad_counts_per_window: list[int] = field(default_factory=list)


def _starts_ends(trace: ScheduleTrace) -> tuple[np.ndarray, np.ndarray]:
    horizon = max(trace.total_events, 1) + 1
    starts = np.array([r.start for r in trace.iterations], dtype=np.int64)
    ends = np.array([r.end if r.end >= 0 else horizon for r in trace.iterations], dtype=np.int64)
    return starts, ends


def interval_contention(starts, ends) -> np.ndarray:
    """rho(theta): number of other iterations whose [start, end] overlaps theta's."""
    starts = np.asarray(starts, dtype=np.int64)
    ends = np.asarray(ends, dtype=np.int64)
    if starts.size == 0:
        return np.zeros(0, dtype=np.int64)
    started_before_end = np.searchsorted(np.sort(starts), ends, side="left")
    ended_before_start = np.searchsorted(np.sort(ends), starts, side="left")
    return started_before_end - ended_before_start - 1


def iteration_delays(trace: ScheduleTrace) -> np.ndarray:
    recs = trace.iterations
    if not recs:
        return np.zeros(0, dtype=np.int64)
    suffix_min = []
    for j in range(trace.d):
        count = max((r.positions[j] for r in recs if j in r.positions), default=0)
        by_pos = np.full(count + 2, np.iinfo(np.int64).max, dtype=np.int64)
        for r in recs:
            p = r.positions.get(j)
            if p is not None:
                by_pos[p] = r.index
        # suffix_min[v] = min index among positions > v
        sm = np.minimum.accumulate(by_pos[::-1])[::-1]
        suffix_min.append(np.append(sm[1:], np.iinfo(np.int64).max))
    tau = np.zeros(len(recs), dtype=np.int64)
    for k, r in enumerate(recs):
        oldest = min(int(suffix_min[j][r.read_versions[j]]) for j in range(trace.d))
        if oldest < r.index:
            tau[k] = r.index - oldest
    return tau


def contention_stats(trace: ScheduleTrace, K: int = 1) -> ContentionStats:
    starts, ends = _starts_ends(trace)
    rho = interval_contention(starts, ends)
    tau = iteration_delays(trace)
    counts = _bad_window_counts(trace, K)
    return ContentionStats(
        rho=rho,
        tau=tau,
        tau_max=int(rho.max()) if rho.size else 0,
        tau_avg=float(rho.mean()) if rho.size else 0.0,
        max_delay=int(tau.max()) if tau.size else 0,
        bad_counts_per_window=counts.tolist(),
    )


def _bad_window_counts(trace: ScheduleTrace, K: int) -> np.ndarray:
    n = trace.n
    width = K * n
    starts, ends = _starts_ends(trace)
    N = starts.size
    if N < width:
        return np.zeros(0, dtype=np.int64)
    sorted_starts = np.sort(starts)
    inside = np.searchsorted(sorted_starts, ends, side="left") - np.searchsorted(
        sorted_starts, starts, side="right"
    )
    complete = np.array([r.end >= 0 for r in trace.iterations])
    bad_ends = np.sort(ends[(inside > width) & complete])
    lo = sorted_starts[: N - width + 1]
    hi = np.append(sorted_starts[width:], np.iinfo(np.int64).max)
    return np.searchsorted(bad_ends, hi, side="left") - np.searchsorted(bad_ends, lo, side="left")


def check_contention_windows(trace: ScheduleTrace, K: int) -> Verdict:
    """In every window of K*n consecutive starts, fewer than n bad iterations complete.

    An iteration is bad when more than K*n other iterations start strictly
    inside its span.  Window ``i`` runs from the ``i``-th start up to (not
    including) the ``(i + K*n)``-th start.
    """
    counts = _bad_window_counts(trace, K)
    test = f"every window of {K * trace.n} starts has < {trace.n} bad completions"
    if counts.size == 0:
        return Verdict(f"contention_window[K={K}]", True, 0, test)
    worst = int(np.argmax(counts))
    passed = bool(counts[worst] < trace.n)
    ce = None
    if not passed:
        ce = {"window": worst, "bad_completions": int(counts[worst]), "K": K, "n": trace.n}
    return Verdict(f"contention_window[K={K}]", passed, int(counts.size), test, ce)


def indicator_sums(taus, tau_max: int) -> np.ndarray:
    """S[t] = sum_{m=1}^{tau_max} 1{tau_{t+m} >= m} for t = 0..N-1 (1-based taus)."""
    taus = np.asarray(taus, dtype=np.int64)
    N = taus.size
    diff = np.zeros(N + 1, dtype=np.int64)
    for u in range(1, N + 1):
        reach = min(int(taus[u - 1]), tau_max)
        if reach > 0:
            diff[max(u - reach, 0)] += 1
            diff[u] -= 1
    return np.cumsum(diff)[:N]


def check_indicator_bound(
    trace: ScheduleTrace, taus=None, tau_max: int | None = None
) -> Verdict:
    if taus is None:
        taus = iteration_delays(trace)
    if tau_max is None:
        starts, ends = _starts_ends(trace)
        rho = interval_contention(starts, ends)
        tau_max = int(rho.max()) if rho.size else 0
    bound = 2.0 * math.sqrt(tau_max * trace.n)
    sums = indicator_sums(taus, tau_max)
    test = f"indicator sum <= 2*sqrt(tau_max*n) = {bound:.6g} (tau_max={tau_max})"
    if sums.size == 0:
        return Verdict("indicator_bound", True, 0, test)
    worst = int(np.argmax(sums))
    passed = bool(sums[worst] <= bound + 1e-12)
    ce = None if passed else {"t": worst, "sum": int(sums[worst]), "bound": bound, "tau_max": tau_max}
    return Verdict("indicator_bound", passed, int(sums.size), test, ce)


def check_incomplete_bound(trace: ScheduleTrace) -> Verdict:
    """At every event at most n indexed iterations are incomplete."""
    horizon = max(trace.total_events, 1) + 1
    marks = []
    for r in trace.iterations:
        marks.append((r.first_update, 1))
        marks.append((r.end if r.end >= 0 else horizon, -1))
    # an iteration whose only update is on cell 0 completes at that same event
    marks.sort(key=lambda m: (m[0], -m[1]))
    live = peak = 0
    for _, step in marks:
        live += step
        peak = max(peak, live)
    passed = peak <= trace.n
    ce = None if passed else {"peak_incomplete": peak}
    return Verdict("incomplete_bound", passed, len(trace.iterations), f"peak {peak} <= n={trace.n}", ce)


def check_view_staleness(trace: ScheduleTrace, taus=None, rtol: float = 1e-9) -> Verdict:
    """||x_{t-1} - v_t|| <= sqrt(d) * sum of the last tau_t increment norms."""
    if taus is None:
        taus = iteration_delays(trace)
    xs = trace.accumulators
    inc = np.linalg.norm(np.diff(xs, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(inc)])
    scale = 1.0 + float(np.abs(xs).max()) if xs.size else 1.0
    ce = None
    for k, r in enumerate(trace.iterations):
        t, tau = r.index, int(taus[k])
        lhs = float(np.linalg.norm(xs[t - 1] - r.view))
        rhs = math.sqrt(trace.d) * float(cum[t - 1] - cum[t - 1 - tau])
        # views and accumulators sum the same deltas in different orders
        if lhs - rhs > rtol * scale:
            ce = {"t": t, "lhs": lhs, "rhs": rhs, "tau": tau}
            break
    return Verdict(
        "view_staleness", ce is None, len(trace.iterations), "view within sqrt(d)-weighted recent increments", ce
    )


def check_view_containment(trace: ScheduleTrace) -> Verdict:
    """Each view entry is exactly the cell's prefix sum at the version read, built
    only from iterations with a smaller index."""
    recs = trace.iterations
    prefix, prefix_max = [], []
    for j in range(trace.d):
        ordered = sorted((r.positions[j], r.index, float(r.delta[j])) for r in recs if j in r.positions)
        vals = [float(trace.x0[j])]
        maxes = [0]
        for _, idx, dj in ordered:
            vals.append(vals[-1] + dj)
            maxes.append(max(maxes[-1], idx))
        prefix.append(vals)
        prefix_max.append(maxes)
    for r in recs:
        for j in range(trace.d):
            v = r.read_versions[j]
            if v >= len(prefix[j]) or r.view[j] != prefix[j][v] or prefix_max[j][v] >= r.index:
                return Verdict(
                    "view_containment", False, len(recs), "exact prefix-sum views",
                    {"t": r.index, "cell": j, "version": v},
                )
    return Verdict("view_containment", True, len(recs), "exact prefix-sum views")


def check_ordering(trace: ScheduleTrace) -> Verdict:
    idx = [r.index for r in trace.iterations]
    if idx != list(range(1, len(idx) + 1)):
        return Verdict("ordering", False, len(idx), "indices are 1..N", {"indices_head": idx[:10]})
    for r in trace.iterations:
        if r.end >= 0 and not (r.start <= r.first_update <= r.end):
            return Verdict("ordering", False, len(idx), "start <= first update <= end", {"t": r.index})
    return Verdict("ordering", True, len(idx), "indices are 1..N; start <= first update <= end")


def check_accumulator_identity(trace: ScheduleTrace) -> Verdict:
    xs = trace.accumulators
    for r in trace.iterations:
        if not np.array_equal(xs[r.index], xs[r.index - 1] + r.delta):
            return Verdict("accumulator_identity", False, len(trace.iterations), "x_t = x_{t-1} + delta_t", {"t": r.index})
    return Verdict("accumulator_identity", True, len(trace.iterations), "x_t = x_{t-1} + delta_t")


def check_epoch_isolation(trace: ScheduleTrace, epoch: int) -> Verdict:
    bad = [r.index for r in trace.iterations if r.epoch != epoch]
    return Verdict(
        "epoch_isolation", not bad, len(trace.iterations), f"all deltas tagged epoch {epoch}",
        {"indices": bad[:10]} if bad else None,
    )


def check_average_contention(trace: ScheduleTrace) -> Verdict:
    starts, ends = _starts_ends(trace)
    rho = interval_contention(starts, ends)
    avg = float(rho.mean()) if rho.size else 0.0
    passed = avg <= 2 * trace.n
    return Verdict("tau_avg_bound", passed, int(rho.size), f"tau_avg={avg:.4g} <= 2n={2 * trace.n}",
                   None if passed else {"tau_avg": avg})


def run_all_checks(trace: ScheduleTrace, Ks=(1, 2, 4)) -> list[Verdict]:
    taus = iteration_delays(trace)
    out = [
        check_ordering(trace),
        check_accumulator_identity(trace),
        check_view_containment(trace),
        check_incomplete_bound(trace),
        check_view_staleness(trace, taus),
        check_indicator_bound(trace, taus),
        check_average_contention(trace),
    ]
    out += [check_contention_windows(trace, K) for K in Ks]
    return out


def stale_at_hit(trace: ScheduleTrace, hit_index: int | None) -> tuple[int, float]:
    """Gradients generated before iteration ``hit_index`` took its index but
    applied after it: ``(count, norm of their summed deltas)``."""
    if not hit_index:
        return 0, 0.0
    anchor = trace.iterations[hit_index - 1].first_update
    stale = [
        r for r in trace.iterations if 0 <= r.generated < anchor and r.first_update > anchor
    ]
    if not stale:
        return 0, 0.0
    return len(stale), float(np.linalg.norm(np.sum([r.delta for r in stale], axis=0)))
