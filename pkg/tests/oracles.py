"""Brute-force reference computations for schedule measurements."""

from __future__ import annotations


def brute_rho(trace):
    recs = trace.iterations
    horizon = trace.total_events + 1
    spans = [(r.start, r.end if r.end >= 0 else horizon) for r in recs]
    return [sum(1 for j, (s2, e2) in enumerate(spans) if j != i and s2 <= e and s <= e2) for i, (s, e) in enumerate(spans)]


def brute_tau(trace):
    out = []
    for r in trace.iterations:
        missing = [
            s.index for s in trace.iterations if s.index < r.index
            and any(pos > r.read_versions[j] for j, pos in s.positions.items())
        ]
        out.append(r.index - min(missing) if missing else 0)
    return out


def brute_indicator(taus, tau_max):
    N = len(taus)
    return [sum(1 for m in range(1, tau_max + 1) if t + m <= N and taus[t + m - 1] >= m) for t in range(N)]
