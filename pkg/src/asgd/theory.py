"""Closed-form convergence bounds, learning rates, and the rate supermartingale.

Notation: ``c`` strong convexity, ``L`` expected-Lipschitz constant, ``M`` the
gradient second-moment root, ``eps`` the success radius (squared), ``theta``
the step-size fraction, ``n`` threads, ``tau_max`` the maximal interval
contention and ``C = 2 sqrt(tau_max n)``.  Natural logarithms throughout.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from asgd.sim.analysis import Verdict


class InvalidStepSize(ValueError):
    pass


class FeasibilityViolated(ValueError):
    pass


class BoundVariant(str, enum.Enum):
    SEQUENTIAL = "sequential"  # step c eps theta / M^2, no asynchrony
    BOUNDED_DELAY = "bounded-delay"  # consistent reads, worst-case delay tau
    ASYNC = "async"  # lock-free, inconsistent views, tuned step
    GENERIC = "generic"  # supermartingale bound for an arbitrary feasible step


@dataclass(frozen=True)
class BoundParams:
    c: float
    L: float
    M: float
    d: int
    n: int = 1
    tau_max: int = 0
    epsilon: float = 1.0
    theta: float = 1.0
    alpha: float | None = None
    x0_dist_sq: float = 1.0
    T: int | None = None

    def __post_init__(self) -> None:
        if not 0 < self.theta <= 1:
            raise ValueError("theta must lie in (0, 1]")
        for name in ("c", "L", "M", "epsilon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.d < 1 or self.n < 1 or self.tau_max < 0:
            raise ValueError("need d >= 1, n >= 1, tau_max >= 0")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.x0_dist_sq < 0:
            raise ValueError("x0_dist_sq must be nonnegative")

    @property
    def C(self) -> float:
        return 2.0 * math.sqrt(self.tau_max * self.n)

    @property
    def step(self) -> float:
        """The configured step, or the tuned asynchronous one when unset."""
        return self.alpha if self.alpha is not None else tuned_learning_rate(self)

    @property
    def H(self) -> float:
        return lipschitz_h(self)

    def with_(self, **changes) -> "BoundParams":
        return replace(self, **changes)

    @classmethod
    def from_problem(cls, spec, **kw) -> "BoundParams":
        return cls(c=spec.c, L=spec.L, M=spec.M, d=spec.d, **kw)


def plog(x):
    """Piecewise logarithm: ``log(e x)`` above 1, identity at or below 1."""
    arr = np.asarray(x, dtype=float)
    out = np.where(arr > 1.0, 1.0 + np.log(np.maximum(arr, 1.0)), arr)
    return float(out) if out.ndim == 0 else out


def _denominator(params: BoundParams, alpha: float | None = None) -> float:
    a = params.step if alpha is None else alpha
    den = 2.0 * a * params.c * params.epsilon - a * a * params.M ** 2
    if not den > 0:
        raise InvalidStepSize(f"invalid step size: 2*alpha*c*eps - alpha^2*M^2 = {den:.6g} <= 0")
    return den


def rate_supermartingale_w(params: BoundParams, dist_sq, t):
    """``eps / (2 alpha c eps - alpha^2 M^2) * plog(dist_sq / eps) + t`` (no freezing)."""
    scale = params.epsilon / _denominator(params)
    return scale * plog(np.asarray(dist_sq, dtype=float) / params.epsilon) + t


def lipschitz_h(params: BoundParams) -> float:
    """Lipschitz constant of ``W`` in its first argument: ``2 sqrt(eps) / (2 alpha c eps - alpha^2 M^2)``."""
    return 2.0 * math.sqrt(params.epsilon) / _denominator(params)


def tuned_learning_rate(params: BoundParams, variant: BoundVariant | str = BoundVariant.ASYNC) -> float:
    p = params
    base = p.c * p.epsilon * p.theta
    variant = BoundVariant(variant)
    if variant in (BoundVariant.ASYNC, BoundVariant.GENERIC):
        return base / (p.M ** 2 + 4.0 * math.sqrt(p.epsilon) * p.L * p.M * math.sqrt(p.tau_max * p.n) * math.sqrt(p.d))
    if variant is BoundVariant.BOUNDED_DELAY:
        return base / (p.M ** 2 + 2.0 * p.L * p.M * p.tau_max * math.sqrt(p.epsilon))
    return base / p.M ** 2


@dataclass(frozen=True)
class Feasibility:
    feasible: bool
    value: float
    margin: float

    def __bool__(self) -> bool:
        return self.feasible


def feasibility_check(params: BoundParams) -> Feasibility:
    """Whether ``alpha^2 H L M C sqrt(d) < 1``; ``margin = 1 - value``."""
    a = params.step
    if params.tau_max == 0:
        return Feasibility(True, 0.0, 1.0)
    try:
        H = lipschitz_h(replace(params, alpha=a))
    except InvalidStepSize:
        return Feasibility(False, math.inf, -math.inf)
    value = a * a * H * params.L * params.M * params.C * math.sqrt(params.d)
    return Feasibility(value < 1.0, value, 1.0 - value)


@dataclass(frozen=True)
class BoundValue:
    variant: BoundVariant
    raw: float
    T: int

    @property
    def clamped(self) -> float:
        return min(max(self.raw, 0.0), 1.0)

    @property
    def vacuous(self) -> bool:
        return self.raw >= 1.0


def failure_prob_bound(params: BoundParams, variant: BoundVariant | str, T: int | None = None) -> BoundValue:
    """Upper bound on the probability that no iterate enters the success region by time ``T``."""
    variant = BoundVariant(variant)
    T = params.T if T is None else T
    if T is None or T <= 0:
        raise ValueError("horizon T must be positive")
    p = params
    log_term = plog(math.e * p.x0_dist_sq / p.epsilon)
    scale = p.c ** 2 * p.epsilon * p.theta * T
    if variant is BoundVariant.SEQUENTIAL:
        raw = p.M ** 2 / scale * log_term
    elif variant is BoundVariant.BOUNDED_DELAY:
        raw = (p.M ** 2 + 2.0 * p.L * p.M * p.tau_max * math.sqrt(p.epsilon)) / scale * log_term
    else:
        feas = feasibility_check(p)
        if not feas:
            raise FeasibilityViolated(f"feasibility violated: alpha^2 H L M C sqrt(d) = {feas.value:.6g} >= 1")
        if variant is BoundVariant.ASYNC:
            num = p.M ** 2 + 4.0 * math.sqrt(p.epsilon) * p.L * p.M * math.sqrt(p.tau_max * p.n) * math.sqrt(p.d)
            raw = num / scale * log_term
        else:
            w0 = float(rate_supermartingale_w(p, p.x0_dist_sq, 0))
            raw = w0 / ((1.0 - feas.value) * T)
    return BoundValue(variant, float(raw), int(T))


def horizon_for_bound(params: BoundParams, variant: BoundVariant | str, target: float) -> int:
    """Smallest ``T`` whose bound is at most ``target`` (bounds scale as ``1/T``)."""
    unit = failure_prob_bound(params, variant, T=1).raw
    return max(1, math.ceil(unit / target))


def lower_bound_slowdown(alpha: float, tau: int) -> float:
    """``tau log(1 - alpha) / (log alpha - log 2)``: rounds of ``tau`` sequential steps
    per adversarial round achieving only an ``alpha / 2`` contraction."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if tau < 1:
        raise ValueError("tau must be at least 1")
    return tau * math.log(1.0 - alpha) / (math.log(alpha) - math.log(2.0))


def min_adversarial_delay(alpha: float) -> int:
    """Smallest ``tau`` with ``2 (1 - alpha)^tau <= alpha``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    tau = max(1, math.ceil(math.log(alpha / 2.0) / math.log(1.0 - alpha)) - 1)
    while 2.0 * (1.0 - alpha) ** tau > alpha:
        tau += 1
    while tau > 1 and 2.0 * (1.0 - alpha) ** (tau - 1) <= alpha:
        tau -= 1
    return tau


def stale_variance_closed_form(alpha: float, sigma: float, tau: int) -> float:
    """Variance of the noise after one stale round: ``alpha^2 sigma^2 (1 + sum_{k<tau} (1-alpha)^{2k})``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    q = (1.0 - alpha) ** 2
    return alpha ** 2 * sigma ** 2 * (1.0 + (1.0 - q ** tau) / (1.0 - q))


def stale_noise_samples(alpha: float, sigma: float, tau: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Noise part of the iterate after one stale round, drawn directly.

    The ``tau`` fresh steps contribute ``alpha u_k`` damped by the remaining
    ``(1-alpha)`` factors; the stale step adds an independent ``alpha u``.
    """
    u = rng.standard_normal((size, tau + 1)) * sigma
    weights = alpha * (1.0 - alpha) ** np.arange(tau - 1, -1, -1)
    return u[:, :tau] @ weights + alpha * u[:, tau]


# rate supermartingale


@dataclass(frozen=True)
class MartingaleState:
    """``W_t`` of one trajectory; once ``x_u`` enters the success region the
    value stays at ``W_{u-1}``."""

    t: int
    W: float
    dist_sq: float
    succeeded: bool = False
    freeze_index: int | None = None
    x: np.ndarray | None = field(default=None, compare=False)

    @classmethod
    def start(cls, params: BoundParams, x, x_star, t: int = 0) -> "MartingaleState":
        x = np.asarray(x, dtype=float)
        dist = float(np.sum((x - x_star) ** 2))
        inside = dist <= params.epsilon
        return cls(t, float(rate_supermartingale_w(params, dist, t)), dist, inside, t if inside else None, x)

    def advance(self, params: BoundParams, x_next, x_star) -> "MartingaleState":
        x_next = np.asarray(x_next, dtype=float)
        dist = float(np.sum((x_next - x_star) ** 2))
        if self.succeeded:
            return replace(self, t=self.t + 1, dist_sq=dist, x=x_next)
        if dist <= params.epsilon:
            return MartingaleState(self.t + 1, self.W, dist, True, self.t + 1, x_next)
        return MartingaleState(self.t + 1, float(rate_supermartingale_w(params, dist, self.t + 1)), dist, False, None, x_next)


def w_process(params: BoundParams, dist_sq) -> np.ndarray:
    """``W_0..W_N`` along a trajectory of squared distances, with freezing."""
    dist_sq = np.asarray(dist_sq, dtype=float)
    W = rate_supermartingale_w(params, dist_sq, np.arange(dist_sq.size, dtype=float))
    W = np.atleast_1d(W).astype(float)
    hits = np.flatnonzero(dist_sq <= params.epsilon)
    if hits.size and hits[0] > 0:
        u = int(hits[0])
        W[u:] = W[u - 1]
    return W


@dataclass
class SupermartingaleCheck:
    verdict: Verdict
    estimates: list[float]
    stderrs: list[float]
    w_now: list[float]
    frozen: list[bool]


def check_supermartingale(
    spec, params: BoundParams, states, N: int, rng: np.random.Generator, freeze: str = "previous",
) -> SupermartingaleCheck:
    """One sequential SGD step from each state, ``N`` times: is ``E[W_{t+1}] <= W_t``?

    One-sided per state: ``mean <= W_t + 4 stderr``.  Frozen states must give
    ``W_{t+1} == W_t`` exactly on every draw.

    ``freeze`` chooses the value a step that lands in the success region
    takes: ``"previous"`` keeps ``W_t`` (the freeze rule of
    :class:`MartingaleState`), ``"hit"`` uses the formula value at the hit.
    """
    if freeze not in ("previous", "hit"):
        raise ValueError("freeze must be 'previous' or 'hit'")
    alpha = params.step
    _denominator(params)
    eps = params.epsilon
    estimates, stderrs, w_now, frozen = [], [], [], []
    failure = None
    for k, st in enumerate(states):
        x = np.asarray(st.x, dtype=float)
        G = spec.draw_batch(x, rng, N)
        nxt = x - alpha * G
        dist = np.einsum("ij,ij->i", nxt - spec.x_star, nxt - spec.x_star)
        if st.succeeded:
            W_next = np.full(N, st.W)
        else:
            W_next = rate_supermartingale_w(params, dist, st.t + 1)
            if freeze == "previous":
                W_next = np.where(dist <= eps, st.W, W_next)
        if np.all(W_next == W_next[0]):
            est, se = float(W_next[0]), 0.0  # a mean of equal floats need not round back exactly
        else:
            est = float(W_next.mean())
            se = float(W_next.std(ddof=1) / math.sqrt(N)) if N > 1 else 0.0
        estimates.append(est)
        stderrs.append(se)
        w_now.append(st.W)
        frozen.append(st.succeeded)
        ok = bool(np.all(W_next == st.W)) if st.succeeded else est <= st.W + 4.0 * se
        if not ok and failure is None:
            failure = {"state": k, "t": st.t, "W_t": st.W, "estimate": est, "stderr": se}
    test = f"one-sided: mean W_(t+1) <= W_t + 4 stderr over N={N} draws per state (freeze={freeze})"
    verdict = Verdict("supermartingale", failure is None, len(estimates), test, failure)
    return SupermartingaleCheck(verdict, estimates, stderrs, w_now, frozen)


def v_process(params: BoundParams, accumulators, x_star, taus) -> np.ndarray:
    """Post-hoc ``V_0..V_N`` of a completed lock-free trajectory.

    ``taus[s]`` is the delay of the view behind the step from ``x_s`` to
    ``x_{s+1}``; delays past the end of the trace count as zero.
    """
    xs = np.asarray(accumulators, dtype=float)
    taus = np.asarray(taus, dtype=np.int64)
    N = xs.shape[0] - 1
    if taus.size != N:
        raise ValueError(f"need one delay per step: {taus.size} delays for {N} steps")
    alpha = params.step
    H = lipschitz_h(replace(params, alpha=alpha))
    coef = alpha * H * params.L * math.sqrt(params.d)
    drift = alpha * alpha * H * params.L * params.M * params.C * math.sqrt(params.d)
    dist = np.einsum("ij,ij->i", xs - x_star, xs - x_star)
    W = np.atleast_1d(rate_supermartingale_w(params, dist, np.arange(N + 1, dtype=float)))
    inc = np.linalg.norm(np.diff(xs, axis=0), axis=1)
    lows = np.arange(N) - taus  # step u is delayed back to u - tau_u
    V = np.empty(N + 1)
    V[0] = W[0]
    for t in range(1, N + 1):
        # sum_{s<t} ||x_{s+1}-x_s|| * #{u >= t : u - tau_u <= s}
        tail = np.sort(lows[t:])
        counts = np.searchsorted(tail, np.arange(t), side="right")
        V[t] = W[t] - drift * t + coef * float(inc[:t] @ counts)
    hits = np.flatnonzero(dist <= params.epsilon)
    if hits.size and hits[0] > 0:
        V[hits[0]:] = V[hits[0] - 1]
    return V


def check_v_process(params: BoundParams, accumulators, x_star, taus) -> Verdict:
    """``V_0 = W_0`` and ``V_t >= 0`` along a completed trace."""
    V = v_process(params, accumulators, x_star, taus)
    d0 = float(np.sum((np.asarray(accumulators[0]) - x_star) ** 2))
    W0 = float(rate_supermartingale_w(params, d0, 0))
    ce = None
    if V[0] != W0:
        ce = {"V0": float(V[0]), "W0": W0}
    elif V.min() < 0:
        ce = {"t": int(np.argmin(V)), "V": float(V.min())}
    return Verdict("v_process", ce is None, int(V.size), "V_0 = W_0 and V_t >= 0", ce)
