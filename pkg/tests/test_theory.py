from __future__ import annotations

import math

import numpy as np
import pytest

from asgd.problems import quadratic_problem
from asgd.theory import (
    BoundParams,
    BoundVariant,
    FeasibilityViolated,
    InvalidStepSize,
    MartingaleState,
    check_supermartingale,
    check_v_process,
    failure_prob_bound,
    feasibility_check,
    horizon_for_bound,
    lipschitz_h,
    lower_bound_slowdown,
    min_adversarial_delay,
    plog,
    rate_supermartingale_w,
    stale_noise_samples,
    stale_variance_closed_form,
    tuned_learning_rate,
    v_process,
    w_process,
)

# c = L = M = 1, eps = 0.01, theta = 1, d = 1, tau_max = 16, n = 4
EXAMPLE = BoundParams(c=1, L=1, M=1, d=1, n=4, tau_max=16, epsilon=0.01, x0_dist_sq=1.0, T=10**5)


def _hand_bounds():
    """Independent evaluation of the four bounds at EXAMPLE."""
    eps, T = 0.01, 10**5
    log_term = 1.0 + math.log(math.e * 1.0 / eps)  # plog(100 e)
    alpha = eps / (1 + 4 * math.sqrt(eps) * math.sqrt(64))
    den = 2 * alpha * eps - alpha ** 2
    value = alpha ** 2 * (2 * math.sqrt(eps) / den) * 2 * math.sqrt(64)
    w0 = eps / den * (1.0 + math.log(1.0 / eps))
    return {
        BoundVariant.SEQUENTIAL: log_term / (eps * T),
        BoundVariant.BOUNDED_DELAY: (1 + 2 * 16 * math.sqrt(eps)) / (eps * T) * log_term,
        BoundVariant.ASYNC: (1 + 4 * math.sqrt(eps) * 8) / (eps * T) * log_term,
        BoundVariant.GENERIC: w0 / ((1 - value) * T),
    }


def test_plog_examples():
    assert plog(1.0) == 1.0
    assert plog(0.5) == 0.5
    assert plog(math.e) == pytest.approx(2.0, abs=1e-12)
    np.testing.assert_allclose(plog(np.array([0.25, 1.0, math.e ** 2])), [0.25, 1.0, 3.0])


def test_w_and_h_examples():
    p = BoundParams(c=1, L=1, M=1, d=1, epsilon=0.01, alpha=0.005)
    assert rate_supermartingale_w(p, 0.01, 0) == pytest.approx(0.01 / 7.5e-5, abs=1e-9)
    assert rate_supermartingale_w(p, 0.01, 7) == pytest.approx(0.01 / 7.5e-5 + 7, abs=1e-9)
    assert lipschitz_h(p) == pytest.approx(0.2 / 7.5e-5, abs=1e-9)


def test_invalid_step_size():
    p = BoundParams(c=1, L=1, M=1, d=1, epsilon=0.01, alpha=0.02)  # 2 alpha c eps == alpha^2 M^2
    with pytest.raises(InvalidStepSize, match="invalid step size"):
        lipschitz_h(p)
    with pytest.raises(InvalidStepSize):
        rate_supermartingale_w(p, 1.0, 0)


def test_tuned_learning_rate():
    assert tuned_learning_rate(EXAMPLE) == pytest.approx(0.01 / 4.2, abs=1e-12)
    assert EXAMPLE.step == tuned_learning_rate(EXAMPLE)
    seq = EXAMPLE.with_(tau_max=0)
    assert tuned_learning_rate(seq) == pytest.approx(0.01)
    assert tuned_learning_rate(seq.with_(theta=0.5)) == pytest.approx(0.005)
    assert tuned_learning_rate(EXAMPLE, "sequential") == pytest.approx(0.01)
    assert tuned_learning_rate(EXAMPLE, "bounded-delay") == pytest.approx(0.01 / 4.2)


@pytest.mark.parametrize("variant", list(BoundVariant))
def test_failure_bounds_frozen(variant):
    assert failure_prob_bound(EXAMPLE, variant).raw == pytest.approx(_hand_bounds()[variant], abs=1e-9)


def test_frozen_literals():
    assert failure_prob_bound(EXAMPLE, "async").raw == pytest.approx(0.027741714781149986, abs=1e-12)
    assert failure_prob_bound(EXAMPLE, "generic").raw == pytest.approx(0.02354171478114999, abs=1e-12)
    assert failure_prob_bound(EXAMPLE, "sequential").raw == pytest.approx(0.006605170185988091, abs=1e-12)


@pytest.mark.parametrize("variant", list(BoundVariant))
def test_doubling_horizon_halves_bound(variant):
    a = failure_prob_bound(EXAMPLE, variant, T=1000).raw
    b = failure_prob_bound(EXAMPLE, variant, T=2000).raw
    assert b == pytest.approx(a / 2, rel=1e-12)


def test_async_without_contention_is_sequential():
    p = EXAMPLE.with_(tau_max=0, x0_dist_sq=3.0)
    assert failure_prob_bound(p, "async").raw == pytest.approx(failure_prob_bound(p, "sequential").raw)


def test_bound_rejects_zero_horizon():
    for T in (0, -5):
        with pytest.raises(ValueError):
            failure_prob_bound(EXAMPLE, "async", T=T)


def test_vacuous_bounds_are_reported_raw_and_clamped():
    b = failure_prob_bound(EXAMPLE, "async", T=10)
    assert b.raw > 1 and b.vacuous and b.clamped == 1.0
    ok = failure_prob_bound(EXAMPLE, "async")
    assert not ok.vacuous and ok.clamped == ok.raw


def test_feasibility_example_and_trivial_case():
    f = feasibility_check(EXAMPLE)
    assert f.feasible and f.value == pytest.approx(0.4324324324324324, abs=1e-12)
    assert f.margin == pytest.approx(1 - f.value)
    z = feasibility_check(EXAMPLE.with_(tau_max=0, alpha=0.019))
    assert z.feasible and z.value == 0.0


def _feasibility_value(alpha):
    # alpha^2 * H * L * M * 2 sqrt(tau n) * sqrt(d) with H = 2 sqrt(eps) / (2 alpha eps - alpha^2)
    return alpha ** 2 * 0.2 / (0.02 * alpha - alpha ** 2) * 16


def test_feasibility_crossing_by_bisection():
    lo, hi = 1e-4, 0.019
    assert _feasibility_value(lo) < 1 < _feasibility_value(hi)
    for _ in range(200):
        mid = (lo + hi) / 2
        lo, hi = (mid, hi) if _feasibility_value(mid) < 1 else (lo, mid)
    assert feasibility_check(EXAMPLE.with_(alpha=lo * (1 - 1e-9))).feasible
    assert not feasibility_check(EXAMPLE.with_(alpha=hi * (1 + 1e-9))).feasible
    # past the step-size validity limit the check is infeasible rather than an error
    assert not feasibility_check(EXAMPLE.with_(alpha=0.05)).feasible


def test_infeasible_bounds_refused():
    bad = EXAMPLE.with_(alpha=0.015)
    for variant in ("async", "generic"):
        with pytest.raises(FeasibilityViolated, match="feasibility violated"):
            failure_prob_bound(bad, variant)
    assert failure_prob_bound(bad, "sequential").raw > 0
    assert failure_prob_bound(bad, "bounded-delay").raw > 0


def test_horizon_for_bound():
    T = horizon_for_bound(EXAMPLE, "async", 0.2)
    assert failure_prob_bound(EXAMPLE, "async", T=T).raw <= 0.2
    assert failure_prob_bound(EXAMPLE, "async", T=T - 1).raw > 0.2


def test_slowdown_examples():
    assert lower_bound_slowdown(0.5, 2) == pytest.approx(1.0, abs=1e-12)
    assert min_adversarial_delay(0.5) == 2
    assert min_adversarial_delay(0.1) == 29
    assert 2 * 0.9 ** 29 <= 0.1 < 2 * 0.9 ** 28
    assert lower_bound_slowdown(0.1, 29) == pytest.approx(29 * math.log(0.9) / (math.log(0.1) - math.log(2)), abs=1e-12)
    for bad in ((0.0, 2), (1.0, 2), (0.5, 0)):
        with pytest.raises(ValueError):
            lower_bound_slowdown(*bad)


def test_stale_variance_examples():
    assert stale_variance_closed_form(0.5, 1.0, 2) == pytest.approx(0.5625, abs=1e-12)
    assert stale_variance_closed_form(0.3, 0.0, 5) == 0.0
    assert stale_variance_closed_form(0.3, 2.0, 1) == pytest.approx(2 * 0.09 * 4)


def test_stale_variance_monte_carlo():
    s = stale_noise_samples(0.5, 1.0, 2, 200_000, np.random.default_rng(0))
    se = s.var(ddof=1) * math.sqrt(2 / (s.size - 1))
    assert abs(s.var(ddof=1) - 0.5625) <= 4 * se


def test_w_process_freezes_after_success():
    p = BoundParams(c=1, L=1, M=1, d=1, epsilon=0.01, alpha=0.005)
    W = w_process(p, [1.0, 0.5, 0.005, 2.0, 3.0])
    assert W[3] == W[2] == W[1]
    assert W[1] == pytest.approx(rate_supermartingale_w(p, 0.5, 1))


def test_supermartingale_frozen_state_exact():
    spec = quadratic_problem(2, 0.1)
    p = BoundParams.from_problem(spec, epsilon=0.1)
    st = MartingaleState.start(p, spec.x_star, spec.x_star)
    assert st.succeeded and st.freeze_index == 0
    out = check_supermartingale(spec, p, [st], 500, np.random.default_rng(0))
    assert out.verdict.passed and out.estimates[0] == st.W and out.stderrs[0] == 0.0


def test_supermartingale_deterministic_step_decreases():
    spec = quadratic_problem(2, 0.0, radius=2.0)
    p = BoundParams.from_problem(spec, epsilon=0.1, alpha=0.01)
    st = MartingaleState.start(p, np.array([1.5, -0.5]), spec.x_star, t=3)
    out = check_supermartingale(spec, p, [st], 10, np.random.default_rng(0))
    assert out.verdict.passed and out.stderrs[0] < 1e-10
    nxt = st.advance(p, 0.99 * st.x, spec.x_star)
    assert out.estimates[0] == pytest.approx(nxt.W) and nxt.W < st.W


def test_supermartingale_random_states():
    spec = quadratic_problem(2, 0.1, radius=2.0)
    p = BoundParams.from_problem(spec, epsilon=0.1)
    rng = np.random.default_rng(1)
    states = []
    while len(states) < 10:
        x = rng.uniform(-1.4, 1.4, size=2)
        if x @ x > 0.1:
            states.append(MartingaleState.start(p, x, spec.x_star, t=int(rng.integers(0, 50))))
    assert check_supermartingale(spec, p, states, 2000, rng).verdict.passed


def test_supermartingale_flags_understated_state():
    spec = quadratic_problem(1, 0.0, radius=1.0)
    p = BoundParams(c=1, L=1, M=1, d=1, epsilon=0.1, alpha=0.15)
    honest = MartingaleState.start(p, np.array([1.0]), spec.x_star)
    assert check_supermartingale(spec, p, [honest], 10, np.random.default_rng(0)).verdict.passed
    understated = MartingaleState(0, 0.0, 1.0, x=np.array([1.0]))
    out = check_supermartingale(spec, p, [honest, understated], 10, np.random.default_rng(0))
    assert not out.verdict.passed and out.verdict.counterexample["state"] == 1


def test_v_process_starts_at_w0_and_stays_nonnegative():
    spec = quadratic_problem(1, 0.0)
    p = BoundParams(c=1, L=1, M=1, d=1, n=2, tau_max=2, epsilon=0.01, alpha=0.002)
    xs = np.array([[1.0]])
    for _ in range(30):
        xs = np.vstack([xs, 0.998 * xs[-1]])
    taus = np.array([0] + [1, 2] * 14 + [0])
    V = v_process(p, xs, spec.x_star, taus)
    assert V[0] == rate_supermartingale_w(p, 1.0, 0)
    assert check_v_process(p, xs, spec.x_star, taus).passed
    # zero delays: V_t = W_t - drift * t
    V0 = v_process(p, xs, spec.x_star, np.zeros(30, dtype=int))
    W = rate_supermartingale_w(p, xs[:, 0] ** 2, np.arange(31))
    f = feasibility_check(p).value
    np.testing.assert_allclose(V0, W - f * np.arange(31), rtol=1e-12)
    with pytest.raises(ValueError):
        v_process(p, xs, spec.x_star, taus[:-1])


def test_bound_params_validation():
    with pytest.raises(ValueError):
        BoundParams(c=0, L=1, M=1, d=1)
    with pytest.raises(ValueError):
        BoundParams(c=1, L=1, M=1, d=1, theta=0)
    with pytest.raises(ValueError):
        BoundParams(c=1, L=1, M=1, d=0)
    p = BoundParams.from_problem(quadratic_problem(3, 0.1), n=4)
    assert p.d == 3 and p.n == 4


def test_freeze_at_previous_value_breaks_the_property_near_the_boundary():
    # just outside S most steps land inside and keep W_t; the few that stay
    # outside pay the +1 of the time term almost in full
    spec = quadratic_problem(2, 0.1, radius=2.0)
    p = BoundParams.from_problem(spec, epsilon=0.1)
    st = MartingaleState.start(p, np.array([0.317, 0.0153]), spec.x_star, t=284)
    assert 1.0 < st.dist_sq / p.epsilon < 1.01
    prev = check_supermartingale(spec, p, [st], 100_000, np.random.default_rng(0))
    assert not prev.verdict.passed
    assert prev.estimates[0] - prev.w_now[0] > 10 * prev.stderrs[0]
    hit = check_supermartingale(spec, p, [st], 100_000, np.random.default_rng(0), freeze="hit")
    assert hit.verdict.passed and hit.estimates[0] < hit.w_now[0] - 0.5
    with pytest.raises(ValueError):
        check_supermartingale(spec, p, [st], 10, np.random.default_rng(0), freeze="later")
