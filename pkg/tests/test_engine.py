from __future__ import annotations

import logging
import threading

import numpy as np
import pytest

from asgd.engine import (
    EpochConfig,
    WorkerCrash,
    epoch_count,
    epoch_sgd,
    first_hit,
    full_sgd,
)
from asgd.problems import QuadraticProblem, quadratic_problem, thread_rngs
from asgd.shared_model import SharedModel
from asgd.sim import analysis
from asgd.sim.core import simulate
from asgd.sim.strategies import RoundRobin, Sequential


def test_single_thread_hand_iteration():
    spec = quadratic_problem(1, 0.0)
    res = epoch_sgd(spec, SharedModel([1.0]), EpochConfig(T=3, alpha=0.5, n=1, epsilon=0.3))
    assert res.accumulators[:, 0].tolist() == [1.0, 0.5, 0.25, 0.125]
    assert res.hit_time == 1
    assert res.final_model.tolist() == [0.125]


def test_zero_iterations():
    spec = quadratic_problem(2, 0.0)
    res = epoch_sgd(spec, SharedModel([3.0, 4.0]), EpochConfig(T=0, alpha=0.1, n=3))
    assert res.iterations == 0
    assert res.final_model.tolist() == [3.0, 4.0]
    assert res.hit_time is None


def test_config_validation():
    for bad in (dict(T=-1, alpha=0.1), dict(T=1, alpha=0.0), dict(T=1, alpha=0.1, n=0),
                dict(T=1, alpha=0.1, epsilon=0.0), dict(T=1, alpha=0.1, theta=1.5)):
        with pytest.raises(ValueError):
            EpochConfig(**bad)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        epoch_sgd(quadratic_problem(2, 0.0), SharedModel([0.0]), EpochConfig(T=1, alpha=0.1))


def test_first_hit():
    xs = np.array([[2.0], [1.5], [0.5], [0.1]])
    assert first_hit(xs, np.zeros(1), 0.3) == 2
    assert first_hit(xs, np.zeros(1), 1e-6) is None


def test_multithreaded_accumulator_identity():
    spec = quadratic_problem(3, 0.2)
    x0 = np.array([1.0, -1.0, 2.0])
    res = epoch_sgd(spec, SharedModel(x0), EpochConfig(T=2000, alpha=0.05, n=4, seed=3, trace=True))
    assert res.iterations == 2000
    deltas = np.array([r.delta for r in res.trace.iterations])
    np.testing.assert_allclose(res.final_accumulator, x0 + deltas.sum(axis=0), rtol=1e-6, atol=1e-12)
    np.testing.assert_allclose(res.final_model, res.final_accumulator, rtol=1e-6, atol=1e-12)
    for verdict in (analysis.check_ordering(res.trace), analysis.check_accumulator_identity(res.trace),
                    analysis.check_view_containment(res.trace), analysis.check_incomplete_bound(res.trace),
                    analysis.check_epoch_isolation(res.trace, 0)):
        assert verdict.passed, verdict


def test_zero_gradient_still_touches_first_cell():
    spec = quadratic_problem(2, 0.0)
    res = epoch_sgd(spec, SharedModel(np.zeros(2)), EpochConfig(T=5, alpha=0.1, n=2, trace=True))
    assert [r.index for r in res.trace.iterations] == [1, 2, 3, 4, 5]
    assert all(set(r.positions) == {0} for r in res.trace.iterations)


@pytest.mark.parametrize("strategy", [Sequential(), RoundRobin()])
def test_simulator_matches_engine_single_thread(strategy):
    spec = quadratic_problem(2, 0.3)
    cfg = EpochConfig(T=300, alpha=0.05, n=1, seed=11)
    x0 = np.array([1.0, 2.0])
    threaded = epoch_sgd(spec, SharedModel(x0), cfg)
    simulated = simulate(spec, cfg, strategy, x0=x0).run
    np.testing.assert_allclose(simulated.accumulators, threaded.accumulators, rtol=0, atol=1e-12)


class _Exploding(QuadraticProblem):
    """Worker 1 raises on its first draw; worker 0 waits for that so it
    cannot consume the whole epoch alone."""

    def draw(self, view, rng):
        if threading.current_thread().name == "asgd-worker-1":
            self.arrived.set()
            raise RuntimeError("boom")
        self.arrived.wait(timeout=5.0)
        return super().draw(view, rng)


def test_worker_crash_names_thread_and_keeps_partial_result():
    base = quadratic_problem(1, 0.0)
    spec = _Exploding(d=1, c=1.0, L=1.0, M2=base.M2, x_star=np.zeros(1))
    spec.arrived = threading.Event()
    with pytest.raises(WorkerCrash, match="worker-1") as info:
        epoch_sgd(spec, SharedModel([1.0]), EpochConfig(T=50, alpha=0.1, n=2))
    crash = info.value
    assert set(crash.failures) == {1}
    # the survivor consumes the counter values the crashed worker never used
    assert crash.result.iterations == 49


def test_epoch_count_examples():
    # alpha * 2 M n / sqrt(eps) = 8 -> three halvings
    assert epoch_count(1.0, 1.0, 4, 1.0) == 3
    assert epoch_count(1.0, 1.0, 4, 4.0) == 2
    assert epoch_count(0.1, 1.0, 1, 1.0) == 0


def test_full_sgd_learning_rates_and_epochs():
    spec = quadratic_problem(1, 0.0, radius=1.0)  # M = 1
    out = full_sgd(spec, EpochConfig(T=3, alpha=1.0, n=4, epsilon=1.0))
    assert out.halving_epochs == 3
    assert out.alphas == [1.0, 0.5, 0.25, 0.125]
    assert out.epoch_total == 4


def test_full_sgd_single_epoch_warns(caplog):
    spec = quadratic_problem(1, 0.0, radius=1.0)
    with caplog.at_level(logging.WARNING):
        out = full_sgd(spec, EpochConfig(T=5, alpha=0.1, n=1, epsilon=1.0))
    assert out.epoch_total == 1
    assert "single epoch" in caplog.text


def test_full_sgd_matches_sequential_replay():
    spec = quadratic_problem(2, 0.0)
    cfg = EpochConfig(T=40, alpha=0.4, n=1, epsilon=0.01)
    x0 = np.array([1.0, -3.0])
    out = full_sgd(spec, cfg, x0=x0)
    x, alpha = x0.copy(), cfg.alpha
    for _ in range(out.epoch_total):
        for _ in range(cfg.T):
            x = x - alpha * x
        alpha /= 2
    np.testing.assert_allclose(out.r, x, rtol=0, atol=1e-9)
    assert out.total_iterations == cfg.T * out.epoch_total


def test_full_sgd_epoch_isolation_on_traces():
    spec = quadratic_problem(2, 0.1)
    out = full_sgd(spec, EpochConfig(T=50, alpha=0.2, n=3, epsilon=0.01, trace=True))
    for e, run in enumerate(out.epochs):
        assert analysis.check_epoch_isolation(run.trace, e).passed
        assert run.trace.header["epoch"] == e


def test_full_sgd_streams_continue_across_epochs():
    spec = quadratic_problem(1, 1.0, radius=1.0)
    cfg = EpochConfig(T=4, alpha=1.0, n=1, epsilon=1.0, seed=5)
    out = full_sgd(spec, cfg, x0=np.zeros(1))
    # with x0 = x* the deltas are alpha_e * noise; noise must not repeat between epochs
    firsts = [run.accumulators[1, 0] - run.accumulators[0, 0] for run in out.epochs]
    noises = [f / a for f, a in zip(firsts, out.alphas)]
    assert len(set(np.round(noises, 12))) == len(noises)
    expected = thread_rngs(5, 1)[0].standard_normal(1)[0]
    assert noises[0] == pytest.approx(expected)
