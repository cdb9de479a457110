import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from klrl import kl_core
from klrl.bandit import (
    NoiseSpec,
    env_step,
    finite_class_with_truth,
    kl_ucb_run,
    make_bandit_instance,
    per_round_gap,
    random_bandit_instance,
    sample_index,
)
from klrl.errors import ConfigError, InvalidInputError
from klrl.function_classes import FiniteFunctionClass, onehot_class


@pytest.fixture
def two_arm():
    return make_bandit_instance([[0.2, 0.8]], eta=1.0)


def test_instance_validation():
    with pytest.raises(InvalidInputError):
        make_bandit_instance([[1.2, 0.3]])
    with pytest.raises(InvalidInputError):
        make_bandit_instance([[0.2, 0.3]], pi_ref=[[0.9, 0.2]])
    with pytest.raises(ConfigError):
        NoiseSpec("gaussian", 2.0)


def test_env_step_noiseless_and_replay(two_arm):
    inst = make_bandit_instance([[0.2, 0.8]], noise=NoiseSpec("none", 0.0))
    assert env_step(inst, 0, 1, np.random.default_rng(0)) == 0.8
    a = [env_step(two_arm, 0, 1, np.random.default_rng(5)) for _ in range(2)]
    assert a[0] == a[1]
    with pytest.raises(IndexError):
        env_step(two_arm, 0, 2, np.random.default_rng(0))


def test_env_step_gaussian_mean(two_arm):
    rng = np.random.default_rng(1)
    n = 100_000
    draws = np.array([env_step(two_arm, 0, 1, rng) for _ in range(n)])
    assert abs(draws.mean() - 0.8) <= 3 * 0.5 / math.sqrt(n)


def test_bernoulli_noise_is_centered():
    rng = np.random.default_rng(2)
    s = np.array([NoiseSpec("bernoulli", 0.7).sample(rng) for _ in range(20_000)])
    assert set(np.unique(s)) == {-0.7, 0.7}
    assert abs(s.mean()) < 4 * 0.7 / math.sqrt(len(s))


def test_sample_index_frequencies():
    rng = np.random.default_rng(3)
    p = np.array([0.1, 0.0, 0.6, 0.3])
    counts = np.bincount([sample_index(p, rng) for _ in range(20_000)], minlength=4)
    assert counts[1] == 0
    np.testing.assert_allclose(counts / counts.sum(), p, atol=0.015)


def test_singleton_class_plays_optimum(two_arm):
    cls = FiniteFunctionClass(two_arm.R_star[None])
    run = kl_ucb_run(two_arm, cls, 50, seed=0)
    assert np.all(run.trace.uncertainty_at_play == 0)
    assert np.all(run.trace.bonus_at_play == 0)
    assert np.all(np.abs(run.trace.per_round_gap) <= 1e-9)
    np.testing.assert_allclose(run.final_policy, two_arm.optimal_policy())


def test_zero_rounds_gives_empty_trace(two_arm):
    cls, _ = finite_class_with_truth(two_arm.R_star, 4, np.random.default_rng(0))
    run = kl_ucb_run(two_arm, cls, 0)
    assert len(run.trace) == 0 and run.trace.cumulative.size == 0


def test_lambda_constraint(two_arm):
    cls, _ = finite_class_with_truth(two_arm.R_star, 4, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        kl_ucb_run(two_arm, cls, 10, lam=1e4)
    kl_ucb_run(two_arm, cls, 10, lam=1e4, bonus_scale=0.0)


def test_per_round_gap_examples(two_arm):
    assert per_round_gap(two_arm, two_arm.optimal_policy()) == pytest.approx(0.0, abs=1e-15)
    gap_ref = per_round_gap(two_arm, two_arm.pi_ref)
    assert gap_ref == pytest.approx(two_arm.optimal_value() - 0.5)
    assert gap_ref >= 0


@pytest.mark.parametrize("seed", range(5))
def test_per_round_gap_delta_form(seed):
    rng = np.random.default_rng(seed)
    inst = random_bandit_instance(3, 4, float(rng.uniform(0.5, 4)), rng)
    R_opt = inst.R_star + rng.uniform(0, 0.5, inst.R_star.shape)
    pi = kl_core.gibbs_weights(R_opt, inst.eta, inst.pi_ref)
    per_round_gap(inst, pi, optimistic_reward=R_opt)


def test_per_round_gap_detects_mismatch(two_arm):
    with pytest.raises(ArithmeticError):
        per_round_gap(two_arm, two_arm.pi_ref, optimistic_reward=np.array([[0.9, 0.1]]))


def test_deceptive_class_layout():
    R = np.array([[0.2, 0.8]])
    cls, truth = finite_class_with_truth(R, 8, np.random.default_rng(0), deceptive=True)
    np.testing.assert_allclose(cls.members[0], 1 - R)
    assert truth != 0
    np.testing.assert_array_equal(cls.members[truth], R)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_trace_invariants(seed):
    rng = np.random.default_rng(seed)
    inst = random_bandit_instance(2, 3, float(rng.uniform(0.5, 4)), rng)
    cls, _ = finite_class_with_truth(inst.R_star, 5, rng)
    run = kl_ucb_run(inst, cls, 60, seed=seed)
    tr = run.trace
    assert np.all(tr.per_round_gap >= -1e-9)
    assert np.all(np.diff(tr.cumulative) >= -1e-12)
    np.testing.assert_allclose(tr.cumulative, np.cumsum(tr.per_round_gap), atol=1e-9)
    assert np.all((tr.bonus_at_play >= 0) & (tr.bonus_at_play <= 1))
    assert np.all(np.diff(tr.eluder_sum_curve) >= 0)


@pytest.mark.parametrize("seed", range(4))
def test_gap_bounded_by_squared_error_under_optimism(seed):
    rng = np.random.default_rng(seed)
    inst = random_bandit_instance(2, 3, 2.0, rng)
    cls, _ = finite_class_with_truth(inst.R_star, 6, rng)
    run = kl_ucb_run(inst, cls, 200, seed=seed)
    ok = run.optimistic_before
    assert ok.any()
    assert np.all(run.trace.per_round_gap[ok] <= run.sq_error_bound[ok] + 1e-9)


def test_linear_class_run(two_arm):
    run = kl_ucb_run(two_arm, onehot_class(1, 2), 300, seed=1)
    assert len(run.trace) == 300
    assert np.all(run.trace.per_round_gap >= -1e-9)


def test_replay_determinism(two_arm):
    cls, _ = finite_class_with_truth(two_arm.R_star, 8, np.random.default_rng(0))
    a = kl_ucb_run(two_arm, cls, 300, seed=9).trace
    b = kl_ucb_run(two_arm, cls, 300, seed=9).trace
    for name in ("per_round_gap", "bonus_at_play", "uncertainty_at_play", "optimism_violated"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()


def test_greedy_has_zero_bonus(two_arm):
    cls, _ = finite_class_with_truth(two_arm.R_star, 8, np.random.default_rng(0), deceptive=True)
    run = kl_ucb_run(two_arm, cls, 100, bonus_scale=0.0, seed=0)
    assert run.beta == 0.0
    assert np.all(run.trace.bonus_at_play == 0)


def test_violation_rounds_are_one_based():
    inst = make_bandit_instance([[0.2, 0.8]])
    wrong = FiniteFunctionClass(np.array([[[0.1, 0.1]]]))
    run = kl_ucb_run(inst, wrong, 5)
    assert run.trace.optimism_violations == [1, 2, 3, 4, 5]
