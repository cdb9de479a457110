import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from klrl import kl_core
from klrl.errors import InvalidInputError

mpmath.mp.dps = 40
LOG_HALF_ONE_PLUS_E = float(mpmath.log((1 + mpmath.e) / 2))
UNIFORM2 = np.array([[0.5, 0.5]])


def simplex_grid_max(r, eta, ref, step=1e-4):
    """Brute-force max of p r - KL(p || ref) / eta over the 1-simplex."""
    p = np.arange(0.0, 1.0 + step / 2, step)
    P = np.column_stack([p, 1 - p])
    with np.errstate(divide="ignore", invalid="ignore"):
        kl = np.nansum(np.where(P > 0, P * np.log(P / ref), 0.0), axis=1)
    return float(np.max(P @ r - kl / eta))


# ---- log_partition


def test_log_partition_constant_score():
    assert kl_core.log_partition([[0.3, 0.3, 0.3]], 2.5, [[0.2, 0.3, 0.5]], 0) == pytest.approx(0.75, abs=1e-15)


def test_log_partition_point_mass_base():
    assert kl_core.log_partition([[0.4, 0.9]], 3.0, [[1.0, 0.0]], 0) == pytest.approx(1.2, abs=1e-15)


def test_log_partition_two_actions_high_precision():
    assert kl_core.log_partition([[0.0, 1.0]], 1.0, UNIFORM2, 0) == pytest.approx(LOG_HALF_ONE_PLUS_E, abs=1e-15)
    assert LOG_HALF_ONE_PLUS_E == pytest.approx(0.6201, abs=1e-4)


def test_log_partition_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        kl_core.log_partition([[0.0, np.nan]], 1.0, UNIFORM2, 0)
    with pytest.raises(InvalidInputError):
        kl_core.log_partition([[0.0, np.inf]], 1.0, UNIFORM2, 0)


def test_log_partition_large_eta_is_stable():
    val = kl_core.log_partition([[0.0, 1.0]], 2000.0, UNIFORM2, 0)
    assert val == pytest.approx(2000.0 + math.log(0.5))


@given(arrays(float, 5, elements=st.floats(0, 1)), st.floats(0.05, 50))
def test_log_partition_bounds(score, eta):
    base = np.full(5, 0.2)
    v = kl_core.log_partition(score, eta, base)
    assert eta * score.min() - 1e-9 <= v <= eta * score.max() + 1e-9


# ---- gibbs_distribution


def test_gibbs_zero_score_uniform():
    np.testing.assert_allclose(kl_core.gibbs_distribution([[0.0, 0.0]], 1.0, UNIFORM2, 0), [0.5, 0.5])


def test_gibbs_constant_score_keeps_base():
    out = kl_core.gibbs_distribution([[0.5, 0.5]], 2.0, [[0.9, 0.1]], 0)
    np.testing.assert_allclose(out, [0.9, 0.1], atol=1e-15)


def test_gibbs_two_action_closed_form():
    e = math.e
    out = kl_core.gibbs_distribution([[0.0, 1.0]], 1.0, UNIFORM2, 0)
    np.testing.assert_allclose(out, [1 / (1 + e), e / (1 + e)], rtol=1e-14)


def test_gibbs_zero_where_base_zero():
    out = kl_core.gibbs_distribution([[0.1, 0.9, 0.5]], 4.0, [[0.5, 0.0, 0.5]], 0)
    assert out[1] == 0.0 and np.all(out[[0, 2]] > 0)


def test_gibbs_policy_object_matches_functions():
    rng = np.random.default_rng(3)
    score = rng.uniform(size=(3, 4))
    base = rng.dirichlet(np.ones(4), size=3)
    pol = kl_core.GibbsPolicy(base, score, 1.7)
    np.testing.assert_allclose(pol.table()[2], pol.probs(2))


@settings(max_examples=200)
@given(arrays(float, 6, elements=st.floats(0, 1)), st.floats(0.01, 100),
       arrays(float, 6, elements=st.floats(0.001, 1)))
def test_gibbs_is_distribution_and_preserves_argmax(score, eta, raw_base):
    base = raw_base / raw_base.sum()
    pi = kl_core.gibbs_distribution(score, eta, base)
    assert np.all(pi >= 0)
    assert abs(pi.sum() - 1) <= 1e-9
    unnorm = np.log(base) + eta * score
    assert pi[np.argmax(unnorm)] == pytest.approx(pi.max(), rel=1e-12)


# ---- kl_divergence


def test_kl_identity_and_known_values():
    assert kl_core.kl_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert kl_core.kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2))
    assert kl_core.kl_divergence([0.5, 0.5], [1.0, 0.0]) == math.inf


def test_kl_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        kl_core.kl_divergence([0.5, 0.5], [0.2, 0.3, 0.5])


@given(arrays(float, 4, elements=st.floats(0.01, 1)), arrays(float, 4, elements=st.floats(0.01, 1)))
def test_kl_nonnegative(p, q):
    assert kl_core.kl_divergence(p / p.sum(), q / q.sum()) >= -1e-15


# ---- objective / optimal_objective


def test_objective_at_reference():
    rng = np.random.default_rng(0)
    R = rng.uniform(size=(3, 4))
    ref = rng.dirichlet(np.ones(4), size=3)
    d0 = rng.dirichlet(np.ones(3))
    expected = float(d0 @ np.sum(ref * R, axis=1))
    assert kl_core.objective(ref, R, 2.0, ref, d0) == pytest.approx(expected, abs=1e-15)


def test_objective_degenerate():
    assert kl_core.objective([[1.0]], [[0.7]], 3.0, [[1.0]], [1.0]) == pytest.approx(0.7)


def test_objective_support_violation_flagged():
    assert kl_core.objective([[0.5, 0.5]], [[0.1, 0.2]], 1.0, [[1.0, 0.0]], [1.0]) == -math.inf


def test_objective_violation_at_dead_context_ignored():
    pi = np.array([[0.5, 0.5], [0.5, 0.5]])
    ref = np.array([[0.5, 0.5], [1.0, 0.0]])
    assert math.isfinite(kl_core.objective(pi, [[0.1, 0.2], [0.3, 0.4]], 1.0, ref, [1.0, 0.0]))


def test_optimal_objective_constant_reward():
    ref = np.array([[0.2, 0.8], [0.6, 0.4]])
    assert kl_core.optimal_objective(np.full((2, 2), 0.35), 5.0, ref, [0.3, 0.7]) == pytest.approx(0.35)


def test_optimal_objective_two_action_oracles():
    val = kl_core.optimal_objective([[0.0, 1.0]], 1.0, UNIFORM2, [1.0])
    assert val == pytest.approx(LOG_HALF_ONE_PLUS_E, abs=1e-15)
    assert simplex_grid_max(np.array([0.0, 1.0]), 1.0, np.array([0.5, 0.5])) == pytest.approx(val, abs=1e-7)


@pytest.mark.parametrize("seed", range(5))
def test_gibbs_attains_optimum_grid_oracle(seed):
    rng = np.random.default_rng(seed)
    r = rng.uniform(size=2)
    ref = rng.dirichlet(np.ones(2))
    eta = float(rng.uniform(0.5, 8))
    pi = kl_core.gibbs_distribution(r[None], eta, ref[None], 0)
    opt = kl_core.optimal_objective(r[None], eta, ref[None], [1.0])
    assert kl_core.objective(pi[None], r[None], eta, ref[None], [1.0]) == pytest.approx(opt, abs=1e-9)
    assert simplex_grid_max(r, eta, ref) == pytest.approx(opt, abs=1e-6)
    assert simplex_grid_max(r, eta, ref) <= opt + 1e-12


@settings(max_examples=50)
@given(st.integers(0, 2 ** 32 - 1))
def test_optimal_objective_dominates_random_policies(seed):
    rng = np.random.default_rng(seed)
    X, A = int(rng.integers(1, 4)), int(rng.integers(1, 6))
    R = rng.uniform(size=(X, A))
    ref = rng.dirichlet(np.ones(A), size=X)
    d0 = rng.dirichlet(np.ones(X))
    eta = float(rng.uniform(0.1, 8))
    opt = kl_core.optimal_objective(R, eta, ref, d0)
    for _ in range(100):
        pi = rng.dirichlet(np.ones(A), size=X)
        assert opt - kl_core.objective(pi, R, eta, ref, d0) >= -1e-9


# ---- soft_value


def test_soft_value_examples():
    assert kl_core.soft_value([[0.4, 0.4]], 3.0, UNIFORM2, 0) == pytest.approx(0.4)
    assert kl_core.soft_value([[0.4, 0.9]], 3.0, [[1.0, 0.0]], 0) == pytest.approx(0.4)
    assert kl_core.soft_value([[0.0, 1.0]], 1.0, UNIFORM2, 0) == pytest.approx(LOG_HALF_ONE_PLUS_E, abs=1e-15)


@given(arrays(float, (2, 3), elements=st.floats(0, 2)), arrays(float, (2, 3), elements=st.floats(0, 1)),
       st.floats(0.1, 10))
def test_soft_value_monotone_and_bounded(Q, bump, eta):
    ref = np.full((2, 3), 1 / 3)
    v = kl_core.soft_value(Q, eta, ref)
    v2 = kl_core.soft_value(Q + bump, eta, ref)
    assert np.all(v2 >= v - 1e-12)
    assert np.all(v >= Q.min(axis=1) - 1e-12) and np.all(v <= Q.max(axis=1) + 1e-12)


# ---- delta


def test_delta_at_truth():
    R = np.array([[0.3, 0.6]])
    expected = -kl_core.log_partition(R, 2.0, UNIFORM2, 0) / 2.0
    assert kl_core.delta_value(0, R, R, 2.0, UNIFORM2) == pytest.approx(expected)


def test_delta_two_action_value():
    e = mpmath.e
    oracle = float(-mpmath.log((1 + e) / 2) + e / (1 + e))
    got = kl_core.delta_value(0, [[0.0, 1.0]], [[0.0, 0.0]], 1.0, UNIFORM2)
    assert got == pytest.approx(oracle, abs=1e-14)
    assert got == pytest.approx(0.1109, abs=1e-4)


@pytest.mark.parametrize("seed", range(10))
def test_delta_gap_equals_suboptimality(seed):
    rng = np.random.default_rng(seed)
    X, A = 3, 4
    R_star = rng.uniform(size=(X, A))
    R_opt = R_star + rng.uniform(0, 1, size=(X, A))
    ref = rng.dirichlet(np.ones(A), size=X)
    d0 = rng.dirichlet(np.ones(X))
    eta = float(rng.uniform(0.5, 8))
    pi = kl_core.gibbs_weights(R_opt, eta, ref)
    gap = kl_core.optimal_objective(R_star, eta, ref, d0) - kl_core.objective(pi, R_star, eta, ref, d0)
    assert kl_core.delta_gap(R_opt, R_star, eta, ref, d0) == pytest.approx(gap, abs=1e-9)


def test_gradient_zero_at_truth():
    R = np.array([[0.2, 0.5, 0.9]])
    np.testing.assert_array_equal(kl_core.delta_gradient(0, R, R, 3.0, np.full((1, 3), 1 / 3)), 0.0)


@given(arrays(float, 5, elements=st.floats(0, 1)), arrays(float, 5, elements=st.floats(0, 1)),
       st.floats(0.5, 8))
def test_gradient_sums_to_zero(R, R_star, eta):
    g = kl_core.delta_gradient(0, R[None], R_star[None], eta, np.full((1, 5), 0.2))
    assert abs(g.sum()) <= 1e-12


def test_gradient_three_action_finite_difference():
    rng = np.random.default_rng(11)
    R, R_star = rng.uniform(size=(1, 3)), rng.uniform(size=(1, 3))
    ref = rng.dirichlet(np.ones(3), size=1)
    h = 1e-6
    fd = np.empty(3)
    for a in range(3):
        up, dn = R.copy(), R.copy()
        up[0, a] += h
        dn[0, a] -= h
        fd[a] = (kl_core.delta_value(0, up, R_star, 2.0, ref) - kl_core.delta_value(0, dn, R_star, 2.0, ref)) / (2 * h)
    g = kl_core.delta_gradient(0, R, R_star, 2.0, ref)
    assert np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1.0) < 1e-5


def test_check_distribution_rejects():
    with pytest.raises(InvalidInputError):
        kl_core.check_distribution([0.6, 0.6])
    with pytest.raises(InvalidInputError):
        kl_core.check_distribution([1.2, -0.2])
    with pytest.raises(InvalidInputError):
        kl_core.check_reward_table([[1.5]])
