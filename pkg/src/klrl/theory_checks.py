"""Numerical checks of the analytic facts the regret analysis rests on.

Each check is deterministic given its seed and returns a :class:`CheckReport`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from klrl import kl_core
from klrl.bandit import BanditInstance
from klrl.errors import InvalidInputError
from klrl.function_classes import FiniteFunctionClass, generalization_bound
from klrl.mdp import MDPInstance, optimal_backward_induction, policy_value

ETA_RANGE = (0.5, 8.0)
REPORT_FIELDS = ("name", "trials", "max_violation", "tolerance", "pass")


@dataclass(frozen=True)
class CheckReport:
    name: str
    trials: int
    max_violation: float
    tolerance: float
    details: dict = field(default_factory=dict, compare=False)

    @property
    def passed(self):
        return bool(self.max_violation <= self.tolerance)

    def row(self):
        return [self.name, str(self.trials), repr(float(self.max_violation)),
                repr(float(self.tolerance)), "1" if self.passed else "0"]


def _random_delta_instance(rng, max_actions=8, min_actions=2):
    A = int(rng.integers(min_actions, max_actions + 1))
    eta = float(rng.uniform(*ETA_RANGE))
    R = rng.uniform(0, 1, size=(1, A))
    R_star = rng.uniform(0, 1, size=(1, A))
    pi_ref = rng.dirichlet(np.ones(A), size=1)
    return R, R_star, eta, pi_ref


def finite_difference_gradient(R, R_star, eta, pi_ref, x=0, step=1e-6):
    """Central differences of Delta(x, .) along each action coordinate."""
    R = np.array(R, dtype=float)
    g = np.zeros(R.shape[1])
    for a in range(R.shape[1]):
        up, dn = R.copy(), R.copy()
        up[x, a] += step
        dn[x, a] -= step
        g[a] = (kl_core.delta_value(x, up, R_star, eta, pi_ref)
                - kl_core.delta_value(x, dn, R_star, eta, pi_ref)) / (2 * step)
    return g


def gradient_check(trials=100, seed=0, step=1e-6, tolerance=1e-5, sum_tolerance=1e-12):
    """Analytic Delta-gradient against central finite differences.

    The violation is the relative error ``||g - g_fd||_inf / max(||g_fd||_inf, 1)``
    maximised over instances; the gradient's component sum (which must vanish)
    is checked against ``sum_tolerance``.
    """
    if trials < 1:
        raise InvalidInputError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_sum = 0.0
    for _ in range(trials):
        R, R_star, eta, pi_ref = _random_delta_instance(rng)
        g = kl_core.delta_gradient(0, R, R_star, eta, pi_ref)
        fd = finite_difference_gradient(R, R_star, eta, pi_ref, step=step)
        worst = max(worst, float(np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1.0)))
        worst_sum = max(worst_sum, abs(float(g.sum())))
    # a nonzero component sum is scored as an outright failure
    violation = worst if worst_sum <= sum_tolerance else math.inf
    return CheckReport("gradient", trials, violation, tolerance,
                       {"max_relative_error": worst, "max_component_sum": worst_sum})


def u_lambda(lams, R_star, delta, eta, pi_ref):
    """U(lam) = sum_a lam delta(a)^2 pi_{R* + lam delta}(a) for a single context."""
    R_star = np.asarray(R_star, dtype=float).reshape(1, -1)
    delta = np.asarray(delta, dtype=float).reshape(1, -1)
    pi_ref = np.asarray(pi_ref, dtype=float).reshape(1, -1)
    out = np.empty(len(lams))
    for i, lam in enumerate(lams):
        pi = kl_core.gibbs_weights(R_star + lam * delta, eta, pi_ref)[0]
        out[i] = lam * float(np.dot(pi, delta[0] ** 2))
    return out


def u_lambda_check(trials=200, grid_size=101, seed=0, tolerance=1e-10):
    """U(lam) on a grid over [0, 1] must be nondecreasing and capped by U(1).

    Instances take ``delta = R_opt - R* >= 0``, the optimistic case.
    """
    if trials < 1 or grid_size < 2:
        raise InvalidInputError("need trials >= 1 and grid_size >= 2")
    rng = np.random.default_rng(seed)
    grid = np.linspace(0.0, 1.0, grid_size)
    worst = 0.0
    for _ in range(trials):
        A = int(rng.integers(1, 9))
        eta = float(rng.uniform(*ETA_RANGE))
        R_star = rng.uniform(0, 1, A)
        delta = rng.uniform(0, 1, A)
        pi_ref = rng.dirichlet(np.ones(A))
        u = u_lambda(grid, R_star, delta, eta, pi_ref)
        worst = max(worst, float(np.max(u[:-1] - u[1:])), float(np.max(u - u[-1])))
    return CheckReport("u_lambda", trials, max(worst, 0.0), tolerance)


def third_moment_gap(values, probs):
    """E[X^3] - E[X^2] E[X] for a finitely supported X >= 0."""
    x = np.asarray(values, dtype=float)
    p = kl_core.check_distribution(probs, "probs")
    if x.shape != p.shape:
        raise InvalidInputError("support and probabilities differ in length")
    if np.any(x < 0):
        raise InvalidInputError("the inequality requires nonnegative support")
    return float(p @ x ** 3 - (p @ x ** 2) * (p @ x))


def third_moment_check(distributions, tolerance=1e-12):
    """``distributions`` is a sequence of (support, probabilities) pairs."""
    gaps = [third_moment_gap(v, p) for v, p in distributions]
    if not gaps:
        raise InvalidInputError("no distributions given")
    return CheckReport("third_moment", len(gaps), max(0.0, -min(gaps)), tolerance)


def random_distributions(n, seed=0, max_support=8):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        k = int(rng.integers(1, max_support + 1))
        out.append((rng.exponential(1.0, k), rng.dirichlet(np.ones(k))))
    return out


def generalization_check(cls, truth, noise, runs=400, T=100, delta=0.05, seed=0, noise_scale=1.0):
    """Frequency of streams on which the ERM's in-sample error ever exceeds the bound.

    Points are drawn uniformly over (context, action); targets are
    ``f*(z) + noise``. The ERM over the finite class is refit after every
    record. The tolerance is ``delta`` plus two binomial standard errors.
    """
    if not isinstance(cls, FiniteFunctionClass):
        raise InvalidInputError("generalization_check enumerates a finite class")
    if runs < 1 or T < 1:
        raise InvalidInputError("runs and T must be >= 1")
    rng = np.random.default_rng(seed)
    members = cls.members
    X, A = cls.table_shape
    f_star = members[truth]
    bound = generalization_bound(cls.size, T, delta, noise_scale)
    failures = 0
    worst_ratio = 0.0
    for _ in range(runs):
        xs = rng.integers(0, X, T)
        acts = rng.integers(0, A, T)
        ys = f_star[xs, acts] + np.array([noise.sample(rng) for _ in range(T)])
        preds = members[:, xs, acts]  # (N, T)
        losses = np.cumsum((preds - ys) ** 2, axis=1)
        errors = np.cumsum((preds - f_star[xs, acts]) ** 2, axis=1)
        # lowest index wins ties, as in the ERM
        erm = np.argmin(losses, axis=0)
        in_sample = errors[erm, np.arange(T)]
        worst_ratio = max(worst_ratio, float(in_sample.max() / bound))
        failures += bool(np.any(in_sample > bound))
    freq = failures / runs
    tol = delta + 2.0 * math.sqrt(delta * (1 - delta) / runs)
    return CheckReport("generalization", runs, freq, tol,
                       {"bound": bound, "max_error_over_bound": worst_ratio})


@dataclass
class MixturePolicy:
    """Uniform mixture over a sequence of policies: draw one member, then act with it."""

    policies: list

    def sample_member(self, rng):
        return self.policies[int(rng.integers(len(self.policies)))]


def _objective(instance, pi):
    if isinstance(instance, BanditInstance):
        return instance.value(pi)
    if isinstance(instance, MDPInstance):
        return policy_value(instance, pi).J
    raise InvalidInputError(f"unsupported instance type {type(instance).__name__}")


def _optimum(instance):
    if isinstance(instance, BanditInstance):
        return instance.optimal_value()
    return optimal_backward_induction(instance).J


def online_to_batch(policies, instance):
    """Uniform mixture of ``policies`` and its suboptimality.

    The mixture's value is the average of its members' objectives, so the
    returned gap is ``J* - mean_t J(pi_t)``.
    """
    if len(policies) == 0:
        raise InvalidInputError("online_to_batch needs at least one policy")
    values = np.array([_objective(instance, pi) for pi in policies])
    return MixturePolicy(list(policies)), _optimum(instance) - float(values.mean())


def online_to_batch_residual(policies, instance, per_round_gaps):
    """|mixture gap - mean per-round gap|; zero up to rounding."""
    _, gap = online_to_batch(policies, instance)
    return abs(gap - float(np.mean(per_round_gaps)))
