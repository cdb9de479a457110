"""KL-regularized contextual bandit environment and the optimistic KL-UCB learner."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from klrl import kl_core
from klrl.errors import ConfigError, InvalidInputError
from klrl.function_classes import (
    FiniteFunctionClass,
    beta_schedule,
    bonus_table,
    make_learner,
)

OPTIMISM_TOL = 1e-12


@dataclass(frozen=True)
class NoiseSpec:
    """Zero-mean 1-sub-Gaussian observation noise.

    ``gaussian``: N(0, sigma^2) with sigma <= 1. ``bernoulli``: a centered coin,
    +sigma or -sigma with equal probability. ``none``: exact rewards.
    """

    kind: str = "gaussian"
    sigma: float = 0.5

    def __post_init__(self):
        if self.kind not in ("gaussian", "bernoulli", "none"):
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if not 0 <= self.sigma <= 1:
            raise ConfigError("noise sigma must lie in [0, 1] to stay 1-sub-Gaussian")

    def sample(self, rng):
        if self.kind == "none" or self.sigma == 0:
            return 0.0
        if self.kind == "gaussian":
            return self.sigma * rng.standard_normal()
        return self.sigma if rng.random() < 0.5 else -self.sigma


def sample_index(p, rng):
    """Draw an index from weights ``p`` with a single uniform variate."""
    cdf = np.cumsum(p)
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(i, len(p) - 1)


@dataclass
class BanditInstance:
    R_star: np.ndarray  # (X, A) in [0, 1]
    pi_ref: np.ndarray  # (X, A), rows sum to 1
    d0: np.ndarray  # (X,)
    eta: float = 1.0
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self):
        self.R_star = kl_core.check_reward_table(self.R_star, "R_star")
        self.pi_ref = kl_core.check_distribution(self.pi_ref, "pi_ref")
        self.d0 = kl_core.check_distribution(self.d0, "d0")
        if self.pi_ref.shape != self.R_star.shape or self.d0.shape != (self.R_star.shape[0],):
            raise InvalidInputError("R_star, pi_ref and d0 shapes are inconsistent")
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise InvalidInputError("eta must be a positive finite real")

    @property
    def n_contexts(self):
        return self.R_star.shape[0]

    @property
    def n_actions(self):
        return self.R_star.shape[1]

    def optimal_policy(self):
        return kl_core.gibbs_weights(self.R_star, self.eta, self.pi_ref)

    def optimal_value(self):
        return kl_core.optimal_objective(self.R_star, self.eta, self.pi_ref, self.d0)

    def value(self, pi):
        return kl_core.objective(pi, self.R_star, self.eta, self.pi_ref, self.d0)


def make_bandit_instance(R_star, eta=1.0, pi_ref=None, d0=None, noise=None):
    R_star = np.atleast_2d(np.asarray(R_star, dtype=float))
    n_ctx, n_act = R_star.shape
    if pi_ref is None:
        pi_ref = np.full((n_ctx, n_act), 1.0 / n_act)
    if d0 is None:
        d0 = np.full(n_ctx, 1.0 / n_ctx)
    return BanditInstance(R_star, np.atleast_2d(pi_ref), np.asarray(d0, dtype=float), eta,
                          noise if noise is not None else NoiseSpec())


def random_bandit_instance(n_contexts, n_actions, eta, rng, noise=None, uniform_ref=False):
    R_star = rng.uniform(0, 1, size=(n_contexts, n_actions))
    pi_ref = (np.full((n_contexts, n_actions), 1.0 / n_actions) if uniform_ref
              else rng.dirichlet(np.ones(n_actions), size=n_contexts))
    d0 = rng.dirichlet(np.ones(n_contexts))
    return BanditInstance(R_star, pi_ref, d0, eta, noise if noise is not None else NoiseSpec())


def finite_class_with_truth(R_star, n_members, rng, deceptive=False):
    """Finite class of ``n_members`` tables containing ``R_star`` at a random index.

    With ``deceptive=True`` member 0 is the reversed table ``1 - R_star`` (it
    ranks every action backwards) so the empty-data fit starts there.
    """
    R_star = np.atleast_2d(np.asarray(R_star, dtype=float))
    if n_members < 1:
        raise ConfigError("class needs at least one member")
    members = rng.uniform(0, 1, size=(n_members,) + R_star.shape)
    truth_at = int(rng.integers(n_members))
    if deceptive:
        if n_members < 2:
            raise ConfigError("a deceptive class needs at least two members")
        members[0] = 1.0 - R_star
        truth_at = 1 + int(rng.integers(n_members - 1))
    members[truth_at] = R_star
    return FiniteFunctionClass(members), truth_at


def env_step(instance, x, a, rng):
    """Observed reward R*(x, a) + noise; deterministic given the generator state."""
    if not (0 <= x < instance.n_contexts and 0 <= a < instance.n_actions):
        raise IndexError(f"(x, a) = ({x}, {a}) out of range")
    return float(instance.R_star[x, a] + instance.noise.sample(rng))


def per_round_gap(instance, pi_t, optimistic_reward=None):
    """J(pi*) - J(pi_t). When the optimistic reward behind ``pi_t`` is given, the
    gap is also evaluated in its Delta-difference form and the two must agree."""
    gap = instance.optimal_value() - instance.value(pi_t)
    if optimistic_reward is not None:
        alt = kl_core.delta_gap(optimistic_reward, instance.R_star, instance.eta,
                                instance.pi_ref, instance.d0)
        if not math.isclose(gap, alt, rel_tol=0.0, abs_tol=1e-9):
            raise ArithmeticError(f"gap {gap!r} disagrees with Delta form {alt!r}")
    return gap


@dataclass
class RegretTrace:
    per_round_gap: np.ndarray
    bonus_at_play: np.ndarray
    uncertainty_at_play: np.ndarray
    eluder_increment: np.ndarray
    optimism_violated: np.ndarray  # bool per round
    sum_sq_bellman_error: np.ndarray | None = None

    @property
    def cumulative(self):
        return np.cumsum(self.per_round_gap)

    @property
    def eluder_sum_curve(self):
        return np.cumsum(self.eluder_increment)

    @property
    def optimism_violations(self):
        return [int(t) + 1 for t in np.flatnonzero(self.optimism_violated)]

    def __len__(self):
        return len(self.per_round_gap)

    @classmethod
    def empty(cls, mdp=False):
        z = np.zeros(0)
        return cls(z, z, z, z, np.zeros(0, dtype=bool), z if mdp else None)


@dataclass
class BanditRun:
    trace: RegretTrace
    final_policy: np.ndarray
    beta: float
    policies: list | None = None
    # eta * E_x E_{a ~ pi_t} (R_opt - R*)^2 for the optimistic reward behind pi_t
    sq_error_bound: np.ndarray | None = None
    # whether that optimistic reward dominated R* everywhere
    optimistic_before: np.ndarray | None = None


def kl_ucb_run(instance, function_class, T, delta=0.1, lam=1.0, seed=0, bonus_scale=1.0,
               keep_policies=False, restrict=True):
    """Run the optimistic KL-regularized learner for ``T`` rounds.

    Round t plays pi_t proportional to pi_ref * exp(eta (R_hat + b)) built from
    the first t-1 records (round 1 uses the empty-data fit and bonus). The
    exact per-round gap J(pi*) - J(pi_t) is recorded, together with the bonus
    and uncertainty at the played pair and whether the refreshed optimistic
    reward still dominates R* everywhere.
    """
    if T < 0:
        raise ConfigError("T must be nonnegative")
    if not lam > 0:
        raise ConfigError("lambda must be positive")
    rng = np.random.default_rng(seed)
    eta, pi_ref, R_star = instance.eta, instance.pi_ref, instance.R_star
    beta = beta_schedule(function_class.size, max(T, 1), 1, delta, "bandit", bonus_scale)
    if bonus_scale > 0 and lam > 0.5 * beta ** 2:
        raise ConfigError(f"lambda = {lam:g} exceeds beta^2 / 2 = {0.5 * beta ** 2:g}")
    greedy = beta == 0
    learner = make_learner(function_class, lam)
    opt_value = instance.optimal_value()

    def refresh():
        handle = learner.fit()
        R_hat = learner.table(handle)
        U = learner.uncertainty_table(handle, beta, restrict)
        b = np.zeros_like(U) if greedy else bonus_table(U, beta)
        return R_hat, U, b

    gaps = np.zeros(T)
    bonus_play = np.zeros(T)
    u_play = np.zeros(T)
    violated = np.zeros(T, dtype=bool)
    bound = np.zeros(T)
    optimistic_before = np.zeros(T, dtype=bool)
    policies = [] if keep_policies else None

    R_hat, U, b = refresh()
    pi = kl_core.gibbs_weights(R_hat + b, eta, pi_ref)
    for t in range(T):
        R_opt = R_hat + b
        gaps[t] = opt_value - instance.value(pi)
        err = R_opt - R_star
        bound[t] = eta * float(np.dot(instance.d0, np.sum(pi * err ** 2, axis=1)))
        optimistic_before[t] = bool(np.all(err >= -OPTIMISM_TOL))
        if keep_policies:
            policies.append(pi)
        x = sample_index(instance.d0, rng)
        a = sample_index(pi[x], rng)
        u_play[t] = U[x, a]
        bonus_play[t] = b[x, a]
        r = env_step(instance, x, a, rng)
        learner.add(x, a, r)
        R_hat, U, b = refresh()
        violated[t] = bool(np.any(R_hat + b < R_star - OPTIMISM_TOL))
        pi = kl_core.gibbs_weights(R_hat + b, eta, pi_ref)

    trace = RegretTrace(gaps, bonus_play, u_play, np.minimum(1.0, u_play ** 2), violated)
    return BanditRun(trace, pi, beta, policies, bound, optimistic_before)
