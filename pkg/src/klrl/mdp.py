"""Finite-horizon KL-regularized MDPs: exact soft dynamic programming, policy
evaluation, and optimistic least-squares value iteration (KL-LSVI-UCB).

Steps are 0-based in code: ``h = 0 .. H-1``. Arrays are laid out as
``P[h, s, a, s']``, ``r[h, s, a]``, ``pi_ref[h, s, a]`` and value tables
``Q[h, s, a]``, ``V[h, s]`` with ``V[H] = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from klrl import kl_core
from klrl.bandit import OPTIMISM_TOL, NoiseSpec, RegretTrace, sample_index
from klrl.errors import ConfigError, InstanceError, InvalidInputError
from klrl.function_classes import (
    FiniteFunctionClass,
    LinearFunctionClass,
    beta_schedule,
    bonus_table,
    make_learner,
)

Q_RANGE_TOL = 1e-9


@dataclass
class MDPInstance:
    P: np.ndarray  # (H, S, A, S)
    r: np.ndarray  # (H, S, A)
    d0: np.ndarray  # (S,)
    pi_ref: np.ndarray  # (H, S, A)
    eta: float = 1.0
    noise: NoiseSpec = field(default_factory=lambda: NoiseSpec("none", 0.0))
    reward_scale: float = 1.0

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        if self.P.ndim != 4 or self.P.shape[:3] != self.r.shape or self.P.shape[1] != self.P.shape[3]:
            raise InstanceError(f"inconsistent shapes P {self.P.shape}, r {self.r.shape}")
        if np.any(self.P < 0) or not np.allclose(self.P.sum(-1), 1.0, rtol=0, atol=1e-9):
            raise InstanceError("transition rows must be nonnegative and sum to 1")
        if not np.all(np.isfinite(self.r)):
            raise InstanceError("rewards must be finite")
        self.d0 = kl_core.check_distribution(self.d0, "d0")
        self.pi_ref = kl_core.check_distribution(self.pi_ref, "pi_ref")
        if self.pi_ref.shape != self.r.shape or self.d0.shape != (self.n_states,):
            raise InstanceError("pi_ref / d0 shapes do not match the MDP")
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise InstanceError("eta must be a positive finite real")

    @property
    def horizon(self):
        return self.r.shape[0]

    @property
    def n_states(self):
        return self.r.shape[1]

    @property
    def n_actions(self):
        return self.r.shape[2]


def random_mdp(n_states, n_actions, horizon, eta, rng, noise=None, uniform_ref=True):
    """Random instance with rewards drawn in [0, 1] and scaled by 1/H, which keeps Q* in [0, 1]."""
    shape = (horizon, n_states, n_actions)
    P = rng.dirichlet(np.ones(n_states), size=shape)
    scale = 1.0 / horizon
    r = scale * rng.uniform(0, 1, size=shape)
    d0 = rng.dirichlet(np.ones(n_states))
    pi_ref = (np.full(shape, 1.0 / n_actions) if uniform_ref
              else rng.dirichlet(np.ones(n_actions), size=shape[:2]))
    return MDPInstance(P, r, d0, pi_ref, eta, noise if noise is not None else NoiseSpec("none", 0.0),
                       reward_scale=scale)


@dataclass
class ValueFunctions:
    Q: np.ndarray  # (H, S, A)
    V: np.ndarray  # (H + 1, S)


@dataclass
class OptimalSolution:
    values: ValueFunctions
    policy: np.ndarray  # (H, S, A)
    J: float


def _expect_next(P_h, V_next):
    """sum_{s'} P(s'|s,a) V(s') treating 0 * (-inf) as 0."""
    finite = np.where(np.isfinite(V_next), V_next, 0.0)
    out = P_h @ finite
    bad = ~np.isfinite(V_next)
    if np.any(bad):
        hit = (P_h[..., bad] > 0).any(axis=-1)
        out = np.where(hit, -np.inf, out)
    return out


def optimal_backward_induction(instance, validate=True):
    """Soft dynamic programming from V[H] = 0; the optimal policy is Gibbs in Q* at every step."""
    H, S, A = instance.r.shape
    Q = np.zeros((H, S, A))
    V = np.zeros((H + 1, S))
    for h in reversed(range(H)):
        Q[h] = instance.r[h] + instance.P[h] @ V[h + 1]
        V[h] = kl_core.soft_value(Q[h], instance.eta, instance.pi_ref[h])
    if validate and (Q.min() < -Q_RANGE_TOL or Q.max() > 1 + Q_RANGE_TOL):
        raise InstanceError(f"Q* leaves [0, 1]: range [{Q.min():.6g}, {Q.max():.6g}]")
    policy = kl_core.gibbs_weights(Q, instance.eta, instance.pi_ref)
    return OptimalSolution(ValueFunctions(Q, V), policy, float(instance.d0 @ V[0]))


def bellman_apply(instance, h, f_next=None):
    """r_h + E_{s'} soft_value(f_next)(s'); at the last step the continuation is zero."""
    H = instance.horizon
    if h == H - 1:
        if f_next is not None and np.any(np.asarray(f_next) != 0):
            raise InvalidInputError("the continuation after the last step must be zero")
        return instance.r[h].copy()
    f_next = np.asarray(f_next, dtype=float)
    if not np.all(np.isfinite(f_next)):
        raise InvalidInputError("f_next must be finite")
    v = kl_core.soft_value(f_next, instance.eta, instance.pi_ref[h + 1])
    return instance.r[h] + instance.P[h] @ v


@dataclass
class PolicyValue:
    J: float
    V: np.ndarray  # (H + 1, S)
    Q: np.ndarray  # (H, S, A)


def policy_value(instance, pi):
    """Exact regularized value of a per-step policy by backward recursion.

    A policy leaving the reference support at some state makes that state's
    value ``-inf``; the sentinel propagates to J only through reachable states.
    """
    pi = np.asarray(pi, dtype=float)
    H, S, A = instance.r.shape
    if pi.shape != (H, S, A):
        raise InvalidInputError(f"policy shape {pi.shape} != {(H, S, A)}")
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A))
    for h in reversed(range(H)):
        Q[h] = instance.r[h] + _expect_next(instance.P[h], V[h + 1])
        kl = kl_core.kl_divergence(pi[h], instance.pi_ref[h])
        q_fin = np.where(np.isfinite(Q[h]), Q[h], 0.0)
        exp_q = np.sum(pi[h] * q_fin, axis=-1)
        q_bad = np.any((pi[h] > 0) & ~np.isfinite(Q[h]), axis=-1)
        V[h] = np.where(np.isinf(kl) | q_bad, -np.inf, exp_q - np.where(np.isinf(kl), 0.0, kl) / instance.eta)
    live = instance.d0 > 0
    J = -np.inf if np.any(np.isinf(V[0][live])) else float(instance.d0[live] @ V[0][live])
    return PolicyValue(J, V, Q)


def state_occupancy(instance, pi):
    """d_h(s) under d0 and the per-step policy, shape (H, S)."""
    H, S, _ = instance.r.shape
    occ = np.zeros((H, S))
    occ[0] = instance.d0
    for h in range(H - 1):
        occ[h + 1] = np.einsum("s,sa,sat->t", occ[h], pi[h], instance.P[h])
    return occ


def bellman_errors(instance, Q_hat):
    """e_h = Q_hat_h - (r_h + P_h soft_value(Q_hat_{h+1})), with zero continuation after H."""
    H = instance.horizon
    e = np.empty_like(Q_hat)
    for h in range(H):
        nxt = Q_hat[h + 1] if h + 1 < H else None
        e[h] = Q_hat[h] - bellman_apply(instance, h, nxt)
    return e


def concatenate_policies(pi_hat, pi_star, k):
    """pi_hat on steps 0..k-1 followed by pi_star on steps k..H-1."""
    out = np.array(pi_star, dtype=float, copy=True)
    out[:k] = pi_hat[:k]
    return out


def concatenation_decomposition(instance, pi_hat, Q_hat=None, solution=None):
    """Split J(pi*) - J(pi_hat) into the H single-step swaps.

    Term ``k`` (k = 1..H) is J(pi_hat[:k-1] + pi*) - J(pi_hat[:k] + pi*). When
    ``Q_hat`` (with pi_hat Gibbs in it) is given, also returns the per-term
    bound eta * E^{pi_hat}[(Q_hat_k - Q*_k)^2], valid where Q_hat >= Q*.
    """
    sol = solution or optimal_backward_induction(instance)
    H = instance.horizon
    values = [policy_value(instance, concatenate_policies(pi_hat, sol.policy, k)).J for k in range(H + 1)]
    terms = np.array([values[k] - values[k + 1] for k in range(H)])
    if Q_hat is None:
        return terms, None
    occ = state_occupancy(instance, pi_hat)
    sq = (np.asarray(Q_hat) - sol.values.Q) ** 2
    bounds = instance.eta * np.einsum("hs,hsa,hsa->h", occ, pi_hat, sq)
    return terms, bounds


def check_completeness(instance, classes, tol=1e-9):
    """Brute-force check that every backup of a step-(h+1) member lies in the step-h class.

    One-hot linear classes represent every table and pass trivially.
    """
    H = instance.horizon
    for h in range(H):
        cls = classes[h]
        if isinstance(cls, LinearFunctionClass):
            continue
        nexts = [None] if h == H - 1 else list(_members(classes[h + 1]))
        for f in nexts:
            if f is None and h < H - 1:
                continue
            target = bellman_apply(instance, h, f)
            dist = np.max(np.abs(cls.members - target), axis=(1, 2))
            if dist.min() > tol:
                return False
    return True


def _members(cls):
    if isinstance(cls, FiniteFunctionClass):
        return cls.members
    raise ConfigError("completeness can only be enumerated for finite classes")


def closed_finite_classes(instance, n_distractors, rng, solution=None):
    """Finite classes that contain Q* and are closed under the soft backup.

    Step h holds the backups of every step-(h+1) member plus random distractor
    tables drawn in [0, (H - h) / H], the range of Q*_h under the 1/H reward
    scaling, so every backup stays in [0, 1]. Requires rewards in [0, 1/H].
    """
    sol = solution or optimal_backward_induction(instance)
    H, S, A = instance.r.shape
    if instance.r.max() > 1.0 / H + Q_RANGE_TOL:
        raise InstanceError("closed finite classes need rewards in [0, 1/H]")
    classes = [None] * H
    for h in reversed(range(H)):
        top = (H - h) / H
        backups = ([instance.r[h]] if h == H - 1
                   else [bellman_apply(instance, h, f) for f in classes[h + 1].members])
        tables = backups + [rng.uniform(0, top, (S, A)) for _ in range(n_distractors)]
        classes[h] = FiniteFunctionClass(np.clip(np.array(tables), 0.0, 1.0))
    for h in range(H):
        if np.max(np.abs(classes[h].members - sol.values.Q[h]), axis=(1, 2)).min() > 1e-9:
            raise InstanceError(f"Q* is not realizable at step {h}")
    return classes


@dataclass
class MDPRun:
    trace: RegretTrace
    betas: np.ndarray
    optimistic: np.ndarray  # per episode: Q_hat >= Q* at every (h, s, a)
    expected_sq_bellman: np.ndarray  # per episode: E^{pi_t} sum_h e_h^2
    policies: list | None = None
    Q_hat: np.ndarray | None = None  # (T, H, S, A) when values are logged
    states: np.ndarray | None = None  # (T, H)
    actions: np.ndarray | None = None  # (T, H)
    final_policy: np.ndarray | None = None


def kl_lsvi_ucb_run(instance, classes, T, delta=0.1, lam=1.0, seed=0, bonus_scale=1.0,
                    bonus_class_size=1, keep_policies=False, log_values=False):
    """Optimistic KL-regularized least-squares value iteration for ``T`` episodes.

    Each episode refits every step backward from the last, regressing
    ``r + V_hat_{h+1}(s')`` on all earlier episodes, adds the bonus
    ``min(1, beta_h U_h)`` and takes the soft value of the result. The rollout
    then follows the Gibbs policy of ``Q_hat`` at every step.
    """
    if T < 0:
        raise ConfigError("T must be nonnegative")
    if not lam > 0:
        raise ConfigError("lambda must be positive")
    H, S, A = instance.r.shape
    if len(classes) != H:
        raise ConfigError(f"need one function class per step ({H}), got {len(classes)}")
    rng = np.random.default_rng(seed)
    eta, pi_ref = instance.eta, instance.pi_ref
    sizes = [c.size for c in classes] + [1]
    betas = np.array([
        beta_schedule(sizes[h] * sizes[h + 1] * (bonus_class_size if h + 1 < H else 1),
                      max(T, 1), H, delta, "mdp", bonus_scale)
        for h in range(H)
    ])
    if bonus_scale > 0 and np.any(lam > 0.5 * betas ** 2):
        raise ConfigError(f"lambda = {lam:g} exceeds beta_h^2 / 2 = {0.5 * betas.min() ** 2:g}")
    sol = optimal_backward_induction(instance)
    # optimistic targets r + V_hat exceed 1, so linear fits stay unclipped
    learners = [make_learner(classes[h], lam, n_next=S, clip=False) for h in range(H)]

    gaps = np.zeros(T)
    bonus_play = np.zeros(T)
    u_play = np.zeros(T)
    eluder_inc = np.zeros(T)
    violated = np.zeros(T, dtype=bool)
    sq_bellman = np.zeros(T)
    expected_sq = np.zeros(T)
    policies = [] if keep_policies else None
    Q_log = np.zeros((T, H, S, A)) if log_values else None
    states = np.zeros((T, H), dtype=int)
    actions = np.zeros((T, H), dtype=int)
    pi = np.array(pi_ref, copy=True)

    for t in range(T):
        Q_hat = np.zeros((H, S, A))
        U = np.zeros((H, S, A))
        b = np.zeros((H, S, A))
        V_hat = np.zeros((H + 1, S))
        for h in reversed(range(H)):
            handle = learners[h].fit(V_hat[h + 1] if h + 1 < H else None)
            f_hat = learners[h].table(handle)
            U[h] = learners[h].uncertainty_table(handle, betas[h])
            if betas[h] > 0:
                b[h] = bonus_table(U[h], betas[h])
            Q_hat[h] = f_hat + b[h]
            V_hat[h] = kl_core.soft_value(Q_hat[h], eta, pi_ref[h])
        pi = kl_core.gibbs_weights(Q_hat, eta, pi_ref)
        gaps[t] = sol.J - policy_value(instance, pi).J
        violated[t] = bool(np.any(Q_hat < sol.values.Q - OPTIMISM_TOL))
        e = Q_hat - (instance.r + np.einsum("hsat,ht->hsa", instance.P, V_hat[1:]))
        occ = state_occupancy(instance, pi)
        expected_sq[t] = float(np.einsum("hs,hsa,hsa->", occ, pi, e ** 2))
        if keep_policies:
            policies.append(pi)
        if log_values:
            Q_log[t] = Q_hat

        s = sample_index(instance.d0, rng)
        for h in range(H):
            a = sample_index(pi[h, s], rng)
            states[t, h], actions[t, h] = s, a
            reward = instance.r[h, s, a] + instance.noise.sample(rng)
            s_next = sample_index(instance.P[h, s, a], rng) if h + 1 < H else 0
            learners[h].add(s, a, reward, s_next)
            bonus_play[t] += b[h, s, a]
            u_play[t] += U[h, s, a]
            eluder_inc[t] += min(1.0, U[h, s, a] ** 2)
            sq_bellman[t] += e[h, s, a] ** 2
            s = s_next

    trace = RegretTrace(gaps, bonus_play, u_play, eluder_inc, violated, sq_bellman)
    return MDPRun(trace, betas, ~violated, expected_sq, policies, Q_log,
                  states if log_values else None, actions if log_values else None, pi)


def bellman_error_diagnostics(instance, run):
    """Recompute per-episode sum_h e_h(s_h, a_h)^2 from logged Q_hat via ``bellman_apply``."""
    if run.Q_hat is None:
        raise ConfigError("run was made without log_values=True")
    T, H = run.states.shape
    out = np.zeros(T)
    for t in range(T):
        e = bellman_errors(instance, run.Q_hat[t])
        out[t] = sum(e[h, run.states[t, h], run.actions[t, h]] ** 2 for h in range(H))
    return out
