"""Exact arithmetic for KL-regularized objectives over finite spaces.

Contexts and actions are dense integer indices. A reward table is an array of
shape ``(n_contexts, n_actions)``; a per-context distribution (policy,
reference policy) has the same shape with rows summing to one; a context
distribution ``d0`` is a 1-D array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from klrl.errors import InvalidInputError

DIST_ATOL = 1e-9


def check_distribution(weights, name="distribution", axis=-1):
    """Validate nonnegative weights summing to one along ``axis``; return as float array."""
    w = np.asarray(weights, dtype=float)
    if not np.all(np.isfinite(w)):
        raise InvalidInputError(f"{name} has non-finite weights")
    if np.any(w < 0):
        raise InvalidInputError(f"{name} has negative weights")
    if not np.allclose(w.sum(axis=axis), 1.0, rtol=0.0, atol=DIST_ATOL):
        raise InvalidInputError(f"{name} does not sum to 1 within {DIST_ATOL}")
    return w


def check_reward_table(values, name="reward table"):
    v = np.asarray(values, dtype=float)
    if v.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D (contexts x actions), got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError(f"{name} has non-finite values")
    if np.any(v < 0) or np.any(v > 1):
        raise InvalidInputError(f"{name} values must lie in [0, 1]")
    return v


def _log_partition_rows(scores, eta, base):
    """Row-wise log sum_a base(a) exp(eta * score(a)) with max-subtraction."""
    scores = np.asarray(scores, dtype=float)
    base = np.asarray(base, dtype=float)
    if scores.shape != base.shape:
        raise InvalidInputError(f"score shape {scores.shape} != base shape {base.shape}")
    if not np.all(np.isfinite(scores)):
        raise InvalidInputError("non-finite score values")
    if not eta > 0 or not np.isfinite(eta):
        raise InvalidInputError(f"eta must be a positive finite real, got {eta}")
    logits = eta * scores
    # actions outside the base support do not contribute
    masked = np.where(base > 0, logits, -np.inf)
    m = masked.max(axis=-1, keepdims=True)
    total = np.sum(base * np.exp(masked - m), axis=-1)
    return np.log(total) + m[..., 0]


def log_partition(score, eta, base, x=None):
    """log Z(x) = log E_{a ~ base(.|x)} exp(eta * score(x, a)).

    With ``x=None`` and 2-D inputs, returns the vector over all contexts; 1-D
    inputs are treated as a single context.
    """
    score = np.asarray(score, dtype=float)
    base = np.asarray(base, dtype=float)
    if x is not None:
        score, base = score[x], base[x]
    return _log_partition_rows(score, eta, base)


def gibbs_weights(score, eta, base):
    """Row-wise Gibbs weights base * exp(eta * score) / Z for arrays of any rank."""
    score = np.asarray(score, dtype=float)
    base = np.asarray(base, dtype=float)
    log_z = _log_partition_rows(score, eta, base)
    logits = np.where(base > 0, eta * score, -np.inf)
    w = base * np.exp(logits - log_z[..., None])
    return np.where(base > 0, w, 0.0)


def gibbs_distribution(score, eta, base, x=None):
    """pi(a|x) proportional to base(a|x) exp(eta * score(x, a))."""
    score = np.asarray(score, dtype=float)
    base = np.asarray(base, dtype=float)
    if x is not None:
        score, base = score[x], base[x]
    return gibbs_weights(score, eta, base)


@dataclass(frozen=True)
class GibbsPolicy:
    """Closed-form maximizer of the KL-regularized objective for a score table."""

    base: np.ndarray
    score: np.ndarray
    eta: float

    def probs(self, x):
        return gibbs_distribution(self.score, self.eta, self.base, x)

    def table(self):
        return gibbs_weights(self.score, self.eta, self.base)


def kl_divergence(p, q):
    """KL(p || q) along the last axis; ``inf`` where p puts mass outside q's support."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise InvalidInputError(f"dimension mismatch: {p.shape} vs {q.shape}")
    pos = p > 0
    violated = np.any(pos & (q <= 0), axis=-1)
    safe_q = np.where(pos & (q > 0), q, 1.0)
    safe_p = np.where(pos, p, 1.0)
    terms = np.where(pos & (q > 0), p * np.log(safe_p / safe_q), 0.0)
    out = terms.sum(axis=-1)
    out = np.where(violated, np.inf, out)
    return float(out) if out.ndim == 0 else out


def context_values(pi, reward, eta, pi_ref):
    """Per-context E_pi[reward] - KL(pi || pi_ref) / eta; ``-inf`` on support violation."""
    pi = np.asarray(pi, dtype=float)
    reward = np.asarray(reward, dtype=float)
    kl = np.atleast_1d(kl_divergence(pi, pi_ref))
    expected = np.sum(pi * reward, axis=-1)
    return np.where(np.isinf(kl), -np.inf, expected - kl / eta)


def objective(pi, R_star, eta, pi_ref, d0):
    """Exact J(pi) over a finite context set.

    Returns ``-inf`` when pi leaves the reference support at a context with
    positive probability under ``d0``.
    """
    d0 = np.asarray(d0, dtype=float)
    vals = context_values(pi, R_star, eta, pi_ref)
    live = d0 > 0
    if np.any(np.isinf(vals[live])):
        return -np.inf
    return float(np.dot(d0[live], vals[live]))


def optimal_objective(R_star, eta, pi_ref, d0):
    """max_pi J(pi) = E_{x ~ d0} (1/eta) log Z_{R*}(x)."""
    return float(np.dot(np.asarray(d0, dtype=float), log_partition(R_star, eta, pi_ref) / eta))


def soft_value(Q, eta, pi_ref, s=None):
    """(1/eta) log E_{a ~ pi_ref(.|s)} exp(eta * Q(s, a)); vector over states when ``s`` is None."""
    return log_partition(Q, eta, pi_ref, s) / eta


def delta_value(x, R, R_star, eta, pi_ref):
    """Delta(x, R) = -(1/eta) log Z_R(x) + E_{a ~ pi_R(.|x)} [R(x, a) - R*(x, a)]."""
    R = np.asarray(R, dtype=float)
    R_star = np.asarray(R_star, dtype=float)
    log_z = log_partition(R, eta, pi_ref, x)
    pi = gibbs_distribution(R, eta, pi_ref, x)
    return float(-log_z / eta + np.dot(pi, R[x] - R_star[x]))


def delta_gradient(x, R, R_star, eta, pi_ref):
    """Partial derivatives of Delta(x, R) with respect to R(x, .)."""
    R = np.asarray(R, dtype=float)
    R_star = np.asarray(R_star, dtype=float)
    pi = gibbs_distribution(R, eta, pi_ref, x)
    diff = R[x] - R_star[x]
    return eta * pi * diff - eta * pi * np.dot(pi, diff)


def delta_gap(R_opt, R_star, eta, pi_ref, d0):
    """E_{x ~ d0} [Delta(x, R_opt) - Delta(x, R*)]: the suboptimality of the Gibbs policy of R_opt."""
    n_ctx = len(d0)
    return float(sum(
        d0[x] * (delta_value(x, R_opt, R_star, eta, pi_ref) - delta_value(x, R_star, R_star, eta, pi_ref))
        for x in range(n_ctx) if d0[x] > 0
    ))
