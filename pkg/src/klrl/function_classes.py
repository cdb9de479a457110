"""Function classes, least-squares fitting, confidence sets and uncertainty.

Two class families are supported:

* :class:`FiniteFunctionClass` -- an ordered list of tables over
  ``(context, action)``; uncertainty is the class-relative ratio
  ``|R1(z) - R2(z)| / sqrt(lam + sum_i (R1 - R2)(z_i)^2)`` maximized over pairs
  in the confidence set.
* :class:`LinearFunctionClass` -- ``theta @ phi(x, a)`` clipped to ``[0, 1]``;
  uncertainty is the elliptical norm ``||phi||_{Sigma^-1}`` with
  ``Sigma = sum phi phi^T + (lam / B) I``.

The functional API (:func:`erm_fit`, :func:`confidence_set`,
:func:`uncertainty`) recomputes everything from a :class:`Dataset`. The
algorithms use :class:`FiniteLearner` / :class:`LinearLearner`, which keep
incremental sufficient statistics and are checked against the functional API
in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from klrl.errors import ConfigError, InvalidInputError

REINVERT_EVERY = 512


@dataclass
class FiniteFunctionClass:
    members: np.ndarray  # (N, n_contexts, n_actions)

    def __post_init__(self):
        m = np.asarray(self.members, dtype=float)
        if m.ndim != 3 or m.shape[0] < 1:
            raise InvalidInputError(f"members must have shape (N, X, A) with N >= 1, got {m.shape}")
        if not np.all(np.isfinite(m)) or np.any(m < 0) or np.any(m > 1):
            raise InvalidInputError("class members must take values in [0, 1]")
        self.members = m

    @property
    def size(self):
        return self.members.shape[0]

    @property
    def table_shape(self):
        return self.members.shape[1:]

    def evaluate(self, handle):
        return self.members[handle]


@dataclass
class LinearFunctionClass:
    """theta^T phi(x, a) with ||theta|| <= norm_bound, clipped to [0, 1].

    Features are rescaled at construction so that every ``||phi(x, a)|| <= 1``.
    ``cardinality`` is the effective class size fed to the confidence radius.
    """

    features: np.ndarray  # (n_contexts, n_actions, d)
    norm_bound: float = 1.0
    cardinality: float = 10.0
    feature_scale: float = field(default=1.0, init=False)

    def __post_init__(self):
        phi = np.asarray(self.features, dtype=float)
        if phi.ndim != 3:
            raise InvalidInputError(f"features must have shape (X, A, d), got {phi.shape}")
        if not self.norm_bound > 0:
            raise InvalidInputError("norm_bound must be positive")
        if self.cardinality < 1:
            raise InvalidInputError("cardinality must be >= 1")
        top = np.linalg.norm(phi, axis=-1).max()
        self.feature_scale = 1.0 / top if top > 1.0 else 1.0
        self.features = phi * self.feature_scale

    @property
    def dim(self):
        return self.features.shape[-1]

    @property
    def size(self):
        return self.cardinality

    @property
    def table_shape(self):
        return self.features.shape[:2]

    @property
    def ridge(self):
        return 1.0 / self.norm_bound

    def evaluate(self, theta):
        return np.clip(self.features @ np.asarray(theta, dtype=float), 0.0, 1.0)


def onehot_class(n_contexts, n_actions, norm_bound=None, cardinality=10.0):
    """Tabular class as a one-hot linear class; any table in [0,1] is representable."""
    d = n_contexts * n_actions
    phi = np.eye(d).reshape(n_contexts, n_actions, d)
    if norm_bound is None:
        norm_bound = math.sqrt(d)
    return LinearFunctionClass(phi, norm_bound=norm_bound, cardinality=cardinality)


@dataclass
class Dataset:
    """Ordered (context, action, target) records in acquisition order."""

    contexts: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    targets: list = field(default_factory=list)

    def append(self, x, a, target):
        if not math.isfinite(target):
            raise InvalidInputError("targets must be finite")
        self.contexts.append(int(x))
        self.actions.append(int(a))
        self.targets.append(float(target))

    def __len__(self):
        return len(self.targets)

    def arrays(self):
        return (np.asarray(self.contexts, dtype=int), np.asarray(self.actions, dtype=int),
                np.asarray(self.targets, dtype=float))


def erm_fit(cls, data, lam=1.0):
    """Least-squares fit: member index (finite) or ridge weights (linear)."""
    xs, acts, ys = data.arrays()
    if isinstance(cls, FiniteFunctionClass):
        if len(ys) == 0:
            return 0
        preds = cls.members[:, xs, acts]
        losses = np.sum((preds - ys) ** 2, axis=1)
        return int(np.argmin(losses))
    phi = cls.features[xs, acts] if len(ys) else np.zeros((0, cls.dim))
    sigma = phi.T @ phi + lam * cls.ridge * np.eye(cls.dim)
    return np.linalg.solve(sigma, phi.T @ ys)


@dataclass
class ConfidenceSet:
    """Finite variant: ``indices`` plus pairwise history distances; linear: an ellipsoid."""

    cls: object
    lam: float
    beta: float
    indices: np.ndarray | None = None
    pair_sq: np.ndarray | None = None  # (N, N) sum_i (R_j - R_k)(z_i)^2 over the full class
    center: np.ndarray | None = None
    cov: np.ndarray | None = None
    cov_inv: np.ndarray | None = None

    @property
    def is_finite(self):
        return self.indices is not None


def pairwise_history(cls, data):
    xs, acts, _ = data.arrays()
    vals = cls.members[:, xs, acts]  # (N, n)
    diff = vals[:, None, :] - vals[None, :, :]
    return np.sum(diff ** 2, axis=-1)


def confidence_set(cls, erm, data, beta, lam, restrict=True):
    """Members within squared history distance ``beta^2 - lam`` of the fit.

    ``restrict=False`` keeps the entire finite class (the unrestricted
    uncertainty, useful for diagnostics).
    """
    if not lam > 0:
        raise ConfigError("lambda must be positive")
    if beta ** 2 < lam:
        raise ConfigError(f"beta^2 = {beta ** 2:g} < lambda = {lam:g}")
    if isinstance(cls, FiniteFunctionClass):
        pair_sq = pairwise_history(cls, data)
        if restrict:
            idx = np.flatnonzero(pair_sq[:, int(erm)] + lam <= beta ** 2)
        else:
            idx = np.arange(cls.size)
        return ConfidenceSet(cls, lam, beta, indices=idx, pair_sq=pair_sq)
    xs, acts, _ = data.arrays()
    phi = cls.features[xs, acts] if len(xs) else np.zeros((0, cls.dim))
    cov = phi.T @ phi + lam * cls.ridge * np.eye(cls.dim)
    return ConfidenceSet(cls, lam, beta, center=np.asarray(erm, dtype=float), cov=cov,
                         cov_inv=np.linalg.inv(cov))


def finite_uncertainty_table(members, indices, pair_sq, lam):
    """max over ordered pairs in ``indices`` of |R1 - R2| / sqrt(lam + pair_sq) at every (x, a)."""
    if len(indices) <= 1:
        return np.zeros(members.shape[1:])
    sub = members[indices]
    diff = np.abs(sub[:, None] - sub[None, :])
    denom = np.sqrt(lam + pair_sq[np.ix_(indices, indices)])
    return np.max(diff / denom[:, :, None, None], axis=(0, 1))


def elliptical_uncertainty_table(features, cov_inv):
    quad = np.einsum("xad,de,xae->xa", features, cov_inv, features)
    return np.sqrt(np.maximum(quad, 0.0))


def uncertainty_table(conf):
    if conf.is_finite:
        return finite_uncertainty_table(conf.cls.members, conf.indices, conf.pair_sq, conf.lam)
    return elliptical_uncertainty_table(conf.cls.features, conf.cov_inv)


def uncertainty(conf, x, a):
    """Uncertainty of (x, a) given the history baked into ``conf``."""
    if conf.is_finite:
        idx = conf.indices
        if len(idx) <= 1:
            return 0.0
        vals = conf.cls.members[idx, x, a]
        diff = np.abs(vals[:, None] - vals[None, :])
        denom = np.sqrt(conf.lam + conf.pair_sq[np.ix_(idx, idx)])
        return float(np.max(diff / denom))
    phi = conf.cls.features[x, a]
    return float(math.sqrt(max(phi @ conf.cov_inv @ phi, 0.0)))


def bonus(conf, x, a, beta=None):
    beta = conf.beta if beta is None else beta
    return min(1.0, beta * uncertainty(conf, x, a))


def bonus_table(uncertainties, beta):
    return np.minimum(1.0, beta * np.asarray(uncertainties, dtype=float))


def eluder_sum(uncertainties):
    """Running sum of min(1, U_t^2) along a stream of played-point uncertainties."""
    u = np.asarray(uncertainties, dtype=float)
    return np.cumsum(np.minimum(1.0, u ** 2))


def beta_schedule(N, T, H=1, delta=0.05, variant="bandit", scale=1.0):
    """Confidence radius.

    bandit: ``4 sqrt(log(N T / delta))``; mdp: ``4 sqrt(log(4 N T H / delta))``;
    both multiplied by ``scale`` (0 gives the greedy baseline).
    """
    if not 0 < delta < 1:
        raise ConfigError(f"delta must lie in (0, 1), got {delta}")
    if N < 1 or T < 1 or H < 1:
        raise ConfigError("N, T and H must be >= 1")
    if scale < 0:
        raise ConfigError("bonus scale must be nonnegative")
    if variant == "bandit":
        arg = N * T / delta
    elif variant == "mdp":
        arg = 4 * N * T * H / delta
    else:
        raise ConfigError(f"unknown beta variant {variant!r}")
    return scale * 4.0 * math.sqrt(math.log(arg))


def generalization_bound(N, T, delta, noise_scale=1.0):
    """In-sample ERM error bound 8 s^2 log(N T / delta) for s-sub-Gaussian noise."""
    return 8.0 * noise_scale ** 2 * math.log(N * T / delta)


class FiniteLearner:
    """Incremental least squares over a finite class.

    Keeps per-point counts, target sums and (optionally) next-state counts so
    that regression targets of the form ``y_i = target_i + V(next_i)`` can be
    refit for any ``V``. Pairwise history distances are updated per record.
    """

    def __init__(self, cls, lam=1.0, n_next=None):
        self.cls = cls
        self.lam = lam
        shape = cls.table_shape
        self.counts = np.zeros(shape)
        self.target_sum = np.zeros(shape)
        self.next_counts = None if n_next is None else np.zeros(shape + (n_next,))
        self.pair_sq = np.zeros((cls.size, cls.size))
        self.n = 0

    def add(self, x, a, target, next_state=None):
        self.counts[x, a] += 1
        self.target_sum[x, a] += target
        if self.next_counts is not None:
            self.next_counts[x, a, next_state] += 1
        v = self.cls.members[:, x, a]
        self.pair_sq += (v[:, None] - v[None, :]) ** 2
        self.n += 1

    def fit(self, next_values=None):
        if self.n == 0:
            return 0
        y_sum = self.target_sum
        if next_values is not None and self.next_counts is not None:
            y_sum = y_sum + self.next_counts @ np.asarray(next_values, dtype=float)
        m = self.cls.members
        losses = np.sum(self.counts * m ** 2 - 2.0 * m * y_sum, axis=(1, 2))
        return int(np.argmin(losses))

    def table(self, handle):
        return self.cls.members[handle]

    def confidence_indices(self, erm, beta, restrict=True):
        if not restrict or beta == math.inf:
            return np.arange(self.cls.size)
        return np.flatnonzero(self.pair_sq[:, erm] + self.lam <= beta ** 2)

    def uncertainty_table(self, erm, beta, restrict=True):
        idx = self.confidence_indices(erm, beta, restrict)
        return finite_uncertainty_table(self.cls.members, idx, self.pair_sq, self.lam)


class LinearLearner:
    """Ridge regression with a rank-one updated inverse covariance.

    The inverse is rebuilt from the accumulated Gram matrix every
    ``REINVERT_EVERY`` records to bound drift. ``clip=False`` leaves fitted
    values unclipped, for value regression whose targets exceed 1.
    """

    def __init__(self, cls, lam=1.0, n_next=None, clip=True):
        self.cls = cls
        self.lam = lam
        self.clip = clip
        d = cls.dim
        self.reg = lam * cls.ridge
        self.gram = np.zeros((d, d))
        self.cov_inv = np.eye(d) / self.reg
        self.phi_target = np.zeros(d)
        self.phi_next = None if n_next is None else np.zeros((d, n_next))
        self.n = 0

    def add(self, x, a, target, next_state=None):
        phi = self.cls.features[x, a]
        self.gram += np.outer(phi, phi)
        self.phi_target += target * phi
        if self.phi_next is not None:
            self.phi_next[:, next_state] += phi
        self.n += 1
        if self.n % REINVERT_EVERY == 0:
            self.cov_inv = np.linalg.inv(self.gram + self.reg * np.eye(self.cls.dim))
        else:
            u = self.cov_inv @ phi
            self.cov_inv -= np.outer(u, u) / (1.0 + phi @ u)

    def fit(self, next_values=None):
        rhs = self.phi_target
        if next_values is not None and self.phi_next is not None:
            rhs = rhs + self.phi_next @ np.asarray(next_values, dtype=float)
        return self.cov_inv @ rhs

    def table(self, handle):
        if self.clip:
            return self.cls.evaluate(handle)
        return self.cls.features @ handle

    def uncertainty_table(self, erm=None, beta=None, restrict=True):
        return elliptical_uncertainty_table(self.cls.features, self.cov_inv)


def make_learner(cls, lam=1.0, n_next=None, clip=True):
    if isinstance(cls, FiniteFunctionClass):
        return FiniteLearner(cls, lam, n_next)
    if isinstance(cls, LinearFunctionClass):
        return LinearLearner(cls, lam, n_next, clip)
    raise InvalidInputError(f"unsupported function class {type(cls).__name__}")
