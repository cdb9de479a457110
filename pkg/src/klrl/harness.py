"""Experiment configuration, seeded sweeps, CSV traces and regret-curve fits.

Config files are INI-style (``[section]`` headers, ``key = value`` lines)
with three sections:

``[experiment]``
    mode (bandit | mdp | theory), T, seeds, delta, lam, bonus_scale, out
``[instance]``
    contexts (bandit) or states (mdp), actions, horizon, eta, noise,
    noise_sigma, reward (explicit bandit table, rows separated by ``;``),
    instance_seed, uniform_ref
``[class]``
    kind (finite | linear | onehot | closed_finite), members, deceptive,
    dim, norm_bound, cardinality, bonus_class_size, distractors, class_seed

Unknown sections or keys are rejected. See ``configs/`` for examples.
"""

from __future__ import annotations

import configparser
import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from klrl.bandit import (
    NoiseSpec,
    RegretTrace,
    finite_class_with_truth,
    kl_ucb_run,
    make_bandit_instance,
)
from klrl.errors import ConfigError
from klrl.function_classes import (
    LinearFunctionClass,
    beta_schedule,
    onehot_class,
)
from klrl.mdp import closed_finite_classes, kl_lsvi_ucb_run, random_mdp

BANDIT_COLUMNS = ("t", "per_round_gap", "cumulative_regret", "bonus_at_play",
                  "uncertainty_at_play", "eluder_sum", "optimism_violated")
MDP_COLUMNS = BANDIT_COLUMNS + ("sum_sq_bellman_error",)
DEFAULT_BURN_IN = 20


# ---------------------------------------------------------------- config


@dataclass
class ExperimentSection:
    mode: str = "bandit"
    T: int = 1000
    seeds: tuple = (0,)
    delta: float = 0.1
    lam: float = 1.0
    bonus_scale: float = 1.0
    out: str = "results"


@dataclass
class InstanceSection:
    contexts: int = 1
    states: int = 5
    actions: int = 2
    horizon: int = 3
    eta: float = 1.0
    noise: str = "gaussian"
    noise_sigma: float = 0.5
    reward: tuple | None = None
    instance_seed: int = 0
    uniform_ref: bool = True


@dataclass
class ClassSection:
    kind: str = "finite"
    members: int = 8
    deceptive: bool = False
    dim: int = 4
    norm_bound: float = 1.0
    cardinality: float = 10.0
    bonus_class_size: int = 1
    distractors: int = 2
    class_seed: int = 0


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    instance: InstanceSection = field(default_factory=InstanceSection)
    cls: ClassSection = field(default_factory=ClassSection)

    def validate(self):
        e, i, c = self.experiment, self.instance, self.cls
        checks = [
            (e.mode in ("bandit", "mdp", "theory"), "experiment.mode", "must be bandit, mdp or theory"),
            (e.T >= 1, "experiment.T", "must be >= 1"),
            (len(e.seeds) >= 1, "experiment.seeds", "must be nonempty"),
            (0 < e.delta < 1, "experiment.delta", "must lie in (0, 1)"),
            (e.lam > 0, "experiment.lam", "must be positive"),
            (e.bonus_scale >= 0, "experiment.bonus_scale", "must be nonnegative"),
            (i.eta > 0 and math.isfinite(i.eta), "instance.eta", "must be a positive finite real"),
            (i.contexts >= 1, "instance.contexts", "must be >= 1"),
            (i.states >= 1, "instance.states", "must be >= 1"),
            (i.actions >= 1, "instance.actions", "must be >= 1"),
            (i.horizon >= 1, "instance.horizon", "must be >= 1"),
            (i.noise in ("gaussian", "bernoulli", "none"), "instance.noise", "must be gaussian, bernoulli or none"),
            (0 <= i.noise_sigma <= 1, "instance.noise_sigma", "must lie in [0, 1]"),
            (c.kind in ("finite", "linear", "onehot", "closed_finite"), "class.kind",
             "must be finite, linear, onehot or closed_finite"),
            (c.members >= 1, "class.members", "must be >= 1"),
            (c.dim >= 1, "class.dim", "must be >= 1"),
            (c.norm_bound > 0, "class.norm_bound", "must be positive"),
            (c.cardinality >= 1, "class.cardinality", "must be >= 1"),
            (c.bonus_class_size >= 1, "class.bonus_class_size", "must be >= 1"),
            (c.distractors >= 0, "class.distractors", "must be >= 0"),
        ]
        for ok, name, msg in checks:
            if not ok:
                raise ConfigError(f"{name} {msg}")
        if e.mode == "bandit" and c.kind == "closed_finite":
            raise ConfigError("class.kind closed_finite is only available in mdp mode")
        if e.mode == "mdp" and c.kind in ("finite", "linear"):
            raise ConfigError("class.kind must be onehot or closed_finite in mdp mode")
        if c.deceptive and c.members < 2:
            raise ConfigError("class.members must be >= 2 for a deceptive class")
        if i.reward is not None:
            rows = {len(r) for r in i.reward}
            if len(rows) != 1:
                raise ConfigError("instance.reward rows must have equal length")
            if any(not 0 <= v <= 1 for r in i.reward for v in r):
                raise ConfigError("instance.reward values must lie in [0, 1]")
        return self

    def canonical(self):
        """Normalized config text; equal text implies equal runs per seed."""
        out = io.StringIO()
        for title, section in (("experiment", self.experiment), ("instance", self.instance),
                               ("class", self.cls)):
            out.write(f"[{title}]\n")
            for f in fields(section):
                out.write(f"{f.name} = {_format_value(getattr(section, f.name))}\n")
            out.write("\n")
        return out.getvalue()


def _format_value(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple) and v and isinstance(v[0], tuple):
        return "; ".join(", ".join(repr(float(x)) for x in row) for row in v)
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    return str(v)


def _parse_seeds(text):
    try:
        seeds = tuple(int(s) for s in str(text).replace(" ", "").split(",") if s != "")
    except ValueError as exc:
        raise ConfigError(f"experiment.seeds: cannot parse {text!r}") from exc
    return seeds


def _parse_reward(text):
    if text.strip().lower() in ("", "none"):
        return None
    try:
        return tuple(tuple(float(v) for v in row.split(",")) for row in text.split(";") if row.strip())
    except ValueError as exc:
        raise ConfigError(f"instance.reward: cannot parse {text!r}") from exc


def _coerce(section_name, f, raw):
    name = f"{section_name}.{f.name}"
    default = f.default if not callable(getattr(f, "default_factory", None)) else None
    try:
        if f.name == "seeds":
            return _parse_seeds(raw)
        if f.name == "reward":
            return _parse_reward(raw)
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from exc


_SECTIONS = {"experiment": ("experiment", ExperimentSection),
             "instance": ("instance", InstanceSection),
             "class": ("cls", ClassSection)}


def parse_config(text):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    cfg = ExperimentConfig()
    for title in parser.sections():
        if title not in _SECTIONS:
            raise ConfigError(f"unknown config section [{title}]")
        attr, kind = _SECTIONS[title]
        known = {f.name: f for f in fields(kind)}
        section = getattr(cfg, attr)
        for key, raw in parser.items(title):
            if key not in known:
                raise ConfigError(f"unknown config key {title}.{key}")
            setattr(section, key, _coerce(title, known[key], raw))
    return cfg.validate()


def load_config(path):
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


# ---------------------------------------------------------------- builders


def _noise(cfg):
    return NoiseSpec(cfg.instance.noise, cfg.instance.noise_sigma)


def build_bandit(cfg):
    """(instance, function class) for a bandit config; deterministic in its seeds.

    A ``linear`` class with no explicit reward draws a realizable R* = phi theta*.
    """
    i, c = cfg.instance, cfg.cls
    inst_rng = np.random.default_rng(i.instance_seed)
    class_rng = np.random.default_rng(c.class_seed)
    R_star = np.array(i.reward) if i.reward is not None else None
    shape = R_star.shape if R_star is not None else (i.contexts, i.actions)
    if c.kind == "linear":
        cls = LinearFunctionClass(class_rng.uniform(0, 1, shape + (c.dim,)), c.norm_bound, c.cardinality)
        if R_star is None:
            theta = inst_rng.uniform(0, 1, c.dim)
            theta *= min(1.0, c.norm_bound) / np.linalg.norm(theta)
            R_star = cls.features @ theta
    elif R_star is None:
        R_star = inst_rng.uniform(0, 1, shape)
    if c.kind == "onehot":
        cls = onehot_class(*shape, cardinality=c.cardinality)
    elif c.kind == "finite":
        cls, _ = finite_class_with_truth(R_star, c.members, class_rng, c.deceptive)
    pi_ref = None if i.uniform_ref else inst_rng.dirichlet(np.ones(shape[1]), size=shape[0])
    inst = make_bandit_instance(R_star, i.eta, pi_ref=pi_ref, noise=_noise(cfg))
    return inst, cls


def build_mdp(cfg):
    i, c = cfg.instance, cfg.cls
    inst = random_mdp(i.states, i.actions, i.horizon, i.eta, np.random.default_rng(i.instance_seed),
                      _noise(cfg), i.uniform_ref)
    if c.kind == "onehot":
        classes = [onehot_class(i.states, i.actions, cardinality=c.cardinality) for _ in range(i.horizon)]
    else:
        classes = closed_finite_classes(inst, c.distractors, np.random.default_rng(c.class_seed))
    return inst, classes


def check_lambda(cfg, size):
    e = cfg.experiment
    if e.bonus_scale == 0:
        return
    variant = "bandit" if e.mode == "bandit" else "mdp"
    H = cfg.instance.horizon if e.mode == "mdp" else 1
    beta = beta_schedule(size, e.T, H, e.delta, variant, e.bonus_scale)
    if e.lam > 0.5 * beta ** 2:
        raise ConfigError(f"experiment.lam = {e.lam:g} exceeds beta^2 / 2 = {0.5 * beta ** 2:g}")


def run_seed(cfg, seed):
    """One seeded run; returns its RegretTrace."""
    e = cfg.experiment
    if e.mode == "bandit":
        inst, cls = build_bandit(cfg)
        check_lambda(cfg, cls.size)
        return kl_ucb_run(inst, cls, e.T, e.delta, e.lam, seed, e.bonus_scale).trace
    if e.mode == "mdp":
        inst, classes = build_mdp(cfg)
        # the smallest radius across steps governs the lambda constraint
        check_lambda(cfg, min(c.size for c in classes))
        return kl_lsvi_ucb_run(inst, classes, e.T, e.delta, e.lam, seed, e.bonus_scale,
                               cfg.cls.bonus_class_size).trace
    raise ConfigError("experiment.mode theory has no regret trace")


# ---------------------------------------------------------------- CSV


def trace_columns(trace):
    cols = {
        "t": np.arange(1, len(trace) + 1),
        "per_round_gap": trace.per_round_gap,
        "cumulative_regret": trace.cumulative,
        "bonus_at_play": trace.bonus_at_play,
        "uncertainty_at_play": trace.uncertainty_at_play,
        "eluder_sum": trace.eluder_sum_curve,
        "optimism_violated": trace.optimism_violated.astype(int),
    }
    if trace.sum_sq_bellman_error is not None:
        cols["sum_sq_bellman_error"] = trace.sum_sq_bellman_error
    return cols


def _cell(name, v):
    if name == "t":
        return str(int(v))
    if name == "optimism_violated" and float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def write_columns(path, cols):
    names = list(cols)
    n = len(cols[names[0]])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for k in range(n):
            w.writerow([_cell(name, cols[name][k]) for name in names])


def write_trace_csv(path, trace):
    write_columns(path, trace_columns(trace))


def read_trace_csv(path):
    if not os.path.isfile(path):
        raise ConfigError(f"trace file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"empty trace file: {path}")
    header, body = rows[0], rows[1:]
    return {name: np.array([float(r[j]) for r in body]) for j, name in enumerate(header)}


def aggregate_columns(per_seed):
    """Column-wise arithmetic mean over a list of column dicts (``t`` is kept)."""
    names = list(per_seed[0])
    out = {"t": per_seed[0]["t"]}
    for name in names:
        if name != "t":
            out[name] = np.mean([cols[name] for cols in per_seed], axis=0)
    return out


# ---------------------------------------------------------------- sweeps


@dataclass
class SweepResult:
    traces: dict  # seed -> RegretTrace
    seed_paths: dict  # seed -> csv path
    mean_path: str | None
    interrupted: bool = False


def _seed_path(out, mode, seed):
    return os.path.join(out, f"{mode}_seed{seed}.csv")


def _run_seed_task(args):
    cfg, seed = args
    return seed, run_seed(cfg, seed)


def run_sweep(cfg, workers=1, out=None, progress=None):
    """Run every seed, writing ``<mode>_seed<k>.csv`` and ``<mode>_mean.csv``.

    Seed files are written as runs finish. On KeyboardInterrupt the mean over
    completed seeds is still written before the interrupt propagates.
    """
    cfg.validate()
    e = cfg.experiment
    if e.mode == "theory":
        raise ConfigError("experiment.mode theory is run by check-theory, not sweep")
    out = out or e.out
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.cfg"), "w", newline="", encoding="utf-8") as fh:
        fh.write(cfg.canonical())
    # build once up front so config errors surface before any work starts
    if e.mode == "bandit":
        check_lambda(cfg, build_bandit(cfg)[1].size)
    else:
        check_lambda(cfg, min(c.size for c in build_mdp(cfg)[1]))

    traces, paths = {}, {}

    def record(seed, trace):
        traces[seed] = trace
        paths[seed] = _seed_path(out, e.mode, seed)
        write_trace_csv(paths[seed], trace)
        if progress:
            progress(seed, trace)

    interrupted = False
    try:
        if workers > 1 and len(e.seeds) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for seed, trace in pool.map(_run_seed_task, [(cfg, s) for s in e.seeds]):
                    record(seed, trace)
        else:
            for seed in e.seeds:
                record(seed, run_seed(cfg, seed))
    except KeyboardInterrupt:
        interrupted = True
    mean_path = None
    if traces:
        ordered = [trace_columns(traces[s]) for s in e.seeds if s in traces]
        mean_path = os.path.join(out, f"{e.mode}_mean.csv")
        write_columns(mean_path, aggregate_columns(ordered))
    result = SweepResult(traces, paths, mean_path, interrupted)
    if interrupted:
        raise KeyboardInterrupt(result)
    return result


# ---------------------------------------------------------------- fits


@dataclass(frozen=True)
class FitResult:
    a: float
    b: float
    c: float
    d: float
    rss_log: float
    rss_sqrt: float
    preferred: str  # "log", "sqrt" or "inconclusive"
    burn_in: int

    HEADER = ("log_a", "log_b", "sqrt_c", "sqrt_d", "rss_log", "rss_sqrt", "preferred", "burn_in")

    def row(self):
        return [repr(self.a), repr(self.b), repr(self.c), repr(self.d),
                repr(self.rss_log), repr(self.rss_sqrt), self.preferred, str(self.burn_in)]


def fit_regret_models(curve, burn_in=DEFAULT_BURN_IN, rel_tie=1e-12):
    """Least-squares fits of ``a ln t + b`` and ``c sqrt t + d`` on ``t > burn_in``.

    ``curve[k]`` is cumulative regret at ``t = k + 1``. A curve that is
    constant on the fitted window, or residuals equal to within ``rel_tie``
    of the window's total variation, give ``preferred = "inconclusive"``.
    """
    y_all = np.asarray(curve, dtype=float)
    if y_all.ndim != 1 or len(y_all) <= burn_in + 10:
        raise ConfigError(f"trace length {len(y_all)} must exceed burn_in + 10 = {burn_in + 10}")
    if not np.all(np.isfinite(y_all)):
        raise ConfigError("trace contains non-finite values")
    t = np.arange(1, len(y_all) + 1, dtype=float)
    m = t > burn_in
    t, y = t[m], y_all[m]
    coefs, rss = [], []
    for basis in (np.log(t), np.sqrt(t)):
        design = np.column_stack([basis, np.ones_like(basis)])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        coefs.append(coef)
        rss.append(float(np.sum((design @ coef - y) ** 2)))
    tss = float(np.sum((y - y.mean()) ** 2))
    scale = max(1.0, float(np.max(np.abs(y))))
    if np.ptp(y) <= 1e-12 * scale or abs(rss[0] - rss[1]) <= rel_tie * tss:
        preferred = "inconclusive"
    else:
        preferred = "log" if rss[0] < rss[1] else "sqrt"
    return FitResult(float(coefs[0][0]), float(coefs[0][1]), float(coefs[1][0]), float(coefs[1][1]),
                     rss[0], rss[1], preferred, burn_in)


def regret_ratio(curve, t_hi, t_lo):
    curve = np.asarray(curve, dtype=float)
    return float(curve[t_hi - 1] / curve[t_lo - 1])

