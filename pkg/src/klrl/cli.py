"""Command-line entry point: ``klrl <subcommand> [flags]``.

Exit codes: 0 success, 1 configuration or usage error, 2 a theory check failed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys

import numpy as np

from klrl import harness, theory_checks
from klrl.bandit import NoiseSpec, finite_class_with_truth, kl_ucb_run, make_bandit_instance
from klrl.errors import ConfigError, InstanceError, InvalidInputError

EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _seed_list(text):
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("seed list is empty")
    return seeds


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--seed", type=_seed_list, help="seed or comma-separated seeds")
    common.add_argument("--out", help="output directory")
    common.add_argument("--scale-bonus", type=float, dest="scale_bonus", help="bonus scale factor (0 = greedy)")
    common.add_argument("--quiet", action="store_true")

    parser = _Parser(prog="klrl", description="KL-regularized optimistic bandits and MDPs")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in (("run-bandit", "run KL-UCB on a contextual bandit"),
                       ("run-mdp", "run KL-LSVI-UCB on a finite-horizon MDP"),
                       ("sweep", "run the config's mode over all seeds")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--T", type=int, help="rounds / episodes (overrides the config)")
        p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p = sub.add_parser("check-theory", parents=[common], help="run every numerical theory check")
    p.add_argument("--trials", type=int, default=100, help="instances for the gradient check")
    p = sub.add_parser("fit", parents=[common], help="fit log and sqrt models to a trace CSV")
    p.add_argument("--in", dest="infile", required=True, help="trace CSV")
    p.add_argument("--burn-in", dest="burn_in", type=int, default=harness.DEFAULT_BURN_IN)
    return parser


def _load(args, mode):
    cfg = harness.load_config(args.config) if args.config else harness.ExperimentConfig()
    e = cfg.experiment
    if mode is not None:
        if cfg.instance.reward is None and args.config is None and mode == "bandit":
            cfg.instance.reward = ((0.2, 0.8),)
        if mode == "mdp" and args.config is None:
            cfg.cls.kind = "onehot"
            cfg.instance.noise = "none"
        e.mode = mode
    if args.seed is not None:
        e.seeds = tuple(args.seed)
    if args.out is not None:
        e.out = args.out
    if args.scale_bonus is not None:
        e.bonus_scale = args.scale_bonus
    if getattr(args, "T", None) is not None:
        e.T = args.T
    return cfg.validate()


def _run(args, mode):
    cfg = _load(args, mode)
    if cfg.experiment.mode == "theory":
        return _check_theory(args, seed=cfg.experiment.seeds[0], out=cfg.experiment.out)

    def progress(seed, trace):
        if not args.quiet:
            print(f"seed {seed}: T={len(trace)} regret={trace.cumulative[-1]:.6g} "
                  f"optimism_violations={int(trace.optimism_violated.sum())}")

    result = harness.run_sweep(cfg, workers=args.workers, progress=progress)
    if not args.quiet:
        print(f"wrote {len(result.seed_paths)} seed file(s) and {result.mean_path}")
    return EXIT_OK


def theory_reports(seed=0, gradient_trials=100):
    reports = [
        theory_checks.gradient_check(gradient_trials, seed),
        theory_checks.u_lambda_check(200, 101, seed),
        theory_checks.third_moment_check(theory_checks.random_distributions(200, seed)),
    ]
    rng = np.random.default_rng(seed)
    R_star = rng.uniform(0, 1, (3, 4))
    cls, truth = finite_class_with_truth(R_star, 10, rng)
    reports.append(theory_checks.generalization_check(cls, truth, NoiseSpec("gaussian", 0.5),
                                                      400, 100, 0.05, seed))
    inst = make_bandit_instance(R_star, 1.0)
    run = kl_ucb_run(inst, cls, 200, seed=seed, keep_policies=True)
    resid = theory_checks.online_to_batch_residual(run.policies, inst, run.trace.per_round_gap)
    reports.append(theory_checks.CheckReport("online_to_batch", 1, resid, 1e-12))
    return reports


def _check_theory(args, seed=None, out=None):
    seeds = args.seed or [0]
    seed = seeds[0] if seed is None else seed
    reports = theory_reports(seed, getattr(args, "trials", 100))
    if not args.quiet:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(theory_checks.REPORT_FIELDS)
        for r in reports:
            w.writerow(r.row())
    out = args.out or out
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "theory.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(theory_checks.REPORT_FIELDS)
            for r in reports:
                w.writerow(r.row())
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK


def _fit(args):
    cols = harness.read_trace_csv(args.infile)
    if "cumulative_regret" not in cols:
        raise ConfigError(f"{args.infile} has no cumulative_regret column")
    result = harness.fit_regret_models(cols["cumulative_regret"], args.burn_in)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(harness.FitResult.HEADER)
    w.writerow(result.row())
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "run-bandit":
            return _run(args, "bandit")
        if args.command == "run-mdp":
            return _run(args, "mdp")
        if args.command == "sweep":
            return _run(args, None)
        if args.command == "check-theory":
            return _check_theory(args)
        return _fit(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, InstanceError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        print("interrupted; partial results were written", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
