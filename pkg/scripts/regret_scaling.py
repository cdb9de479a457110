"""Run a config's seed sweep and report the log/sqrt fit of the mean regret curve.

    python3 scripts/regret_scaling.py configs/bandit_log_scaling.cfg --t-lo 100
    python3 scripts/regret_scaling.py configs/mdp_log_scaling.cfg --t-lo 100
"""

import argparse
import time

from klrl import harness


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--t-lo", type=int, default=100, help="denominator round of the regret ratio")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out")
    args = ap.parse_args()

    cfg = harness.load_config(args.config)
    start = time.perf_counter()
    result = harness.run_sweep(cfg, workers=args.workers, out=args.out)
    mean = harness.read_trace_csv(result.mean_path)["cumulative_regret"]
    fit = harness.fit_regret_models(mean)
    T = cfg.experiment.T
    print(f"seeds={len(result.traces)} T={T} elapsed={time.perf_counter() - start:.1f}s")
    for t in sorted({10, args.t_lo, T // 10, T // 2, T}):
        print(f"  mean regret at t={t}: {mean[t - 1]:.4f}")
    print(f"  ratio R({T})/R({args.t_lo}) = {harness.regret_ratio(mean, T, args.t_lo):.3f}")
    print(f"  log fit a={fit.a:.4f} rss={fit.rss_log:.4g}; sqrt fit c={fit.c:.4f} rss={fit.rss_sqrt:.4g}")
    print(f"  preferred: {fit.preferred}")
    violated = sum(bool(tr.optimism_violated.any()) for tr in result.traces.values())
    print(f"  runs with an optimism violation: {violated}/{len(result.traces)}")


if __name__ == "__main__":
    main()
