"""Command-line interface.

Subcommands:
  run <config>        run one experiment, write per-seed + aggregate CSV
  compare <config> --algorithms a,b,c
                      run several algorithms on identical availability
  tau-study <config>  Monte Carlo staleness bounds for the config's
                      bernoulli availability
  wait-study          Monte Carlo waiting time for subset sampling
  validate <config>   check a config without running it
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import availability as av
from .config import (
    ALGORITHM_NAMES,
    ConfigError,
    build_instance,
    build_model,
    build_schedule,
    load_config,
)
from .experiment import (
    compare_experiment,
    run_experiment,
    staleness_study,
    staleness_study_csv,
    waiting_time_study,
    write_text,
)


def _add_common(parser):
    parser.add_argument("--seed", type=int, default=None, help="override run.seeds with one seed")
    parser.add_argument("--out", default=None, help="override the output path base")
    parser.add_argument("--format", default="csv", choices=["csv"], help="output format")


def _apply_overrides(cfg, args):
    seeds = [args.seed] if args.seed is not None else None
    return seeds, args.out


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    seeds, out = _apply_overrides(cfg, args)
    result = run_experiment(cfg, out=out, seeds=seeds, base_dir=os.path.dirname(os.path.abspath(args.config)))
    if result.csv_path:
        print(f"wrote {result.csv_path}")
        print(f"wrote {result.aggregate_path}")
        print(f"wrote {result.meta_path}")
    diverged = [s for s, res in result.per_seed.items() if res.diverged]
    if diverged:
        print(f"warning: diverged seeds {diverged} (partial trajectories)")
    return 0


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    names = [name.strip() for name in args.algorithms.split(",") if name.strip()]
    for name in names:
        if name not in ALGORITHM_NAMES:
            print(f"error: unknown algorithm {name!r}", file=sys.stderr)
            return 2
    seeds, out = _apply_overrides(cfg, args)
    if seeds is not None:
        cfg = dict(cfg)
        cfg["run"] = dict(cfg["run"], seeds=seeds)
    out = out if out is not None else cfg["run"].get("out")
    if not out:
        print("error: compare needs an output path (run.out or --out)", file=sys.stderr)
        return 2
    results = compare_experiment(
        cfg, names, out=out, base_dir=os.path.dirname(os.path.abspath(args.config))
    )
    for name, res in results.items():
        print(f"wrote {res.csv_path}")
    return 0


def cmd_tau_study(args) -> int:
    cfg = load_config(args.config)
    instance = build_instance(cfg)
    model = build_model(cfg, instance, base_dir=os.path.dirname(os.path.abspath(args.config)))
    if not isinstance(model, av.BernoulliParticipation):
        print("error: tau-study needs a bernoulli availability section", file=sys.stderr)
        return 2
    seed = args.seed if args.seed is not None else int(cfg["run"]["seeds"][0])
    study = staleness_study(model.probs, int(cfg["run"]["horizon"]), args.traces, args.delta, seed)
    print(
        f"traces={args.traces} peak_bound={study['peak_bound']:.3f} "
        f"coverage={study['peak_bound_coverage']:.3f} "
        f"avg_to_shape_ratio={study['avg_to_shape_ratio']:.3f}"
    )
    if args.out:
        write_text(f"{args.out}.csv", staleness_study_csv(study))
        print(f"wrote {args.out}.csv")
    return 0


def cmd_wait_study(args) -> int:
    probs = np.array([float(p) for p in args.p.split(",")])
    study = waiting_time_study(args.devices, args.subset_size, probs, args.trials, args.seed or 0)
    print(
        f"mean_wait={study['mean_wait']:.6f} stderr={study['stderr']:.6f} "
        f"lower_bound={study['lower_bound']:.6f}"
    )
    if args.out:
        write_text(
            f"{args.out}.csv",
            "mean_wait,stderr,lower_bound\n"
            f"{study['mean_wait']:.17g},{study['stderr']:.17g},{study['lower_bound']:.17g}\n",
        )
        print(f"wrote {args.out}.csv")
    return 0


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    instance = build_instance(cfg)
    model = build_model(cfg, instance, base_dir=os.path.dirname(os.path.abspath(args.config)))
    seed = int(cfg["run"]["seeds"][0])
    schedule = build_schedule(cfg, instance, model, seed)
    c = instance.constants
    print(f"problem: {cfg['problem']['family']} n={instance.n_devices} d={instance.dim}")
    print(f"constants: L={c.smoothness:.6g} mu={c.strong_convexity:.6g} sigma={c.noise_std:.6g}")
    print(f"schedule: eta_1={schedule.eta(1):.6g} eta_T={schedule.eta(int(cfg['run']['horizon'])):.6g}")
    print("ok")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fedsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("config")
    _add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="run several algorithms on shared availability")
    p_cmp.add_argument("config")
    p_cmp.add_argument("--algorithms", required=True, help="comma-separated algorithm names")
    _add_common(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_tau = sub.add_parser("tau-study", help="Monte Carlo staleness bounds")
    p_tau.add_argument("config")
    p_tau.add_argument("--traces", type=int, default=200)
    p_tau.add_argument("--delta", type=float, default=0.01)
    _add_common(p_tau)
    p_tau.set_defaults(func=cmd_tau_study)

    p_wait = sub.add_parser("wait-study", help="Monte Carlo waiting time for subset sampling")
    p_wait.add_argument("--devices", type=int, required=True)
    p_wait.add_argument("--subset-size", type=int, required=True)
    p_wait.add_argument("--p", required=True, help="comma-separated per-device probabilities")
    p_wait.add_argument("--trials", type=int, default=10000)
    _add_common(p_wait)
    p_wait.set_defaults(func=cmd_wait_study)

    p_val = sub.add_parser("validate", help="check a config without running")
    p_val.add_argument("config")
    _add_common(p_val)
    p_val.set_defaults(func=cmd_validate)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
