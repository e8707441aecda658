"""Experiment orchestration: multi-seed runs, CSV emission, aggregation,
rate-slope fitting, and the waiting-time / staleness Monte Carlo studies.

CSV schema (per-seed file): seed,t,t_prime,f_gap,avg_gap,grad_norm_sq,
min_grad_norm_sq,tau_bar,tau_max,oracle_calls. Floats are printed with 17
significant digits; unavailable metrics are empty fields. The aggregate file
keys rows by wall-round and adds _mean/_stderr suffixed columns plus a
``partial`` flag set when any seed diverged.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import availability as av
from .algorithms import Runner
from .config import (
    build_algo_spec,
    build_instance,
    build_model,
    build_schedule,
    validate_config,
)
from .records import RunResult
from .schedules import StronglyConvexDecay
from ._kernels import BACKEND

CSV_COLUMNS = (
    "seed",
    "t",
    "t_prime",
    "f_gap",
    "avg_gap",
    "grad_norm_sq",
    "min_grad_norm_sq",
    "tau_bar",
    "tau_max",
    "oracle_calls",
)
_METRIC_COLUMNS = CSV_COLUMNS[2:]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _atomic_write(path: str, text: str) -> None:
    # partial results never overwrite complete outputs
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def rows_to_csv(per_seed: dict) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for seed in sorted(per_seed):
        for row in per_seed[seed].rounds:
            lines.append(
                ",".join(
                    (
                        str(seed),
                        str(row.t),
                        str(row.t_prime),
                        _fmt(row.f_gap),
                        _fmt(row.avg_gap),
                        _fmt(row.grad_norm_sq),
                        _fmt(row.min_grad_norm_sq),
                        _fmt(row.tau_bar),
                        str(row.tau_max),
                        str(row.oracle_calls),
                    )
                )
            )
    return "\n".join(lines) + "\n"


def aggregate_to_csv(per_seed: dict) -> str:
    header = ["t"]
    for col in _METRIC_COLUMNS:
        header += [f"{col}_mean", f"{col}_stderr"]
    header.append("partial")
    lines = [",".join(header)]

    results = [per_seed[seed] for seed in sorted(per_seed)]
    partial = any(res.diverged for res in results)
    n_rounds = min(len(res.rounds) for res in results)
    for idx in range(n_rounds):
        cells = [str(results[0].rounds[idx].t)]
        for col in _METRIC_COLUMNS:
            values = [getattr(res.rounds[idx], col) for res in results]
            if any(v is None for v in values):
                cells += ["", ""]
                continue
            values = np.asarray(values, dtype=np.float64)
            mean = float(values.mean())
            stderr = 0.0 if len(values) < 2 else float(values.std(ddof=1) / math.sqrt(len(values)))
            cells += [_fmt(mean), _fmt(stderr)]
        cells.append("1" if partial else "0")
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


@dataclass
class ExperimentResult:
    per_seed: dict           # seed -> RunResult
    csv_path: str | None
    aggregate_path: str | None
    meta_path: str | None


def run_experiment(
    cfg: dict,
    out: str | None = None,
    seeds=None,
    base_dir: str = ".",
    algorithm: str | None = None,
) -> ExperimentResult:
    """Run every seed of a config independently and write CSV outputs.

    ``out`` overrides run.out; ``seeds`` overrides run.seeds; ``algorithm``
    overrides the algorithm name (used by ``compare``). Omitting all output
    paths keeps results in memory only.
    """
    validate_config(cfg)
    run_cfg = cfg["run"]
    horizon = int(run_cfg["horizon"])
    n_steps = int(run_cfg["local_steps"])
    seeds = [int(s) for s in (seeds if seeds is not None else run_cfg["seeds"])]
    out = out if out is not None else run_cfg.get("out")

    instance = build_instance(cfg)
    model = build_model(cfg, instance, base_dir=base_dir)
    algo_spec = build_algo_spec(cfg, model, name=algorithm)

    per_seed: dict[int, RunResult] = {}
    schedule_echo = None
    for seed in seeds:
        schedule = build_schedule(cfg, instance, model, seed)
        runner = Runner(algo_spec, instance, model, schedule, horizon, n_steps, seed)
        per_seed[seed] = runner.run()
        if schedule_echo is None:
            schedule_echo = _schedule_echo(schedule, horizon)

    csv_path = aggregate_path = meta_path = None
    if out:
        csv_path = f"{out}.csv"
        aggregate_path = f"{out}_aggregate.csv"
        meta_path = f"{out}_meta.json"
        _atomic_write(csv_path, rows_to_csv(per_seed))
        _atomic_write(aggregate_path, aggregate_to_csv(per_seed))
        meta = {
            "config": cfg,
            "algorithm": algo_spec.name,
            "seeds": seeds,
            "backend": BACKEND,
            "schedule": schedule_echo,
            "diverged_seeds": [s for s, res in per_seed.items() if res.diverged],
            "horizon_conditions": _horizon_conditions(cfg, instance, model, horizon, n_steps, seeds[0]),
        }
        _atomic_write(meta_path, json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return ExperimentResult(per_seed, csv_path, aggregate_path, meta_path)


def _schedule_echo(schedule, horizon: int) -> dict:
    echo = {"variant": type(schedule).__name__, "eta_1": schedule.eta(1), "eta_T": schedule.eta(horizon)}
    if isinstance(schedule, StronglyConvexDecay):
        echo["shift"] = schedule.shift
    return echo


def _horizon_conditions(cfg, instance, model, horizon, n_steps, seed) -> dict | None:
    """Record (without enforcing) the minimum-horizon conditions attached to
    the non-convex constant-step guarantee."""
    if cfg["schedule"]["variant"] != "nonconvex_constant":
        return None
    c = instance.constants
    n = instance.n_devices
    sampler = model.sampler(seed)
    tracker = av.StalenessTracker(n)
    for t in range(1, horizon + 1):
        tracker.update(sampler.active_set(t))
    stats = tracker.stats()
    peak = stats.peak
    lhs = float(horizon)
    return {
        "T >= 32 alpha L N K": lhs >= 32.0 * c.alpha * c.smoothness * n * n_steps,
        "T >= 16 L N K": lhs >= 16.0 * c.smoothness * n * n_steps,
        "T >= 8 K N peak^2 (L^2 + rho delta) / L": lhs
        >= 8.0
        * n_steps
        * n
        * peak**2
        * (c.smoothness**2 + c.hessian_lipschitz * c.noise_bound)
        / c.smoothness,
        "measured_staleness_peak": peak,
    }


def compare_experiment(cfg: dict, algorithms, out: str | None = None, base_dir: str = ".") -> dict:
    """Run several algorithms on identical availability streams.

    Every algorithm sees the same realized active sets per seed because
    participation draws depend only on (seed, device), never the algorithm.
    Returns {algorithm: ExperimentResult}; CSVs are written per algorithm as
    <out>_<algorithm>.csv.
    """
    results = {}
    for name in algorithms:
        algo_out = f"{out}_{name}" if out else None
        results[name] = run_experiment(cfg, out=algo_out, base_dir=base_dir, algorithm=name)
    return results


def fit_rate_slope(stream, window) -> float:
    """Least-squares slope of log(value) against log(t) inside the window.

    ``stream`` is an iterable of (t, value) pairs; the window is an
    inclusive [t_lo, t_hi] interval. Requires at least 10 points, all with
    positive values.
    """
    t_lo, t_hi = window
    points = [(t, v) for t, v in stream if t_lo <= t <= t_hi]
    if len(points) < 10:
        raise ValueError(f"need at least 10 points in the window, found {len(points)}")
    ts = np.array([p[0] for p in points], dtype=np.float64)
    vs = np.array([p[1] for p in points], dtype=np.float64)
    if np.any(vs <= 0.0):
        raise ValueError("values must be positive within the window")
    slope, _ = np.polyfit(np.log(ts), np.log(vs), 1)
    return float(slope)


def waiting_time_study(n_devices: int, subset_size: int, probs, trials: int, seed: int) -> dict:
    """Monte Carlo wall-rounds per global update for subset-sampling
    aggregation, against the lower bound (S/N) / p_min.

    A window's wait is the number of rounds until every selected device has
    been active at least once, with device i active each round independently
    with probability p_i (so per-device waits are geometric).
    """
    probs = np.asarray(probs, dtype=np.float64)
    if len(probs) != n_devices:
        raise ValueError("need one probability per device")
    if np.any(probs <= 0.0) or np.any(probs > 1.0):
        raise ValueError("each probability must lie in (0, 1]")
    if not 1 <= subset_size <= n_devices:
        raise ValueError("subset size must lie in [1, n_devices]")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x3A17]))
    waits = np.empty(trials)
    for trial in range(trials):
        chosen = rng.choice(n_devices, size=subset_size, replace=False)
        waits[trial] = rng.geometric(probs[chosen]).max()
    mean_wait = float(waits.mean())
    stderr = 0.0 if trials < 2 else float(waits.std(ddof=1) / math.sqrt(trials))
    lower = (subset_size / n_devices) / float(probs.min())
    return {"mean_wait": mean_wait, "stderr": stderr, "lower_bound": lower}


def staleness_study(probs, horizon: int, n_traces: int, delta: float, seed: int) -> dict:
    """Monte Carlo check of the independent-participation staleness bounds.

    Simulates ``n_traces`` traces, comparing each realized staleness peak
    against the high-probability bound and the realized average staleness
    against its leading shape factor mean_i 1/p_i.
    """
    probs = np.asarray(probs, dtype=np.float64)
    model = av.BernoulliParticipation(probs)
    bounds = av.bernoulli_staleness_bounds(probs, horizon, delta)
    rows = []
    for trace_id in range(n_traces):
        sampler = model.sampler(seed + trace_id)
        tracker = av.StalenessTracker(model.n_devices)
        for t in range(1, horizon + 1):
            tracker.update(sampler.active_set(t))
        stats = tracker.stats()
        rows.append(
            {
                "trace": trace_id,
                "tau_max": stats.peak,
                "tau_bar": stats.avg,
                "tau_max_bound": bounds.peak_bound,
                "tau_bar_shape": bounds.avg_shape,
            }
        )
    peak_cover = float(np.mean([r["tau_max"] <= r["tau_max_bound"] for r in rows]))
    avg_ratio = float(np.mean([r["tau_bar"] / r["tau_bar_shape"] for r in rows]))
    return {
        "rows": rows,
        "peak_bound_coverage": peak_cover,
        "avg_to_shape_ratio": avg_ratio,
        "peak_bound": bounds.peak_bound,
        "avg_shape": bounds.avg_shape,
    }


def staleness_study_csv(study: dict) -> str:
    lines = ["trace,tau_max,tau_bar,tau_max_bound,tau_bar_shape"]
    for r in study["rows"]:
        lines.append(
            f"{r['trace']},{r['tau_max']},{_fmt(r['tau_bar'])},"
            f"{_fmt(r['tau_max_bound'])},{_fmt(r['tau_bar_shape'])}"
        )
    return "\n".join(lines) + "\n"


def write_text(path: str, text: str) -> None:
    _atomic_write(path, text)
