#!/usr/bin/env python3
"""Benchmark the compiled local-SGD kernels against the numpy reference.

Times the raw kernels on representative shapes and one end-to-end simulator
run per backend. Run from the repository root:

    python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from fedsim._kernels import BACKEND, _reference

try:
    from fedsim._kernels import _local_sgd
except ImportError:
    _local_sgd = None


def time_callable(fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_kernels():
    rng = np.random.default_rng(0)
    rows = []
    for dim, steps, calls in [(5, 5, 20_000), (10, 5, 20_000), (50, 5, 4_000)]:
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        hessian = np.ascontiguousarray((q * rng.uniform(0.5, 3.0, dim)) @ q.T)
        center = rng.standard_normal(dim)
        w0 = rng.standard_normal(dim)
        noise = rng.standard_normal((steps, dim)) * 0.1

        def run_many(impl):
            def inner():
                for _ in range(calls):
                    impl.quad_local_sgd(hessian, center, w0, 0.01, steps, noise)

            return inner

        py = time_callable(run_many(_reference))
        cy = time_callable(run_many(_local_sgd)) if _local_sgd else None
        rows.append(("quad", dim, steps, calls, py, cy))

        def run_trig(impl):
            def inner():
                for _ in range(calls):
                    impl.trig_local_sgd(center, 2.0, 0.5, w0, 0.01, steps, noise)

            return inner

        py = time_callable(run_trig(_reference))
        cy = time_callable(run_trig(_local_sgd)) if _local_sgd else None
        rows.append(("trig", dim, steps, calls, py, cy))
    return rows


def bench_end_to_end():
    import fedsim

    inst = fedsim.make_quadratic_instance(
        20, 10, mu=1.0, smoothness=10.0, sigma=1.0, heterogeneity=2.0, seed=11
    )
    model = fedsim.BernoulliParticipation(np.linspace(0.3, 1.0, 20))
    sched = fedsim.StronglyConvexDecay(mu=1.0, smoothness=10.0, local_steps=5)

    def run_once():
        fedsim.run(fedsim.MifaSpec(), inst, model, sched, horizon=2_000, n_steps=5, seed=1)

    return time_callable(run_once, repeats=3)


def main():
    print(f"selected backend: {BACKEND}")
    if _local_sgd is None:
        print("compiled kernel unavailable; timing the numpy reference only\n")
    print(f"{'kernel':<6} {'dim':>4} {'steps':>5} {'calls':>7} {'numpy [s]':>10} {'cython [s]':>11} {'speedup':>8}")
    for kind, dim, steps, calls, py, cy in bench_kernels():
        if cy is None:
            print(f"{kind:<6} {dim:>4} {steps:>5} {calls:>7} {py:>10.4f} {'-':>11} {'-':>8}")
        else:
            print(f"{kind:<6} {dim:>4} {steps:>5} {calls:>7} {py:>10.4f} {cy:>11.4f} {py / cy:>7.1f}x")
    wall = bench_end_to_end()
    print(f"\nend-to-end 2000-round run (N=20, d=10, K=5, backend={BACKEND}): {wall:.2f} s")


if __name__ == "__main__":
    main()
