"""Compare the compiled and pure-Python block coordinate descent kernels.

Run ``python benchmarks/bench_kernels.py``. Each case projects the same
posterior draws with both backends, checks the answers agree, and reports
the median wall time per draw. The active-set polish is disabled so both
backends do identical sweeps.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from sparseproj import _kernel
from sparseproj.design import GroupSpec, build_grouped_design, standardize
from sparseproj.penalties import PenaltyConfig
from sparseproj.projection import GramProblem, solve_gram

CASES = [
    # (n, K, group size, penalty, lambda)
    (100, 10, 5, "gl", 0.2),
    (100, 50, 10, "gl", 0.1),
    (500, 50, 10, "gl", 0.05),
    (500, 50, 10, "gscad", 0.05),
]


def _case(n, K, size, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, K * size))
    d = standardize(build_grouped_design(X, GroupSpec.from_sizes([size] * K)))
    beta = np.zeros(d.p)
    beta[: 5 * size] = rng.uniform(0.5, 2.0, 5 * size) * rng.choice([-1, 1], 5 * size)
    prob = GramProblem.from_design(d)
    draws = beta + 0.1 * rng.standard_normal((8, d.p))
    return prob, draws


def _time(prob, draws, pen, backend, repeats):
    times, out = [], None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = [solve_gram(prob, prob.S @ b, pen, backend=backend, polish=False) for b in draws]
        times.append((time.perf_counter() - t0) / len(draws))
    return statistics.median(times), out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)
    try:
        _kernel.get_backend("cython")
    except ImportError:
        print("compiled kernel not built; run `pip install -e . --no-build-isolation` first")
        return 1
    print(f"{'n':>5} {'p':>5} {'penalty':>7} {'sweeps':>7} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for n, K, size, kind, lam in CASES:
        prob, draws = _case(n, K, size)
        pen = PenaltyConfig(kind, lam)
        t_py, r_py = _time(prob, draws, pen, "python", args.repeats)
        t_cy, r_cy = _time(prob, draws, pen, "cython", args.repeats)
        gap = max(float(np.max(np.abs(a.beta_star - b.beta_star))) for a, b in zip(r_py, r_cy))
        if gap > 1e-10:
            print(f"warning: backends differ by {gap:.2e}")
        sweeps = int(np.mean([r.iterations for r in r_cy]))
        print(f"{n:>5} {K * size:>5} {kind:>7} {sweeps:>7} {1e3 * t_py:>10.2f} {1e3 * t_cy:>10.2f} {t_py / t_cy:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
