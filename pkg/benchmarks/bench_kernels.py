#!/usr/bin/env python3
"""Time the hot kernels under the numba and the plain-numpy backend.

Each backend runs in its own interpreter because the flag is read at import.
Usage:  python3 benchmarks/bench_kernels.py [--n 800] [--d 100] [--repeat 20]
"""

import argparse
import json
import os
import subprocess
import sys
import textwrap

WORKER = textwrap.dedent("""
    import json, sys, time
    import numpy as np
    from mcidscore import _accel
    from mcidscore.dataset import empirical_weights
    from mcidscore.estimation import fit_penalized, default_lambda
    from mcidscore.inference import TestConfig, score_test
    from mcidscore.kernels import make_gaussian_order
    from mcidscore.risk import RiskContext, smoothed_gradient, smoothed_hessian
    from mcidscore.simulation import DGPConfig, generate_dgp

    n, d, repeat = map(int, sys.argv[1:4])
    data, beta = generate_dgp(DGPConfig(n=n, d=d, s=3, seed=1))
    ctx = RiskContext.from_dataset(data, empirical_weights(data), make_gaussian_order(2), n ** -0.2)
    lam = default_lambda(n, d, ctx.delta, 0.2)

    def clock(fn):
        fn()  # compile / warm caches
        t0 = time.perf_counter()
        for _ in range(repeat):
            fn()
        return (time.perf_counter() - t0) / repeat

    t0 = time.perf_counter()
    score_test(data, 1, TestConfig())
    first = time.perf_counter() - t0
    out = {
        "backend": _accel.backend_name(),
        "first_score_test_s": first,
        "gradient_ms": 1e3 * clock(lambda: smoothed_gradient(ctx, beta)),
        "hessian_ms": 1e3 * clock(lambda: smoothed_hessian(ctx, beta)),
        "fit_path_ms": 1e3 * clock(lambda: fit_penalized(ctx, lam)),
        "score_test_ms": 1e3 * clock(lambda: score_test(data, 1, TestConfig())),
    }
    print(json.dumps(out))
""")


def run(flag: str, n: int, d: int, repeat: int) -> dict:
    env = dict(os.environ, MCIDSCORE_NUMBA=flag)
    proc = subprocess.run([sys.executable, "-c", WORKER, str(n), str(d), str(repeat)],
                          env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=800)
    ap.add_argument("--d", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rows = [run(flag, args.n, args.d, args.repeat) for flag in ("1", "0")]
    keys = [k for k in rows[0] if k != "backend"]
    print(f"n={args.n} d={args.d} repeat={args.repeat}")
    print(f"{'measure':<22}{'numba':>12}{'numpy':>12}{'speedup':>10}")
    for k in keys:
        a, b = rows[0][k], rows[1][k]
        print(f"{k:<22}{a:>12.3f}{b:>12.3f}{b / a:>10.2f}")


if __name__ == "__main__":
    main()
