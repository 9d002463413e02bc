"""The numba kernels and their plain-numpy fallback compute the same numbers."""

import os
import pickle
import subprocess
import sys
import textwrap

import numpy as np
import pytest

SCRIPT = textwrap.dedent("""
    import pickle, sys
    import numpy as np
    from mcidscore import _accel
    from mcidscore.decorrelation import solve_dantzig
    from mcidscore.estimation import fit_penalized
    from mcidscore.dataset import empirical_weights
    from mcidscore.inference import TestConfig, score_test
    from mcidscore.kernels import make_gaussian_order
    from mcidscore.risk import RiskContext, smoothed_hessian, smoothed_risk_and_gradient
    from mcidscore.simulation import DGPConfig, generate_dgp

    data, _ = generate_dgp(DGPConfig(n=300, d=15, s=3, seed=4))
    k4 = make_gaussian_order(4)
    ctx = RiskContext.from_dataset(data, empirical_weights(data), k4, 0.4)
    beta = np.linspace(-0.3, 0.3, 15)
    risk, grad = smoothed_risk_and_gradient(ctx, beta)
    rng = np.random.default_rng(0)
    a = rng.standard_normal((8, 5))
    out = {
        "backend": _accel.backend_name(),
        "sf": _accel.normal_sf(np.linspace(-9, 9, 37)),
        "risk": risk, "grad": grad, "hess": smoothed_hessian(ctx, beta),
        "fit": fit_penalized(ctx, 0.02).beta_hat,
        "admm": solve_dantzig(a.T @ a / 8 + 0.1 * np.eye(5), rng.standard_normal(5), 0.2, method="admm"),
        "stat": score_test(data, 1, TestConfig(seed=3)).statistic,
    }
    sys.stdout.buffer.write(pickle.dumps(out))
""")


def _run(flag):
    env = dict(os.environ, MCIDSCORE_NUMBA=flag)
    proc = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, check=False)
    assert proc.returncode == 0, proc.stderr.decode()
    return pickle.loads(proc.stdout)


@pytest.fixture(scope="module")
def both():
    return _run("1"), _run("0")


def test_backend_flag(both):
    jit, plain = both
    assert jit["backend"] == "numba" and plain["backend"] == "numpy"


@pytest.mark.parametrize("key", ["sf", "risk", "grad", "hess"])
def test_primitives_agree(both, key):
    jit, plain = both
    np.testing.assert_allclose(jit[key], plain[key], rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("key", ["fit", "admm", "stat"])
def test_pipelines_agree(both, key):
    jit, plain = both
    np.testing.assert_allclose(jit[key], plain[key], rtol=1e-8, atol=1e-10)
