import itertools

import numpy as np
import pytest

from conftest import context, random_dataset
from mcidscore.decorrelation import (
    DantzigError, dantzig_residual, decorrelation_from_hessian, decorrelation_vector, default_lambda_prime,
    project_psd, solve_dantzig, transform_matrix,
)


def vertex_oracle(h_gg, h_gt, lam):
    """Exact minimum of ``||w||_1`` subject to ``|h_gt - h_gg w| <= lam`` by enumeration.

    Within each orthant the problem is an LP over a pointed polyhedron, so an
    optimum sits where ``m`` of the hyperplanes ``(h_gg w)_k = h_gt_k +- lam``
    and ``w_j = 0`` meet.
    """
    m = h_gt.size
    rows = np.vstack([h_gg, h_gg, np.eye(m)])
    rhs = np.concatenate([h_gt + lam, h_gt - lam, np.zeros(m)])
    combos = np.array(list(itertools.combinations(range(3 * m), m)))
    a, b = rows[combos], rhs[combos]
    ok = np.abs(np.linalg.det(a)) > 1e-12
    w = np.linalg.solve(a[ok], b[ok][..., None])[..., 0]
    resid = np.max(np.abs(h_gt[None, :] - w @ h_gg.T), axis=1)
    feasible = resid <= lam * (1 + 1e-9) + 1e-12
    return float(np.min(np.sum(np.abs(w[feasible]), axis=1)))


def dantzig_instances(seed=77, per_size=5, max_m=6):
    rng = np.random.default_rng(seed)
    for m in range(1, max_m + 1):
        for _ in range(per_size):
            a = rng.standard_normal((m + 3, m))
            h_gg = a.T @ a / (m + 3) + 0.05 * np.eye(m)
            h_gt = rng.standard_normal(m)
            lam = float(rng.uniform(0.05, 0.8) * np.max(np.abs(h_gt)))
            yield h_gg, h_gt, lam


def dantzig_oracle_gap():
    """Largest ``| ||w_hat||_1 - ||w_LP||_1 | / (1 + ||w_LP||_1)`` over the instances."""
    worst = 0.0
    for h_gg, h_gt, lam in dantzig_instances():
        ref = vertex_oracle(h_gg, h_gt, lam)
        w = solve_dantzig(h_gg, h_gt, lam)
        worst = max(worst, abs(np.sum(np.abs(w)) - ref) / (1 + ref))
    return worst


def test_vertex_oracle_optimality():
    assert dantzig_oracle_gap() <= 1e-6


def test_feasibility_of_solutions():
    for h_gg, h_gt, lam in dantzig_instances(seed=3):
        for method in ("highs", "admm"):
            w = solve_dantzig(h_gg, h_gt, lam, method=method)
            assert dantzig_residual(h_gg, h_gt, w) <= lam * (1 + 1e-6)


def test_admm_matches_highs():
    for h_gg, h_gt, lam in dantzig_instances(seed=9, per_size=3):
        a = np.sum(np.abs(solve_dantzig(h_gg, h_gt, lam, method="admm")))
        b = np.sum(np.abs(solve_dantzig(h_gg, h_gt, lam, method="highs")))
        assert a == pytest.approx(b, rel=1e-4, abs=1e-8)


def test_identity_examples():
    a = np.array([0.5, -1.2, 0.05, 2.0])
    np.testing.assert_allclose(solve_dantzig(np.eye(4), a, 0.0), a, atol=1e-9)
    lam = 0.3
    np.testing.assert_allclose(solve_dantzig(np.eye(4), a, lam), np.sign(a) * np.maximum(np.abs(a) - lam, 0),
                               atol=1e-9)
    for lam in (0.0, 0.7):
        np.testing.assert_array_equal(solve_dantzig(np.eye(4), np.zeros(4), lam), np.zeros(4))
    assert vertex_oracle(np.eye(4), a, lam) == pytest.approx(np.sum(np.maximum(np.abs(a) - lam, 0)), abs=1e-12)


def test_monotone_in_lambda():
    for h_gg, h_gt, _ in dantzig_instances(seed=4, per_size=2):
        top = np.max(np.abs(h_gt))
        norms = [np.sum(np.abs(solve_dantzig(h_gg, h_gt, f * top))) for f in (0.05, 0.2, 0.5, 0.9, 1.1)]
        assert np.all(np.diff(norms) <= 1e-6)


def test_infeasible_and_bad_input():
    with pytest.raises(DantzigError):
        solve_dantzig(np.zeros((2, 2)), np.array([1.0, 0.0]), 0.1)
    with pytest.raises(ValueError):
        solve_dantzig(np.eye(2), np.ones(2), -1.0)
    with pytest.raises(ValueError):
        solve_dantzig(np.eye(2), np.ones(2) * 3, 0.1, method="simplex")


def test_project_psd_examples():
    h = np.diag([2.0, -1.0])
    np.testing.assert_allclose(project_psd(h, 1e-6), np.diag([2.0, 1e-6]), atol=1e-15)
    rng = np.random.default_rng(0)
    a = rng.standard_normal((5, 5))
    pd = a @ a.T + np.eye(5)
    np.testing.assert_allclose(project_psd(pd, 1e-6), pd, atol=1e-10)
    s = rng.standard_normal((5, 5))
    s = s + s.T
    out = project_psd(s, 1e-3)
    assert np.min(np.linalg.eigvals(out).real) >= 1e-3 * (1 - 1e-9)
    with pytest.raises(np.linalg.LinAlgError):
        project_psd(np.array([[np.nan, 0], [0, 1]]), 1e-6)


def psd_idempotence_error(seed=1, count=20):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        k = int(rng.integers(2, 9))
        s = rng.standard_normal((k, k))
        s = s + s.T
        once = project_psd(s, 1e-4)
        worst = max(worst, float(np.max(np.abs(project_psd(once, 1e-4) - once))))
    return worst


def test_project_psd_idempotent():
    assert psd_idempotence_error() <= 1e-10


def test_independent_coordinate_gives_zero_direction():
    rng = np.random.default_rng(2)
    h = np.diag([1.0, 2.0, 1.5, 0.8]) + 0.01 * np.ones((4, 4))
    dv = decorrelation_from_hessian(h, 2, 0.05)
    assert np.all(np.abs(dv.omega_hat) <= 1e-12)
    np.testing.assert_array_equal(dv.v_hat, np.eye(4)[2])
    del rng


def test_two_dimensional_bookkeeping():
    h = np.array([[2.0, 0.9], [0.9, 1.5]])
    dv = decorrelation_from_hessian(h, 0, 0.1)
    expect = solve_dantzig(h[1:, 1:], h[1:, 0], 0.1)
    np.testing.assert_allclose(dv.v_hat, [1.0, -expect[0]])
    assert dv.omega_hat[0] == pytest.approx((0.9 - 0.1) / 1.5)


def test_vector_invariants_on_random_data():
    rng = np.random.default_rng(10)
    for _ in range(20):
        d = int(rng.integers(2, 8))
        ctx = context(random_dataset(rng, 60, d), 1.0)
        j = int(rng.integers(0, d))
        lam = float(rng.uniform(0.001, 0.05))
        dv = decorrelation_vector(ctx, rng.standard_normal(d) * 0.3, j, lam)
        assert dv.v_hat[j] == 1.0
        assert dv.feasibility_residual <= lam * (1 + 1e-6)
        assert dv.omega_hat.size == d - 1


def test_psd_projection_flag():
    h = np.array([[1.0, 0.5, 0.5], [0.5, 1.0, 1.0], [0.5, 1.0, 1.0]])
    dv = decorrelation_from_hessian(h, 0, 0.01)
    assert dv.psd_projected
    assert not decorrelation_from_hessian(np.eye(3), 0, 0.01).psd_projected


def test_transform_matrix():
    np.testing.assert_array_equal(transform_matrix(3, 0), np.eye(3))
    np.testing.assert_array_equal(transform_matrix(3, 0, np.array([1.0, 0, 0])), np.eye(3))
    c0 = np.array([2.0, -1.0, 0.5])
    c = transform_matrix(3, 0, c0)
    np.testing.assert_allclose(c, [[0.5, 0, 0], [0.5, 1, 0], [-0.25, 0, 1]])
    # C is the inverse transpose of the coordinate map (beta -> (c0'beta, gamma))
    a = np.eye(3)
    a[0] = c0
    np.testing.assert_allclose(c @ a.T, np.eye(3), atol=1e-15)


def test_default_lambda_prime():
    assert default_lambda_prime(800, 100) == pytest.approx(2 * (np.log(100) / 800) ** 0.2)


def test_index_out_of_range():
    with pytest.raises(IndexError):
        decorrelation_from_hessian(np.eye(3), 3, 0.1)
