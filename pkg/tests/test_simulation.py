import json

import numpy as np
import pytest
from scipy import stats

from mcidscore.inference import TestConfig
from mcidscore.simulation import (
    PRESETS, POWER_GRID_GAUSSIAN, POWER_GRID_UNIFORM, DGPConfig, Scenario, SimulationError, SimulationReport,
    ar1_design, draw_beta, export_qq_data, generate_dgp, get_preset, qq_slope, replicate_seeds,
    run_monte_carlo, write_qq_csv,
)

FAST = TestConfig()


def test_beta_normalized_after_insertion():
    cfg = DGPConfig(d=20, s=5, beta1=0.3)
    beta = draw_beta(cfg, np.random.default_rng(0))
    assert np.linalg.norm(beta) == pytest.approx(1.0, abs=1e-12)
    assert np.all(beta[5:] == 0)
    raw_norm = 0.3 / beta[0]
    assert np.all((beta[1:5] * raw_norm >= 1) & (beta[1:5] * raw_norm <= 2))


@pytest.mark.parametrize("scenario", list(Scenario))
def test_generated_shapes_and_norm(scenario):
    data, beta = generate_dgp(DGPConfig(scenario, n=50, d=8, s=3, seed=1))
    assert (data.n, data.d) == (50, 8)
    assert np.linalg.norm(beta) == pytest.approx(1.0, abs=1e-12)
    assert set(np.unique(data.y)) <= {-1.0, 1.0}


def test_independent_design_when_rho_zero():
    n = 10_000
    z = ar1_design(n, 6, 0.0, np.random.default_rng(2))
    corr = np.corrcoef(z, rowvar=False)
    assert np.max(np.abs(corr - np.eye(6))) < 4 / np.sqrt(n)


def test_ar1_correlation():
    z = ar1_design(20_000, 5, 0.6, np.random.default_rng(3))
    corr = np.corrcoef(z, rowvar=False)
    assert corr[0, 1] == pytest.approx(0.6, abs=0.03)
    assert corr[0, 2] == pytest.approx(0.36, abs=0.03)
    assert np.std(z[:, 4]) == pytest.approx(1.0, abs=0.03)


@pytest.mark.parametrize("scenario", list(Scenario))
def test_conditional_median_zero(scenario):
    cfg = DGPConfig(scenario, n=200_000, d=3, s=2, seed=9)
    data, beta = generate_dgp(cfg)
    margin = data.x - data.z @ beta
    near = np.abs(margin) < 0.01
    m = int(near.sum())
    frac = np.mean(data.y[near] > 0)
    assert abs(frac - 0.5) <= 4 / np.sqrt(m)


def test_beta_override_and_validation():
    beta = np.zeros(6)
    beta[:2] = [0.6, 0.8]
    _, b = generate_dgp(DGPConfig(n=10, d=6, s=2), beta_star=beta)
    np.testing.assert_array_equal(b, beta)
    with pytest.raises(ValueError):
        generate_dgp(DGPConfig(n=10, d=6, s=2), beta_star=np.ones(3))
    for bad in (dict(rho=1.0), dict(s=1), dict(s=20, d=10), dict(n=3)):
        with pytest.raises(ValueError):
            DGPConfig(**bad)
    assert Scenario.parse("uniform") is Scenario.UNIFORM
    with pytest.raises(ValueError):
        Scenario.parse("cauchy")


def test_qq_export():
    one = export_qq_data([1.7])
    np.testing.assert_allclose(one, [[0.0, 1.7]])
    three = export_qq_data([3.0, -1.0, 0.5])
    np.testing.assert_allclose(three[:, 0], stats.norm.ppf([1 / 6, 0.5, 5 / 6]))
    np.testing.assert_array_equal(three[:, 1], [-1.0, 0.5, 3.0])
    draws = np.random.default_rng(0).standard_normal(1000)
    assert 0.9 <= qq_slope(export_qq_data(draws)) <= 1.1
    with pytest.raises(ValueError):
        export_qq_data([])


def test_qq_csv(tmp_path):
    write_qq_csv(export_qq_data([0.1, -0.2]), tmp_path / "q.csv")
    assert (tmp_path / "q.csv").read_text().splitlines()[0] == "theoretical,sample"


def test_replicate_seeds_distinct():
    seeds = {replicate_seeds(7, i) for i in range(200)}
    assert len(seeds) == 200
    assert replicate_seeds(7, 3) == replicate_seeds(7, 3)
    assert replicate_seeds(7, 3) != replicate_seeds(8, 3)


SMALL = DGPConfig(n=200, d=10, s=3)


def test_single_replicate_report():
    rep = run_monte_carlo(SMALL, FAST, replicates=1, master_seed=7)
    assert len(rep.statistics) == 1 and rep.completed == 1
    assert rep.rejection_rate in (0.0, 1.0)
    assert rep.diagnostics[0]["replicate"] == 0


def test_determinism_and_parallel_equivalence():
    a = run_monte_carlo(SMALL, FAST, replicates=4, master_seed=11)
    b = run_monte_carlo(SMALL, FAST, replicates=4, master_seed=11)
    c = run_monte_carlo(SMALL, FAST, replicates=4, master_seed=11, n_jobs=2)
    assert a.to_dict(include_timing=False) == b.to_dict(include_timing=False)
    assert a.statistics == c.statistics


def test_freeze_beta():
    rep = run_monte_carlo(SMALL.replace(freeze_beta=True), FAST, replicates=3, master_seed=2)
    assert len({d["beta_star_1"] for d in rep.diagnostics}) == 1
    moving = run_monte_carlo(SMALL.replace(beta1=0.5), FAST, replicates=3, master_seed=2)
    assert len({d["beta_star_1"] for d in moving.diagnostics}) == 3


def test_report_serialization(tmp_path):
    rep = run_monte_carlo(SMALL, FAST, replicates=2, master_seed=1)
    rep.write_json(tmp_path / "r.json")
    payload = json.loads((tmp_path / "r.json").read_text())
    assert payload["schema_version"] == 1
    assert payload["replicates"] == 2 and len(payload["statistics"]) == 2
    assert 0 <= payload["rejection_rate"] <= 1
    rep.write_csv(tmp_path / "r.csv")
    assert len((tmp_path / "r.csv").read_text().splitlines()) == 3
    assert "wall_time" not in rep.to_dict(include_timing=False)


def test_excessive_failures_abort(monkeypatch):
    import mcidscore.simulation as sim

    def boom(*args, **kwargs):
        raise FloatingPointError("synthetic failure")

    monkeypatch.setattr(sim, "score_test", boom)
    with pytest.raises(SimulationError, match="synthetic failure"):
        run_monte_carlo(SMALL, FAST, replicates=3)


def test_few_failures_are_recorded(monkeypatch):
    import mcidscore.simulation as sim
    real = sim.score_test
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 5:
            raise FloatingPointError("one bad replicate")
        return real(*args, **kwargs)

    monkeypatch.setattr(sim, "score_test", flaky)
    rep = run_monte_carlo(SMALL, FAST, replicates=25)
    assert rep.completed == 24 and len(rep.excluded) == 1
    assert rep.excluded[0]["replicate"] == 4


def test_presets():
    assert set(PRESETS) >= {"table1-gaussian", "table2-uniform", "table4-gaussian", "power-gaussian-s10"}
    t1 = get_preset("table1-gaussian").dgp
    assert (t1.n, t1.d, t1.s, t1.rho, t1.beta1) == (800, 100, 3, 0.2, 0.0)
    assert get_preset("table2-uniform").dgp.scenario is Scenario.UNIFORM
    assert get_preset("table4-gaussian").data_driven
    assert get_preset("power-gaussian-s10").beta1_grid == POWER_GRID_GAUSSIAN
    assert POWER_GRID_GAUSSIAN == (0.02, 0.05, 0.075, 0.10, 0.15, 0.20, 0.25, 0.30)
    assert POWER_GRID_UNIFORM == (0.025, 0.05, 0.075, 0.10, 0.125, 0.15, 0.175)
    with pytest.raises(KeyError):
        get_preset("table9")


def test_argument_validation():
    with pytest.raises(ValueError):
        run_monte_carlo(SMALL, FAST, replicates=0)
    with pytest.raises(ValueError):
        run_monte_carlo(SMALL, FAST, replicates=1, alpha=1.5)
    assert np.isnan(SimulationReport({}, {}, 0.05, 0, [], [], []).rejection_rate)
