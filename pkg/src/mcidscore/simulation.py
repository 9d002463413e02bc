"""Heteroskedastic data-generating processes and the Monte Carlo harness.

Replicate ``i`` of a run with master seed ``m`` draws from
``np.random.SeedSequence([m, i])``; its two spawned children seed the data
stream and the coefficient stream. Normal variates come from NumPy's
``Generator.standard_normal`` on the PCG64 bit generator, so a release of
NumPy fixes the whole sequence. Replicates are therefore independent of
scheduling and a parallel run gives the same statistics as a serial one.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats

from .dataset import Dataset, empirical_weights, split_two_folds
from .inference import TestConfig, score_test
from .kernels import make_gaussian_order
from .risk import RiskContext, smoothed_gradient

SCHEMA_VERSION = 1
NOISE_SCALE = 0.2
MAX_EXCLUDED_FRACTION = 0.05


class Scenario(str, enum.Enum):
    GAUSSIAN = "HeteroGaussian"
    UNIFORM = "HeteroUniform"

    @classmethod
    def parse(cls, text) -> "Scenario":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower()
        for member in cls:
            if key in (member.value.lower(), member.name.lower()):
                return member
        raise ValueError(f"unknown scenario {text!r}; use 'gaussian' or 'uniform'")


@dataclass(frozen=True)
class DGPConfig:
    scenario: Scenario = Scenario.GAUSSIAN
    n: int = 800
    d: int = 100
    s: int = 3
    rho: float = 0.2
    beta1: float = 0.0
    seed: int = 0
    beta_draw_seed: int | None = None
    freeze_beta: bool = False

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario.parse(self.scenario))
        if not 0 <= self.rho < 1:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")
        if not 2 <= self.s <= self.d:
            raise ValueError(f"need 2 <= s <= d, got s={self.s}, d={self.d}")
        if self.n < 4:
            raise ValueError(f"n must be at least 4, got {self.n}")

    def replace(self, **changes) -> "DGPConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["scenario"] = self.scenario.value
        return out


def draw_beta(cfg: DGPConfig, rng: np.random.Generator) -> np.ndarray:
    """``(beta1, U[1,2] x (s-1), 0, ...)`` scaled to unit Euclidean norm."""
    beta = np.zeros(cfg.d)
    beta[0] = cfg.beta1
    beta[1:cfg.s] = rng.uniform(1.0, 2.0, size=cfg.s - 1)
    return beta / np.linalg.norm(beta)


def ar1_design(n: int, d: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    eps = rng.standard_normal((n, d))
    z = np.empty_like(eps)
    z[:, 0] = eps[:, 0]
    scale = math.sqrt(1.0 - rho * rho)
    for j in range(1, d):
        z[:, j] = rho * z[:, j - 1] + scale * eps[:, j]
    return z


def generate_dgp(cfg: DGPConfig, beta_star=None) -> tuple[Dataset, np.ndarray]:
    """Draw ``(X, Y, Z)`` from ``cfg``; ``beta_star`` overrides the coefficient draw.

    Coefficients come from ``beta_draw_seed`` when set, otherwise from the
    data seed's own stream.
    """
    data_ss, beta_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    if beta_star is None:
        beta_rng = np.random.default_rng(cfg.beta_draw_seed if cfg.beta_draw_seed is not None else beta_ss)
        beta_star = draw_beta(cfg, beta_rng)
    beta_star = np.asarray(beta_star, dtype=float)
    if beta_star.shape != (cfg.d,):
        raise ValueError(f"beta_star must have shape ({cfg.d},)")
    rng = np.random.default_rng(data_ss)
    x = rng.standard_normal(cfg.n)
    z = ar1_design(cfg.n, cfg.d, cfg.rho, rng)
    margin = x - z @ beta_star
    spread = np.sqrt(1.0 + 2.0 * margin**2)
    if cfg.scenario is Scenario.GAUSSIAN:
        eps = NOISE_SCALE * spread * rng.standard_normal(cfg.n)
    else:
        eps = NOISE_SCALE * rng.uniform(-spread, spread)
    y = np.where(margin + eps >= 0, 1.0, -1.0)
    return Dataset(x, y, z), beta_star


def replicate_seeds(master_seed: int, index: int) -> tuple[int, int]:
    """``(data_seed, beta_seed)`` for replicate ``index``."""
    data, beta = np.random.SeedSequence([master_seed, index]).spawn(2)
    return int(data.generate_state(1, np.uint64)[0]), int(beta.generate_state(1, np.uint64)[0])


def frozen_beta_seed(master_seed: int) -> int:
    return int(np.random.SeedSequence([master_seed, 2**32]).generate_state(1, np.uint64)[0])


@dataclass
class SimulationReport:
    config: dict
    test_config: dict
    alpha: float
    replicates: int
    statistics: list
    p_values: list
    diagnostics: list
    excluded: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def completed(self) -> int:
        return len(self.statistics)

    @property
    def rejection_rate(self) -> float:
        if not self.p_values:
            return float("nan")
        return float(np.mean(np.asarray(self.p_values) < self.alpha))

    @property
    def rejection_se(self) -> float:
        m = self.completed
        p = self.rejection_rate
        return math.sqrt(p * (1 - p) / m) if m else float("nan")

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "config": self.config,
            "test_config": self.test_config,
            "alpha": self.alpha,
            "replicates": self.replicates,
            "completed": self.completed,
            "rejection_rate": self.rejection_rate,
            "rejection_se": self.rejection_se,
            "statistics": self.statistics,
            "p_values": self.p_values,
            "diagnostics": self.diagnostics,
            "excluded": self.excluded,
        }
        if include_timing:
            out["wall_time"] = self.wall_time
        return out

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["replicate", "statistic", "p_value", "delta_used"])
            for diag, stat, p in zip(self.diagnostics, self.statistics, self.p_values):
                w.writerow([diag["replicate"], repr(stat), repr(p), repr(diag["delta_used"])])


class SimulationError(RuntimeError):
    pass


def config_summary(cfg: TestConfig) -> dict:
    out = {}
    for key, val in cfg.__dict__.items():
        if key == "path":
            out[key] = asdict(val)
        elif isinstance(val, enum.Enum):
            out[key] = val.value
        elif isinstance(val, tuple):
            out[key] = list(val)
        else:
            out[key] = val
    return out


def kkt_report(data: Dataset, cfg: TestConfig, fits, delta_fit: float) -> tuple[list, list]:
    """Per fold: ``max_j (|grad_j| - lambda)`` over zero coordinates of the fit,
    and ``max_j |grad_j + lambda sign(beta_j)|`` over its nonzero coordinates."""
    folds = split_two_folds(data, cfg.seed)
    weights = empirical_weights(data, cfg.weight_mode)
    kernel = make_gaussian_order(cfg.kernel_order)
    zero_excess, active = [], []
    for fit, idx in zip(fits, (folds.fold1, folds.fold2)):
        ctx = RiskContext.from_dataset(data, weights, kernel, delta_fit, idx)
        g = smoothed_gradient(ctx, fit.beta_hat)
        nz = fit.beta_hat != 0
        zero_excess.append(float(np.max(np.abs(g[~nz]) - fit.lam, initial=-fit.lam)))
        active.append(float(np.max(np.abs(g[nz] + fit.lam * np.sign(fit.beta_hat[nz])), initial=0.0)))
    return zero_excess, active


def _one_replicate(dgp: DGPConfig, test_cfg: TestConfig, master_seed: int, index: int, beta_fixed):
    data_seed, beta_seed = replicate_seeds(master_seed, index)
    rep_dgp = dgp.replace(seed=data_seed, beta_draw_seed=beta_seed)
    try:
        data, beta_star = generate_dgp(rep_dgp, beta_star=beta_fixed)
        cfg = replace(test_cfg, seed=data_seed % 2**31)
        res = score_test(data, 1, cfg)
        if not math.isfinite(res.statistic):
            raise SimulationError("non-finite statistic")
    except Exception as exc:  # recorded and excluded; the run decides whether it survives
        return index, None, f"{type(exc).__name__}: {exc}"
    fits = res.beta_hats
    zero_excess, active_resid = kkt_report(data, cfg, fits, res.diagnostics["delta_fit"])
    diag = {
        "replicate": index,
        "delta_used": res.delta_used,
        "converged": [bool(f.converged) for f in fits],
        "kkt_residuals": [float(f.residual) for f in fits],
        "kkt_zero_excess": zero_excess,
        "kkt_active_residual": active_resid,
        "lambda": float(fits[0].lam),
        "beta_star_1": float(beta_star[0]),
        "mu_hat": res.mu_hat,
        "sigma_hat": res.sigma_hat,
    }
    return index, (res.statistic, res.p_value, diag), None


def run_monte_carlo(dgp: DGPConfig, test_cfg: TestConfig | None = None, replicates: int = 250,
                    alpha: float = 0.05, master_seed: int = 0, n_jobs: int = 1) -> SimulationReport:
    """Repeat ``score_test`` on coordinate 1 over fresh draws of ``dgp``.

    ``n_jobs > 1`` distributes replicates with joblib; results are identical
    to the serial run because every replicate owns its seeds.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    test_cfg = test_cfg or TestConfig()
    beta_fixed = None
    if dgp.freeze_beta:
        beta_fixed = draw_beta(dgp, np.random.default_rng(frozen_beta_seed(master_seed)))
    start = time.perf_counter()
    if n_jobs == 1:
        outcomes = [_one_replicate(dgp, test_cfg, master_seed, i, beta_fixed) for i in range(replicates)]
    else:
        from joblib import Parallel, delayed
        outcomes = Parallel(n_jobs=n_jobs)(
            delayed(_one_replicate)(dgp, test_cfg, master_seed, i, beta_fixed) for i in range(replicates))
    outcomes.sort(key=lambda o: o[0])
    stats_, pvals, diags, excluded = [], [], [], []
    for index, payload, err in outcomes:
        if payload is None:
            excluded.append({"replicate": index, "error": err})
            continue
        stats_.append(float(payload[0]))
        pvals.append(float(payload[1]))
        diags.append(payload[2])
    report = SimulationReport(dgp.to_dict(), config_summary(test_cfg), alpha, replicates,
                              stats_, pvals, diags, excluded, time.perf_counter() - start)
    if len(excluded) > MAX_EXCLUDED_FRACTION * replicates:
        raise SimulationError(
            f"{len(excluded)} of {replicates} replicates failed; first error: {excluded[0]['error']}")
    return report


def export_qq_data(report_or_stats) -> np.ndarray:
    """``(m, 2)`` array of standard-normal quantiles and sorted statistics."""
    values = report_or_stats.statistics if isinstance(report_or_stats, SimulationReport) else report_or_stats
    values = np.sort(np.asarray(values, dtype=float))
    m = values.size
    if m == 0:
        raise ValueError("no statistics to export")
    theory = stats.norm.ppf((np.arange(1, m + 1) - 0.5) / m)
    return np.column_stack([theory, values])


def qq_slope(qq: np.ndarray) -> float:
    """Least-squares slope of sample on theoretical quantiles."""
    t, s = qq[:, 0], qq[:, 1]
    if t.size < 2:
        return float("nan")
    tc = t - t.mean()
    return float(np.dot(tc, s - s.mean()) / np.dot(tc, tc))


def write_qq_csv(qq: np.ndarray, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["theoretical", "sample"])
        for t, s in qq:
            w.writerow([repr(float(t)), repr(float(s))])


# Presets ---------------------------------------------------------------------

POWER_GRID_GAUSSIAN = (0.02, 0.05, 0.075, 0.10, 0.15, 0.20, 0.25, 0.30)
POWER_GRID_UNIFORM = (0.025, 0.05, 0.075, 0.10, 0.125, 0.15, 0.175)


@dataclass(frozen=True)
class Preset:
    dgp: DGPConfig
    beta1_grid: tuple = ()
    data_driven: bool = False
    description: str = ""


PRESETS = {
    "table1-gaussian": Preset(DGPConfig(Scenario.GAUSSIAN, 800, 100, 3, 0.2),
                              description="type I error, heteroskedastic Gaussian"),
    "table2-uniform": Preset(DGPConfig(Scenario.UNIFORM, 800, 100, 3, 0.2),
                             description="type I error, heteroskedastic uniform"),
    "table4-gaussian": Preset(DGPConfig(Scenario.GAUSSIAN, 800, 100, 3, 0.2), data_driven=True,
                              description="type I error with the data-driven bandwidth"),
    "power-gaussian-s10": Preset(DGPConfig(Scenario.GAUSSIAN, 800, 100, 10, 0.2), POWER_GRID_GAUSSIAN,
                                 description="power curve, heteroskedastic Gaussian"),
    "power-uniform-s10": Preset(DGPConfig(Scenario.UNIFORM, 800, 100, 10, 0.2), POWER_GRID_UNIFORM,
                                description="power curve, heteroskedastic uniform"),
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}") from None


def figure4_beta(d: int = 50, s: int = 10) -> np.ndarray:
    beta = np.zeros(d)
    beta[:s] = 1.0 / math.sqrt(s)
    return beta


def run_power_curve(dgp: DGPConfig, beta1_grid, test_cfg: TestConfig | None = None, replicates: int = 250,
                    alpha: float = 0.05, master_seed: int = 0, n_jobs: int = 1) -> list[SimulationReport]:
    return [run_monte_carlo(dgp.replace(beta1=float(b1)), test_cfg, replicates, alpha, master_seed, n_jobs)
            for b1 in beta1_grid]


def default_jobs() -> int:
    return max(1, os.cpu_count() or 1)
