"""Cross-fitted, bias-corrected smoothed decorrelated score tests.

For fold ``k`` with estimates ``beta^(o)`` from the other fold and a Dantzig
direction ``v^(k)`` from fold ``k``'s own Hessian, the per-fold pieces are

* score:    ``v' grad R_delta^(k)(beta0^(o))`` with the tested component of
  ``beta^(o)`` moved to the null,
* bias:     ``gamma_K * v' T^(k)`` where ``T`` is a kernel estimate of
  ``E[w Y Z f^(ell)(beta'Z | Y, Z)]`` with pilot bandwidth ``h``,
* variance: ``mu_K * v' H^(k) v`` where ``H`` is a kernel estimate of
  ``E[w^2 Z Z' f(beta'Z | Y, Z)]`` with pilot bandwidth ``g``.

Averaging the two folds gives ``S``, ``mu`` and ``sigma^2`` and the statistic
``sqrt(n delta) (S - delta**ell mu) / sigma``. The moment variant studentizes
the same numerator with the empirical variance of its per-observation terms.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from . import _accel
from .dataset import Dataset, DataError, FoldPair, WeightMode, empirical_weights, split_two_folds
from .decorrelation import (
    DecorrelationVector, decorrelation_vector, default_lambda_prime, transform_matrix,
)
from .estimation import FittedModel, PathConfig, default_lambda, fit_penalized
from .kernels import Kernel, kernel_moments, make_gaussian_order
from .risk import RiskContext, smoothed_gradient


class InferenceError(RuntimeError):
    pass


class VarianceMode(str, enum.Enum):
    PILOT = "pilot"
    MOMENT = "moment"
    AUTO = "auto"


def default_delta(n: int, ell: int = 2, c: float = 1.0) -> float:
    return c * n ** (-1.0 / (2 * ell + 1))


def default_h(n: int, d: int, ell: int = 2, c: float = 2.0) -> float:
    return c * (math.log(max(d, 2)) / n) ** (1.0 / (2 * ell + 3))


def default_g(n: int, d: int, ell: int = 2, c: float = 2.0) -> float:
    return c * (math.log(max(d, 2)) / n) ** (1.0 / (2 * ell + 1))


@dataclass(frozen=True)
class TestConfig:
    """Tuning for a score test. ``None`` fields fall back to the default rules.

    ``delta`` is a positive number or ``"data-driven"``; ``delta_fit`` is the
    bandwidth of the penalized fits, by default ``delta_fit_scale * n**(-1/(2 ell + 1))``.
    ``lam`` overrides ``lambda_scale * sqrt(log d / (n_fold delta_fit))``.
    """

    __test__ = False

    delta: float | str | None = None
    delta_fit: float | None = None
    delta_fit_scale: float = 2.0
    kernel_order: int = 2
    h: float | None = None
    g: float | None = None
    h_scale: float = 2.0
    g_scale: float = 2.0
    variance_mode: VarianceMode = VarianceMode.AUTO
    lam: float | None = None
    lambda_scale: float = 0.2
    lambda_prime: float | None = None
    delta_dantzig: float = 1.0
    dantzig_method: str = "highs"
    weight_mode: WeightMode = WeightMode.INVERSE_PROPORTION
    seed: int = 0
    path: PathConfig = field(default_factory=PathConfig)
    bandwidth_grid: tuple | None = None
    b: float | None = None
    b_scale: float = 0.5
    double_smoothing_order: int = 2

    def __post_init__(self):
        if self.kernel_order < 2 or self.kernel_order % 2:
            raise ValueError("kernel_order must be an even integer >= 2")
        for name in ("delta_fit", "h", "g", "lam", "b"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ValueError(f"{name} must be positive, got {val}")
        if isinstance(self.delta, str):
            if self.delta != "data-driven":
                raise ValueError(f"delta must be a number or 'data-driven', got {self.delta!r}")
        elif self.delta is not None and not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.lambda_prime is not None and self.lambda_prime < 0:
            raise ValueError("lambda_prime must be non-negative")
        object.__setattr__(self, "variance_mode", VarianceMode(self.variance_mode))
        object.__setattr__(self, "weight_mode", WeightMode(self.weight_mode))

    @property
    def data_driven(self) -> bool:
        return self.delta == "data-driven"

    def resolved_variance_mode(self) -> VarianceMode:
        if self.variance_mode is VarianceMode.AUTO:
            return VarianceMode.MOMENT if self.data_driven else VarianceMode.PILOT
        return self.variance_mode


@dataclass
class TestResult:
    __test__ = False

    statistic: float
    p_value: float
    mu_hat: float
    sigma_hat: float
    delta_used: float
    score_value: float
    fold_scores: tuple
    beta_hats: tuple
    decor: tuple
    tested_index: int
    variance_mode: str
    contrast: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "mu_hat": self.mu_hat,
            "sigma_hat": self.sigma_hat,
            "delta_used": self.delta_used,
            "score_value": self.score_value,
            "fold_scores": list(self.fold_scores),
            "tested_index": self.tested_index + 1,
            "variance_mode": self.variance_mode,
            "contrast": None if self.contrast is None else self.contrast.tolist(),
            "folds": [
                {"fit": {k: v for k, v in m.to_dict().items() if k != "stage_trace"},
                 "decorrelation": dv.to_dict()}
                for m, dv in zip(self.beta_hats, self.decor)
            ],
            "diagnostics": self.diagnostics,
        }
        return out


def two_sided_p_value(statistic: float) -> float:
    return float(2.0 * stats.norm.sf(abs(statistic)))


# Per-fold building blocks ----------------------------------------------------

def decorrelated_score(fold: RiskContext, beta_restricted, v_hat) -> float:
    return float(np.dot(v_hat, smoothed_gradient(fold, beta_restricted)))


def _pilot_bias_terms(fold: RiskContext, beta_plug, v_hat, h, kernel_u: Kernel, ell: int):
    """Per-observation ``w y (v'z) U^(ell)((beta'z - x)/h) / h**(1+ell)``."""
    arg = (fold.z @ beta_plug - fold.x) / h
    u_der = _accel.poly_phi(arg, kernel_u.derivative_poly(ell))
    return fold.wobs * fold.y * (fold.z @ v_hat) * u_der / h ** (1 + ell)


def estimate_bias(fold: RiskContext, beta_plug, v_hat, h: float, kernel_u: Kernel, gamma: float,
                  ell: int | None = None) -> float:
    """Per-fold ``gamma * v' T`` (``ell`` defaults to the order of ``kernel_u``)."""
    if not h > 0:
        raise ValueError("pilot bandwidth h must be positive")
    ell = kernel_u.order if ell is None else ell
    terms = _pilot_bias_terms(fold, np.asarray(beta_plug, float), np.asarray(v_hat, float), h, kernel_u, ell)
    return float(gamma * np.sum(terms) / fold.n)


def estimate_variance_pilot(fold: RiskContext, beta_plug, v_hat, g: float, kernel_l: Kernel,
                            mu_tilde: float) -> float:
    """Per-fold ``mu_tilde * v' H v`` with ``H = mean(w^2 z z' L((x - beta'z)/g) / g)``."""
    if not g > 0:
        raise ValueError("pilot bandwidth g must be positive")
    arg = (fold.x - fold.z @ np.asarray(beta_plug, float)) / g
    proj = fold.z @ np.asarray(v_hat, float)
    terms = fold.wobs**2 * proj**2 * kernel_l.eval(arg) / g
    return float(mu_tilde * np.sum(terms) / fold.n)


def moment_terms(fold: RiskContext, beta_plug, beta_restricted, v_hat, delta: float, h: float,
                 kernel_u: Kernel, gamma: float, ell: int | None = None) -> np.ndarray:
    """Per-observation terms whose mean is this fold's bias-corrected score.

    ``D_i = w y (v'z) / delta * [K((x - beta0'z)/delta)
            - gamma delta**(ell+1) / h**(ell+1) U^(ell)((beta'z - x)/h)]``
    """
    ell = fold.kernel.order if ell is None else ell
    v_hat = np.asarray(v_hat, float)
    arg = (fold.x - fold.z @ np.asarray(beta_restricted, float)) / delta
    k_part = fold.wobs * fold.y * (fold.z @ v_hat) * fold.kernel.eval(arg) / delta
    bias_part = _pilot_bias_terms(fold, np.asarray(beta_plug, float), v_hat, h, kernel_u, ell)
    return k_part - gamma * delta**ell * bias_part


def estimate_variance_moment(fold: RiskContext, beta_plug, beta_restricted, v_hat, delta: float, h: float,
                             kernel_u: Kernel, gamma: float, ell: int | None = None) -> tuple[float, float]:
    """``(mean, variance)`` of the per-observation terms of ``moment_terms``."""
    terms = moment_terms(fold, beta_plug, beta_restricted, v_hat, delta, h, kernel_u, gamma, ell)
    var = float(np.var(terms))
    if not var > 0:
        raise InferenceError("moment variance estimate is zero; the score terms are degenerate")
    return float(np.mean(terms)), var


# Cross-fitting ---------------------------------------------------------------

@dataclass
class CrossFit:
    """Fold estimates shared by the test statistic and bandwidth selection."""

    data: Dataset
    folds: FoldPair
    weights: object
    kernel: Kernel
    pivot: int
    contrast: np.ndarray | None
    transform: np.ndarray | None
    fits: tuple
    decor: tuple
    delta_fit: float

    @property
    def fold_indices(self):
        return (self.folds.fold1, self.folds.fold2)

    def context(self, k: int, delta: float) -> RiskContext:
        return RiskContext.from_dataset(self.data, self.weights, self.kernel, delta, self.fold_indices[k])

    def plug(self, k: int) -> np.ndarray:
        """Full estimate used on fold ``k``: the one fitted on the other fold."""
        return self.fits[1 - k].beta_hat

    def restricted(self, k: int) -> np.ndarray:
        beta = self.plug(k).copy()
        if self.contrast is None:
            beta[self.pivot] = 0.0
        else:
            c0 = self.contrast
            others = np.dot(c0, beta) - c0[self.pivot] * beta[self.pivot]
            beta[self.pivot] = -others / c0[self.pivot]
        return beta

    def projection(self, k: int) -> np.ndarray:
        """Score direction in the original coordinates (``C' v``)."""
        v = self.decor[k].v_hat
        return v if self.transform is None else self.transform.T @ v


def resolve_lambda(cfg: TestConfig, n_fold: int, d: int, delta_fit: float) -> float:
    return cfg.lam if cfg.lam is not None else default_lambda(n_fold, d, delta_fit, cfg.lambda_scale)


def fit_cross(data: Dataset, pivot: int, cfg: TestConfig, contrast=None, transform=None,
              folds: FoldPair | None = None) -> CrossFit:
    """Split, fit both folds and estimate each fold's decorrelation direction."""
    folds = folds or split_two_folds(data, cfg.seed)
    weights = empirical_weights(data, cfg.weight_mode)
    kernel = make_gaussian_order(cfg.kernel_order)
    delta_fit = cfg.delta_fit or default_delta(data.n, cfg.kernel_order, cfg.delta_fit_scale)
    lam_prime = cfg.lambda_prime if cfg.lambda_prime is not None else default_lambda_prime(data.n, data.d)
    fits = []
    for idx in (folds.fold1, folds.fold2):
        ctx = RiskContext.from_dataset(data, weights, kernel, delta_fit, idx)
        fits.append(fit_penalized(ctx, resolve_lambda(cfg, idx.size, data.d, delta_fit), cfg.path))
    decor = []
    for k, idx in enumerate((folds.fold1, folds.fold2)):
        ctx = RiskContext.from_dataset(data, weights, kernel, cfg.delta_dantzig, idx)
        decor.append(decorrelation_vector(ctx, fits[1 - k].beta_hat, pivot, lam_prime, cfg.delta_dantzig,
                                          transform=transform, method=cfg.dantzig_method))
    return CrossFit(data, folds, weights, kernel, pivot, contrast, transform, tuple(fits), tuple(decor), delta_fit)


def _statistic(cf: CrossFit, delta: float, cfg: TestConfig) -> TestResult:
    data = cf.data
    ell = cf.kernel.order
    kernel_u = make_gaussian_order(cfg.kernel_order)
    kernel_l = make_gaussian_order(cfg.kernel_order)
    gamma = kernel_moments(cf.kernel).gamma
    mu_tilde = kernel_moments(cf.kernel).mu_tilde
    h = cfg.h or default_h(data.n, data.d, cfg.kernel_order, cfg.h_scale)
    g = cfg.g or default_g(data.n, data.d, cfg.kernel_order, cfg.g_scale)
    mode = cfg.resolved_variance_mode()

    scores, biases, variances, moments = [], [], [], []
    for k in (0, 1):
        ctx = cf.context(k, delta)
        v = cf.projection(k)
        plug, restricted = cf.plug(k), cf.restricted(k)
        scores.append(decorrelated_score(ctx, restricted, v))
        biases.append(estimate_bias(ctx, plug, v, h, kernel_u, gamma, ell))
        if mode is VarianceMode.PILOT:
            variances.append(estimate_variance_pilot(ctx, plug, v, g, kernel_l, mu_tilde))
        else:
            moments.append((estimate_variance_moment(ctx, plug, restricted, v, delta, h, kernel_u, gamma, ell),
                            ctx.n))

    score = 0.5 * (scores[0] + scores[1])
    mu_hat = 0.5 * (biases[0] + biases[1])
    numerator = score - delta**ell * mu_hat
    scale = math.sqrt(data.n * delta)
    if mode is VarianceMode.PILOT:
        sigma2 = 0.5 * (variances[0] + variances[1])
        if not sigma2 > 0:
            raise InferenceError(f"non-positive variance estimate {sigma2:.3e}")
        sigma_hat = math.sqrt(sigma2)
    else:
        (_, var1), n1 = moments[0]
        (_, var2), n2 = moments[1]
        se = 0.5 * math.sqrt(var1 / n1 + var2 / n2)
        sigma_hat = scale * se
    statistic = scale * numerator / sigma_hat
    diagnostics = {
        "h": h, "g": g if mode is VarianceMode.PILOT else None,
        "delta_fit": cf.delta_fit,
        "lambda": cf.fits[0].lam,
        "lambda_prime": cf.decor[0].lambda_prime,
        "fold_sizes": [int(cf.folds.fold1.size), int(cf.folds.fold2.size)],
        "fold_bias_terms": biases,
        "fold_variance_terms": variances if variances else [m[0][1] for m in moments],
        "converged": [bool(m.converged) for m in cf.fits],
        "seed": int(cf.folds.seed),
    }
    return TestResult(
        statistic=float(statistic),
        p_value=two_sided_p_value(statistic),
        mu_hat=float(mu_hat),
        sigma_hat=float(sigma_hat),
        delta_used=float(delta),
        score_value=float(score),
        fold_scores=(float(scores[0]), float(scores[1])),
        beta_hats=cf.fits,
        decor=cf.decor,
        tested_index=cf.pivot,
        variance_mode=mode.value,
        contrast=cf.contrast,
        diagnostics=diagnostics,
    )


def _run(data: Dataset, pivot: int, cfg: TestConfig, contrast, transform, folds) -> TestResult:
    cf = fit_cross(data, pivot, cfg, contrast, transform, folds)
    selection = None
    if cfg.data_driven:
        from .bandwidth import select_from_crossfit
        selection = select_from_crossfit(cf, cfg)
        delta = selection.delta_hat
    else:
        delta = cfg.delta if cfg.delta is not None else default_delta(data.n, cfg.kernel_order)
    result = _statistic(cf, float(delta), cfg)
    if selection is not None:
        result.diagnostics["bandwidth"] = selection.to_dict(include_curves=False)
    return result


def score_test(data: Dataset, tested_index: int, cfg: TestConfig | None = None,
               folds: FoldPair | None = None) -> TestResult:
    """Test ``beta_j = 0`` for the 1-based coordinate ``tested_index``."""
    cfg = cfg or TestConfig()
    if not 1 <= tested_index <= data.d:
        raise IndexError(f"tested index {tested_index} outside [1, {data.d}]")
    return _run(data, tested_index - 1, cfg, None, None, folds)


def normalize_contrast(c0) -> tuple[np.ndarray, int]:
    """Scale ``c0`` so its first nonzero entry is +-1; returns ``(c0, pivot)``."""
    c0 = np.asarray(c0, dtype=float).ravel()
    nz = np.flatnonzero(c0)
    if nz.size == 0:
        raise ValueError("contrast vector is identically zero")
    pivot = int(nz[0])
    return c0 / abs(c0[pivot]), pivot


def linear_combination_test(data: Dataset, c0, cfg: TestConfig | None = None,
                            folds: FoldPair | None = None) -> TestResult:
    """Test ``c0' beta = 0`` by reparametrizing to ``xi = c0' beta``.

    ``xi`` replaces the first coordinate with a nonzero weight (the pivot). The
    hypothesis is invariant to positive rescaling of ``c0``, which is normalized
    so the pivot weight is +-1; a unit vector reduces to the coordinate test.
    """
    cfg = cfg or TestConfig()
    c0n, pivot = normalize_contrast(c0)
    if c0n.size != data.d:
        raise ValueError(f"contrast has {c0n.size} entries, data has d={data.d}")
    if np.count_nonzero(c0n) == 1 and c0n[pivot] == 1.0:
        result = _run(data, pivot, cfg, None, None, folds)
    else:
        result = _run(data, pivot, cfg, c0n, transform_matrix(data.d, pivot, c0n), folds)
    result.contrast = np.asarray(c0, dtype=float).ravel()
    result.diagnostics["pivot"] = pivot + 1
    return result
