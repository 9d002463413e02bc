"""L1-penalized smoothed surrogate estimator and two-way (delta, lambda) cross-validation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .dataset import Dataset, DataError, WeightMode, empirical_weights
from .kernels import Kernel, make_gaussian_order
from .risk import RiskContext, hessian_weights, smoothed_gradient, smoothed_risk, zero_one_risk

POWER_ITERS = 30


@dataclass(frozen=True)
class PathConfig:
    """Hyperparameters of the path-following solver.

    ``nu`` is the sufficient-decrease constant, ``eta`` the backtracking shrink
    factor; intermediate stages stop at residual ``max(eps_tgt, nu * lambda_k)``
    and the last one at ``eps_tgt``. ``max_inner_iters`` is a per-stage budget.
    """

    stages: int = 25
    nu: float = 0.25
    eta: float = 0.25
    eps_tgt: float = 1e-4
    radius: float = 1e3
    max_inner_iters: int = 5000

    def __post_init__(self):
        if self.stages < 1:
            raise ValueError("stages must be >= 1")
        if not (0 < self.nu < 1 and 0 < self.eta < 1):
            raise ValueError("nu and eta must lie in (0, 1)")
        if self.eps_tgt <= 0 or self.radius <= 0 or self.max_inner_iters < 1:
            raise ValueError("eps_tgt, radius and max_inner_iters must be positive")


@dataclass
class StageRecord:
    lam: float
    objective: float
    iterations: int
    residual: float
    converged: bool
    objective_trace: np.ndarray = field(repr=False)


@dataclass
class FittedModel:
    beta_hat: np.ndarray
    delta: float
    lam: float
    objective: float
    iterations: int
    converged: bool
    residual: float
    stage_trace: list[StageRecord] = field(default_factory=list, repr=False)

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.beta_hat)

    def to_dict(self) -> dict:
        idx = self.support()
        return {
            "beta_hat": {"d": int(self.beta_hat.size), "index": idx.tolist(),
                         "value": self.beta_hat[idx].tolist()},
            "delta": self.delta,
            "lambda": self.lam,
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "residual": self.residual,
            "stage_trace": [[s.lam, s.objective] for s in self.stage_trace],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "FittedModel":
        beta = np.zeros(payload["beta_hat"]["d"])
        beta[np.asarray(payload["beta_hat"]["index"], dtype=int)] = payload["beta_hat"]["value"]
        return cls(beta, payload["delta"], payload["lambda"], payload["objective"],
                   payload["iterations"], payload["converged"], payload["residual"])


def penalized_objective(ctx: RiskContext, beta, lam: float) -> float:
    return smoothed_risk(ctx, beta) + lam * float(np.sum(np.abs(beta)))


def kkt_residual(ctx: RiskContext, beta, lam: float) -> float:
    """Largest violation of the lasso stationarity conditions at ``beta``."""
    g = smoothed_gradient(ctx, beta)
    beta = np.asarray(beta)
    zero = beta == 0
    viol = np.where(zero, np.maximum(np.abs(g) - lam, 0.0), np.abs(g + lam * np.sign(beta)))
    return float(np.max(viol)) if viol.size else 0.0


def lambda_max(ctx: RiskContext) -> float:
    """Smallest lambda for which ``beta = 0`` satisfies the KKT conditions."""
    return float(np.max(np.abs(smoothed_gradient(ctx, np.zeros(ctx.d)))))


def default_lambda(n: int, d: int, delta: float, scale: float = 1.0) -> float:
    """``scale * sqrt(log d / (n delta))``, the rate the estimator needs."""
    return scale * math.sqrt(math.log(max(d, 2)) / (n * delta))


def _step_size(ctx: RiskContext, beta) -> float:
    a = hessian_weights(ctx, beta)
    seed_vec = np.linspace(1.0, 2.0, ctx.d)
    lip = _accel.hessian_norm(ctx.z, a, POWER_ITERS, seed_vec)
    return 1.0 / max(lip, 1e-8)


def _run_stage(ctx: RiskContext, beta, lam, tol, cfg: PathConfig) -> StageRecord:
    trace = np.empty(cfg.max_inner_iters + 1)
    out = _accel.prox_grad_stage(
        ctx.x, ctx.y, ctx.z, ctx.wobs, float(ctx.delta), ctx.kernel.tail_poly, ctx.kernel.density_poly,
        np.ascontiguousarray(beta, dtype=float), float(lam), _step_size(ctx, beta),
        cfg.nu, cfg.eta, float(tol), cfg.max_inner_iters, cfg.radius, trace,
    )
    new_beta, obj, iters, resid, ok, tlen = out
    return new_beta, StageRecord(float(lam), float(obj), int(iters), float(resid), bool(ok), trace[:tlen].copy())


def fit_penalized(ctx: RiskContext, lam: float, cfg: PathConfig | None = None, beta_init=None) -> FittedModel:
    """Stationary point of ``R_delta^n(beta) + lam ||beta||_1`` on ``||beta||_2 <= radius``.

    From zero, lambda decreases geometrically from ``lambda_max`` to ``lam`` over
    ``cfg.stages`` stages, each warm-started from the last. An explicit
    ``beta_init`` is refined with a single stage at ``lam``.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    cfg = cfg or PathConfig()
    d = ctx.d
    if beta_init is None:
        beta = np.zeros(d)
        lam0 = lambda_max(ctx)
        if lam >= lam0:
            obj = penalized_objective(ctx, beta, lam)
            return FittedModel(beta, ctx.delta, lam, obj, 0, True, kkt_residual(ctx, beta, lam))
        ratio = (lam / lam0) ** (1.0 / cfg.stages)
        lams = [lam0 * ratio**k for k in range(1, cfg.stages)] + [lam]
    else:
        beta = np.asarray(beta_init, dtype=float).copy()
        nrm = np.linalg.norm(beta)
        if nrm > cfg.radius:
            beta *= cfg.radius / nrm
        lams = [lam]

    records = []
    for k, lam_k in enumerate(lams):
        last = k == len(lams) - 1
        tol = cfg.eps_tgt if last else max(cfg.eps_tgt, cfg.nu * lam_k)
        beta, rec = _run_stage(ctx, beta, lam_k, tol, cfg)
        records.append(rec)
    final = records[-1]
    return FittedModel(
        beta_hat=beta,
        delta=ctx.delta,
        lam=lam,
        objective=penalized_objective(ctx, beta, lam),
        iterations=sum(r.iterations for r in records),
        converged=final.converged,
        residual=final.residual,
        stage_trace=records,
    )


def _kfold_indices(y, folds: int, seed) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    n = y.shape[0]
    for _ in range(100):
        perm = rng.permutation(n)
        parts = [np.sort(p) for p in np.array_split(perm, folds)]
        if all(np.any(y[p] > 0) and np.any(y[p] < 0) for p in parts):
            return parts
    raise DataError(f"could not form {folds} validation folds that each contain both labels")


@dataclass
class CVResult:
    delta: float
    lam: float
    table: np.ndarray
    delta_grid: list[float]
    lambda_grid: list[float]


def cross_validate(data: Dataset, delta_grid, lambda_grid, folds: int = 5, seed=0,
                   kernel: Kernel | None = None, weight_mode=WeightMode.INVERSE_PROPORTION,
                   cfg: PathConfig | None = None) -> CVResult:
    """Two-way grid search scored by the weighted 0-1 validation risk.

    Ties go to the larger delta, then the larger lambda. Within a fold and delta
    the lambda grid is visited from large to small with warm starts.
    """
    delta_grid = [float(v) for v in delta_grid]
    lambda_grid = [float(v) for v in lambda_grid]
    if not delta_grid or not lambda_grid:
        raise ValueError("empty tuning grid")
    if folds < 2:
        raise ValueError("cross-validation needs at least 2 folds")
    kernel = kernel or make_gaussian_order(2)
    weights = empirical_weights(data, weight_mode)
    parts = _kfold_indices(data.y, folds, seed)
    table = np.zeros((len(delta_grid), len(lambda_grid)))
    lam_order = np.argsort(lambda_grid)[::-1]
    for k, val_idx in enumerate(parts):
        train_idx = np.sort(np.concatenate([p for j, p in enumerate(parts) if j != k]))
        val_ctx = RiskContext.from_dataset(data, weights, kernel, 1.0, val_idx)
        for i, delta in enumerate(delta_grid):
            train_ctx = RiskContext.from_dataset(data, weights, kernel, delta, train_idx)
            beta = None
            for j in lam_order:
                model = fit_penalized(train_ctx, lambda_grid[j], cfg, beta_init=beta)
                beta = model.beta_hat
                table[i, j] += zero_one_risk(val_ctx, beta) / folds
    best = None
    for i in range(len(delta_grid)):
        for j in range(len(lambda_grid)):
            key = (table[i, j], -delta_grid[i], -lambda_grid[j])
            if best is None or key < best[0]:
                best = (key, i, j)
    _, i, j = best
    return CVResult(delta_grid[i], lambda_grid[j], table, delta_grid, lambda_grid)
