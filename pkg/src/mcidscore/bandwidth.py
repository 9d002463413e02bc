"""Data-driven choice of the score bandwidth by minimizing an estimated MSE.

With fold estimates held fixed, for each candidate ``delta``

* ``V(delta)`` is the cross-fitted mean of squared per-observation projected
  gradients,
* ``B(delta)`` is a double-smoothing estimate of the smoothing bias built from
  a second pilot kernel ``J`` with bandwidth ``b``,
* ``M(delta) = V / n + (n - 1) / n * B**2``,

and the selected bandwidth is the grid minimizer of ``M``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import hermite_e, polynomial

from .dataset import Dataset
from .inference import CrossFit, TestConfig, fit_cross
from .kernels import Kernel, make_gaussian_order
from .risk import RiskContext, observation_gradients

SQRT_2PI = math.sqrt(2.0 * math.pi)


def default_grid(lo: float = 0.1, hi: float = 1.2, num: int = 24) -> np.ndarray:
    return np.geomspace(lo, hi, num)


def default_b(n: int, d: int, ell: int = 2, r: int = 2, c: float = 0.5) -> float:
    return c * (math.log(max(d, 2)) / n) ** (1.0 / (2 * ell + 2 * r + 1))


@dataclass
class BandwidthSelection:
    delta_hat: float
    grid: np.ndarray
    m_hat: np.ndarray
    v_hat_curve: np.ndarray
    b_hat_curve: np.ndarray
    b_pilot: float
    kernel_J: int
    n: int

    def to_dict(self, include_curves: bool = True) -> dict:
        out = {"delta_hat": self.delta_hat, "b_pilot": self.b_pilot, "kernel_J_order": self.kernel_J,
               "grid_min": float(self.grid[0]), "grid_max": float(self.grid[-1]), "grid_size": int(self.grid.size)}
        if include_curves:
            out.update(grid=self.grid.tolist(), V=self.v_hat_curve.tolist(), B=self.b_hat_curve.tolist(),
                       M=self.m_hat.tolist())
        return out

    def write_curves(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["delta", "V", "B", "M"])
            for row in zip(self.grid, self.v_hat_curve, self.b_hat_curve, self.m_hat):
                w.writerow([repr(float(v)) for v in row])


def smoothed_pilot(r, delta: float, b: float, kernel_k: Kernel, kernel_j: Kernel) -> np.ndarray:
    """``int K(u) J((r - u delta) / b) du`` for every entry of ``r``.

    The product of the two Gaussian factors is a Gaussian in ``u``; after
    completing the square the remaining polynomial is integrated exactly by a
    Gauss-Hermite rule.
    """
    r = np.asarray(r, dtype=float)
    sigma = math.hypot(b, delta)
    deg = (kernel_k.density_poly.size - 1) + (kernel_j.density_poly.size - 1)
    nodes, weights = hermite_e.hermegauss(deg // 2 + 2)
    weights = weights / SQRT_2PI
    u = r[:, None] * (delta / sigma**2) + (b / sigma) * nodes[None, :]
    s = r[:, None] * (b / sigma**2) - (delta / sigma) * nodes[None, :]
    poly = polynomial.polyval(u, kernel_k.density_poly) * polynomial.polyval(s, kernel_j.density_poly)
    gauss = np.exp(-0.5 * (r / sigma) ** 2) / SQRT_2PI
    return gauss * (b / sigma) * (poly @ weights)


def bias_terms(fold: RiskContext, beta_plug, v_hat, delta: float, b: float, kernel_j: Kernel) -> np.ndarray:
    """Per-observation ``v' A_i`` of the double-smoothing bias estimate."""
    if delta == 0.0:
        return np.zeros(fold.n)
    r = fold.x - fold.z @ np.asarray(beta_plug, float)
    shifted = smoothed_pilot(r, delta, b, fold.kernel, kernel_j)
    base = kernel_j.eval(r / b)
    return fold.wobs * fold.y * (fold.z @ np.asarray(v_hat, float)) * (shifted - base) / b


def _fold_parts(cf: CrossFit, delta: float):
    for k in (0, 1):
        yield cf.context(k, delta), cf.plug(k), cf.projection(k)


def estimate_variance_curve(cf: CrossFit, delta: float) -> float:
    """``V(delta)``: average over folds of ``mean_i (v' grad_i)**2`` at the other fold's estimate."""
    total = 0.0
    for ctx, plug, v in _fold_parts(cf, delta):
        proj = observation_gradients(ctx, plug) @ v
        total += float(np.mean(proj**2))
    return 0.5 * total


def estimate_bias_curve(cf: CrossFit, delta: float, b: float, kernel_j: Kernel) -> float:
    if not b > 0 or delta < 0:
        raise ValueError("need b > 0 and delta >= 0")
    total = 0.0
    for ctx, plug, v in _fold_parts(cf, max(delta, 1e-300)):
        total += float(np.mean(bias_terms(ctx, plug, v, delta, b, kernel_j)))
    return 0.5 * total


def estimate_mse(v_curve: float, b_curve: float, n: int) -> float:
    return max(v_curve, 0.0) / n + (n - 1) / n * b_curve**2


def select_from_crossfit(cf: CrossFit, cfg: TestConfig, grid=None, b: float | None = None) -> BandwidthSelection:
    data = cf.data
    grid = np.asarray(grid if grid is not None else (cfg.bandwidth_grid or default_grid()), dtype=float)
    if grid.size == 0:
        raise ValueError("empty bandwidth grid")
    if np.any(np.diff(grid) < 0):
        raise ValueError("bandwidth grid must be sorted ascending")
    b = b or cfg.b or default_b(data.n, data.d, cfg.kernel_order, cfg.double_smoothing_order, cfg.b_scale)
    kernel_j = make_gaussian_order(cfg.double_smoothing_order)
    v_curve = np.array([estimate_variance_curve(cf, dl) for dl in grid])
    b_curve = np.array([estimate_bias_curve(cf, dl, b, kernel_j) for dl in grid])
    m_hat = np.array([estimate_mse(v, bb, data.n) for v, bb in zip(v_curve, b_curve)])
    best = int(np.argmin(m_hat))
    return BandwidthSelection(float(grid[best]), grid, m_hat, v_curve, b_curve, float(b),
                              cfg.double_smoothing_order, data.n)


def select_bandwidth(data: Dataset, cfg: TestConfig | None = None, grid=None, b: float | None = None,
                     seed: int | None = None, tested_index: int = 1) -> BandwidthSelection:
    """Fit both folds once at the reference bandwidth, then minimize ``M`` over ``grid``."""
    cfg = cfg or TestConfig()
    if seed is not None:
        cfg = TestConfig(**{**cfg.__dict__, "seed": seed})
    cf = fit_cross(data, tested_index - 1, cfg)
    return select_from_crossfit(cf, cfg, grid, b)


@dataclass
class OracleCurve:
    grid: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    reps: int
    v_star: np.ndarray


def oracle_direction(dgp, beta_star, cfg: TestConfig, n_factor: int = 10, reps: int = 5, seed: int = 0):
    """Stand-in for the population decorrelation direction at ``beta_star``.

    Averages Dantzig solutions from ``reps`` independent samples of size
    ``n_factor * n``, using the Dantzig bandwidth and ``lambda'`` the
    procedure would use at sample size ``n``.
    """
    from .dataset import empirical_weights
    from .decorrelation import decorrelation_vector, default_lambda_prime
    from .simulation import generate_dgp

    lam_prime = cfg.lambda_prime if cfg.lambda_prime is not None else default_lambda_prime(dgp.n, dgp.d)
    kernel = make_gaussian_order(cfg.kernel_order)
    seeds = np.random.SeedSequence([seed, 0x5EED]).spawn(reps)
    acc = np.zeros(dgp.d)
    for ss in seeds:
        big, _ = generate_dgp(dgp.replace(n=n_factor * dgp.n, seed=int(ss.generate_state(1)[0])), beta_star=beta_star)
        ctx = RiskContext.from_dataset(big, empirical_weights(big, cfg.weight_mode), kernel, cfg.delta_dantzig)
        acc += decorrelation_vector(ctx, beta_star, 0, lam_prime, cfg.delta_dantzig,
                                    method=cfg.dantzig_method).v_hat
    return acc / reps


def mc_mse_oracle(dgp, beta_star, grid, reps: int, seed: int = 0, cfg: TestConfig | None = None,
                  v_star=None) -> OracleCurve:
    """Monte Carlo ``M(delta) = E[(v*' grad R_delta^n(beta*))**2]`` over fresh samples."""
    from .dataset import empirical_weights
    from .risk import smoothed_gradient
    from .simulation import generate_dgp

    cfg = cfg or TestConfig()
    grid = np.asarray(grid, dtype=float)
    beta_star = np.asarray(beta_star, dtype=float)
    if v_star is None:
        v_star = oracle_direction(dgp, beta_star, cfg, seed=seed)
    kernel = make_gaussian_order(cfg.kernel_order)
    squares = np.empty((reps, grid.size))
    for i, ss in enumerate(np.random.SeedSequence([seed, 0x0AC1E]).spawn(reps)):
        data, _ = generate_dgp(dgp.replace(seed=int(ss.generate_state(1)[0])), beta_star=beta_star)
        w = empirical_weights(data, cfg.weight_mode)
        for j, dl in enumerate(grid):
            ctx = RiskContext.from_dataset(data, w, kernel, dl)
            squares[i, j] = float(v_star @ smoothed_gradient(ctx, beta_star)) ** 2
    sd = squares.std(axis=0, ddof=1) if reps > 1 else np.zeros(grid.size)
    return OracleCurve(grid, squares.mean(axis=0), sd, reps, np.asarray(v_star))
