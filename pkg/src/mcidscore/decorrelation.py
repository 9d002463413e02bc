"""Dantzig-type estimation of the decorrelation direction.

For a tested direction the nuisance coordinates ``g`` are regressed out of the
tested coordinate ``t`` through the Hessian:

    omega = argmin ||omega||_1  s.t.  ||H[g, t] - H[g, g] omega||_inf <= lambda'

and the score is projected on ``v = (1, -omega)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from . import _accel
from .risk import RiskContext, smoothed_hessian


class DantzigError(RuntimeError):
    pass


@dataclass
class DecorrelationVector:
    omega_hat: np.ndarray
    v_hat: np.ndarray
    tested_index: int
    lambda_prime: float
    feasibility_residual: float
    psd_projected: bool

    def to_dict(self) -> dict:
        return {
            "tested_index": self.tested_index,
            "lambda_prime": self.lambda_prime,
            "feasibility_residual": self.feasibility_residual,
            "psd_projected": self.psd_projected,
            "nonzero_omega": int(np.count_nonzero(self.omega_hat)),
            "omega_l1": float(np.sum(np.abs(self.omega_hat))),
        }


def default_lambda_prime(n: int, d: int) -> float:
    return 2.0 * (math.log(max(d, 2)) / n) ** 0.2


def default_psd_floor(h: np.ndarray) -> float:
    return 1e-8 * (1.0 + abs(np.trace(h)) / max(h.shape[0], 1))


def project_psd(h, floor: float) -> np.ndarray:
    """Nearest (Frobenius) symmetric matrix with every eigenvalue at least ``floor``."""
    h = np.asarray(h, dtype=float)
    if not np.all(np.isfinite(h)):
        raise np.linalg.LinAlgError("matrix has non-finite entries")
    sym = 0.5 * (h + h.T)
    vals, vecs = np.linalg.eigh(sym)
    out = (vecs * np.maximum(vals, floor)) @ vecs.T
    return 0.5 * (out + out.T)


def dantzig_residual(h_gg, h_gt, omega) -> float:
    if h_gt.size == 0:
        return 0.0
    return float(np.max(np.abs(h_gt - h_gg @ omega)))


def _solve_highs(h_gg, h_gt, lam):
    m = h_gt.size
    # omega = p - q with p, q >= 0
    a_ub = np.block([[h_gg, -h_gg], [-h_gg, h_gg]])
    b_ub = np.concatenate([h_gt + lam, lam - h_gt])
    res = linprog(np.ones(2 * m), A_ub=a_ub, b_ub=b_ub, bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status == 2:
        raise DantzigError("Dantzig program is infeasible")
    if not res.success:
        raise DantzigError(f"LP solver failed: {res.message}")
    return res.x[:m] - res.x[m:]


def _solve_admm(h_gg, h_gt, lam, tol, max_iter):
    scale = max(np.max(np.abs(h_gg)), 1e-12)
    w, gap, infeas, iters, ok = _accel.dantzig_admm(
        np.ascontiguousarray(h_gg / scale), np.ascontiguousarray(h_gt / scale), lam / scale,
        1.0, max_iter, tol)
    if not ok:
        raise DantzigError(f"ADMM did not converge in {iters} iterations (gap {gap:.2e}, infeasibility {infeas:.2e})")
    return w


def solve_dantzig(h_gg, h_gt, lambda_prime: float, method: str = "highs",
                  tol: float = 1e-8, max_iter: int = 200_000) -> np.ndarray:
    """Minimum-l1 ``omega`` with ``||h_gt - h_gg omega||_inf <= lambda_prime``.

    ``method="highs"`` solves the split-variable LP exactly with HiGHS;
    ``method="admm"`` runs the first-order solver in ``_accel`` and stops on a
    relative duality gap of ``tol``.
    """
    h_gg = np.asarray(h_gg, dtype=float)
    h_gt = np.asarray(h_gt, dtype=float).ravel()
    if lambda_prime < 0:
        raise ValueError("lambda_prime must be non-negative")
    m = h_gt.size
    if m == 0:
        return np.zeros(0)
    if np.max(np.abs(h_gt)) <= lambda_prime:
        return np.zeros(m)
    if method == "highs":
        omega = _solve_highs(h_gg, h_gt, lambda_prime)
    elif method == "admm":
        omega = _solve_admm(h_gg, h_gt, lambda_prime, tol, max_iter)
    else:
        raise ValueError(f"unknown Dantzig method {method!r}")
    # LP vertices carry round-off dust in coordinates that should be exactly zero
    omega[np.abs(omega) < 1e-12 * (1.0 + np.max(np.abs(omega)))] = 0.0
    return omega


def transform_matrix(d: int, pivot: int, c0=None) -> np.ndarray:
    """Jacobian ``C`` of the map to ``(xi, gamma)`` coordinates, ``xi = c0'beta``.

    ``xi`` takes the place of coordinate ``pivot``; gradients transform as
    ``C grad`` and Hessians as ``C H C'``. With ``c0 = e_pivot`` it is the identity.
    """
    c = np.eye(d)
    if c0 is None:
        return c
    c0 = np.asarray(c0, dtype=float)
    piv = c0[pivot]
    c[:, pivot] = -c0 / piv
    c[pivot, pivot] = 1.0 / piv
    return c


def decorrelation_from_hessian(hess, tested_index: int, lambda_prime: float, transform=None,
                               psd_floor: float | None = None, method: str = "highs") -> DecorrelationVector:
    """Dantzig step on a (transformed) Hessian; ``tested_index`` is 0-based."""
    h = np.asarray(hess, dtype=float)
    if transform is not None:
        h = transform @ h @ transform.T
    h = 0.5 * (h + h.T)
    d = h.shape[0]
    if not 0 <= tested_index < d:
        raise IndexError(f"tested index {tested_index} outside [0, {d})")
    rest = np.array([j for j in range(d) if j != tested_index], dtype=int)
    h_gg = h[np.ix_(rest, rest)]
    h_gt = h[rest, tested_index]
    projected = False
    if rest.size:
        floor = default_psd_floor(h_gg) if psd_floor is None else psd_floor
        if np.linalg.eigvalsh(h_gg)[0] < floor:
            h_gg = project_psd(h_gg, floor)
            projected = True
    omega = solve_dantzig(h_gg, h_gt, lambda_prime, method=method)
    v = np.zeros(d)
    v[tested_index] = 1.0
    v[rest] = -omega
    return DecorrelationVector(omega, v, tested_index, float(lambda_prime),
                               dantzig_residual(h_gg, h_gt, omega), projected)


def decorrelation_vector(fold: RiskContext, beta_plug, tested_index: int, lambda_prime: float,
                         delta_dantzig: float = 1.0, transform=None, psd_floor: float | None = None,
                         method: str = "highs") -> DecorrelationVector:
    """Decorrelation direction from this fold's Hessian at another fold's estimate.

    ``tested_index`` is 0-based. ``transform`` is the reparametrization matrix
    of a linear-contrast test (see ``transform_matrix``).
    """
    hess = smoothed_hessian(fold.with_delta(delta_dantzig), beta_plug)
    return decorrelation_from_hessian(hess, tested_index, lambda_prime, transform, psd_floor, method)
