"""Weighted 0-1 risk and its kernel-smoothed surrogate.

For observation ``i`` with margin ``m_i = y_i (x_i - beta'z_i)`` the smoothed
loss is ``w(y_i) * Ktail(m_i / delta)`` where ``Ktail(u) = int_u^inf K``. Its
gradient in ``beta`` is ``w(y_i) y_i z_i K(m_i / delta) / delta`` (the tail
decreases in the margin and the margin decreases in ``beta'z_i``), and the
Hessian is ``-w(y_i) z_i z_i' K'(m_i / delta) / delta**2``.

Reductions use numpy's pairwise summation; matrix-vector products go through
BLAS, which is deterministic for a fixed thread count.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _accel
from .dataset import Dataset, WeightFn
from .kernels import Kernel


@dataclass(frozen=True)
class RiskContext:
    """A (possibly single-fold) view of the data with weights, kernel and bandwidth."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    weights: WeightFn
    kernel: Kernel
    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"bandwidth must be positive, got {self.delta}")
        x = np.ascontiguousarray(self.x, dtype=float)
        y = np.ascontiguousarray(self.y, dtype=float)
        z = np.ascontiguousarray(np.atleast_2d(self.z), dtype=float)
        if x.shape[0] == 0:
            raise ValueError("empty fold")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @classmethod
    def from_dataset(cls, data: Dataset, weights: WeightFn, kernel: Kernel, delta: float, idx=None):
        if idx is None:
            return cls(data.x, data.y, data.z, weights, kernel, float(delta))
        idx = np.asarray(idx)
        return cls(data.x[idx], data.y[idx], data.z[idx], weights, kernel, float(delta))

    def with_delta(self, delta: float) -> "RiskContext":
        return RiskContext(self.x, self.y, self.z, self.weights, self.kernel, float(delta))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.z.shape[1]

    @cached_property
    def wobs(self) -> np.ndarray:
        return np.asarray(self.weights(self.y), dtype=float)

    def margins(self, beta) -> np.ndarray:
        return self.y * (self.x - self.z @ np.asarray(beta, dtype=float))


def zero_one_risk(ctx: RiskContext, beta) -> float:
    """``mean(w(y) * L01(margin))`` with ``sign(0) = +1`` so a zero margin costs nothing."""
    loss = (ctx.margins(beta) < 0).astype(float)
    return float(np.sum(ctx.wobs * loss) / ctx.n)


def smoothed_risk(ctx: RiskContext, beta) -> float:
    u = ctx.margins(beta) / ctx.delta
    tail = _accel.kernel_tail(u, ctx.kernel.tail_poly)
    return float(np.sum(ctx.wobs * tail) / ctx.n)


def observation_gradients(ctx: RiskContext, beta) -> np.ndarray:
    """Row ``i`` is the gradient of observation ``i``'s smoothed loss (no ``1/n``)."""
    u = ctx.margins(beta) / ctx.delta
    c = ctx.wobs * ctx.y * _accel.poly_phi(u, ctx.kernel.density_poly) / ctx.delta
    return ctx.z * c[:, None]


def smoothed_gradient(ctx: RiskContext, beta) -> np.ndarray:
    beta = np.ascontiguousarray(beta, dtype=float)
    _, grad = _accel.risk_and_grad(ctx.x, ctx.y, ctx.z, ctx.wobs, beta, float(ctx.delta),
                                   ctx.kernel.tail_poly, ctx.kernel.density_poly)
    return grad


def smoothed_risk_and_gradient(ctx: RiskContext, beta):
    beta = np.ascontiguousarray(beta, dtype=float)
    risk, grad = _accel.risk_and_grad(ctx.x, ctx.y, ctx.z, ctx.wobs, beta, float(ctx.delta),
                                      ctx.kernel.tail_poly, ctx.kernel.density_poly)
    return float(risk), grad


def hessian_weights(ctx: RiskContext, beta) -> np.ndarray:
    beta = np.ascontiguousarray(beta, dtype=float)
    return _accel.hessian_weights(ctx.x, ctx.y, ctx.z, ctx.wobs, beta, float(ctx.delta),
                                  ctx.kernel.slope_poly)


def smoothed_hessian(ctx: RiskContext, beta) -> np.ndarray:
    a = hessian_weights(ctx, beta)
    h = ctx.z.T @ (a[:, None] * ctx.z)
    return 0.5 * (h + h.T)
