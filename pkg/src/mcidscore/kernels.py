"""Gaussian-based kernels of arbitrary even order.

A kernel of order ``ell`` is built as ``K(t) = p(t) * phi(t)`` where ``phi`` is
the standard normal density and ``p`` is an even polynomial of degree
``ell - 2`` in the probabilists' Hermite basis,

    p = sum_{k < ell/2} (-1)**k / (2**k k!) * He_{2k}.

Because ``(He_m phi)' = -He_{m+1} phi``, every derivative and the upper tail
integral of ``K`` stay in the same ``poly * phi`` form, so all the quantities
the estimators need are available in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial import hermite_e
from scipy import integrate, special

SQRT_2PI = math.sqrt(2.0 * math.pi)

#: Gaussian tails beyond this point are below 1e-30 and are ignored by quadrature.
QUAD_LIMIT = 12.0


def _phi(t):
    return np.exp(-0.5 * np.square(t)) / SQRT_2PI


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class KernelMoments:
    """``gamma = int K(u) u**ell / ell! du`` and ``mu_tilde = int K(u)**2 du``."""

    gamma: float
    mu_tilde: float


@dataclass(frozen=True)
class Kernel:
    order: int
    family: str = "GaussianHermite"
    hermite_coef: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.order < 2 or self.order % 2:
            raise KernelError(f"kernel order must be an even integer >= 2, got {self.order}")
        if self.hermite_coef is None:
            coef = np.zeros(self.order - 1)
            for k in range(self.order // 2):
                coef[2 * k] = (-1) ** k / (2**k * math.factorial(k))
            object.__setattr__(self, "hermite_coef", coef)

    # Monomial coefficients (lowest degree first) of the polynomial factors.

    def derivative_poly(self, m: int) -> np.ndarray:
        """Coefficients of ``q`` with ``K^(m)(t) = q(t) phi(t)``."""
        shifted = np.concatenate([np.zeros(m), self.hermite_coef])
        return (-1) ** m * hermite_e.herme2poly(shifted)

    @cached_property
    def density_poly(self) -> np.ndarray:
        return self.derivative_poly(0)

    @cached_property
    def slope_poly(self) -> np.ndarray:
        return self.derivative_poly(1)

    @cached_property
    def tail_poly(self) -> np.ndarray:
        """Coefficients of ``q`` with ``int_u^inf K = 1 - Phi(u) + q(u) phi(u)``."""
        coef = self.hermite_coef
        if coef.size <= 1:
            return np.zeros(1)
        # int_u^inf He_m phi = He_{m-1}(u) phi(u) for m >= 1
        return hermite_e.herme2poly(coef[1:])

    def eval(self, t):
        t = np.asarray(t, dtype=float)
        return np.polynomial.polynomial.polyval(t, self.density_poly) * _phi(t)

    __call__ = eval

    def derivative(self, m: int, t):
        if m < 0:
            raise KernelError(f"derivative order must be >= 0, got {m}")
        t = np.asarray(t, dtype=float)
        return np.polynomial.polynomial.polyval(t, self.derivative_poly(m)) * _phi(t)

    def complement_cdf(self, u):
        u = np.asarray(u, dtype=float)
        tail = special.ndtr(-u)
        if self.order == 2:
            return tail
        return tail + np.polynomial.polynomial.polyval(u, self.tail_poly) * _phi(u)


def make_gaussian_order(ell: int) -> Kernel:
    """Gaussian-Hermite kernel of even order ``ell``; ``ell=2`` is the normal density."""
    if int(ell) != ell:
        raise KernelError(f"kernel order must be an integer, got {ell!r}")
    return Kernel(order=int(ell))


def complement_cdf(kernel: Kernel, u):
    return kernel.complement_cdf(u)


def kernel_derivative(kernel: Kernel, m: int, t, max_order: int | None = None):
    """Exact ``m``-th derivative of ``kernel`` at ``t``.

    ``max_order`` bounds ``m``; it defaults to the kernel order, which is the
    highest derivative the bias correction uses.
    """
    limit = kernel.order if max_order is None else max_order
    if not 0 <= m <= limit:
        raise KernelError(f"derivative order {m} outside [0, {limit}]")
    return kernel.derivative(m, t)


def moment(kernel: Kernel, j: int, power: int = 1) -> float:
    """``int t**j K(t)**power dt`` by adaptive quadrature on the truncated line."""
    def integrand(t):
        return t**j * float(kernel.eval(t)) ** power

    value, err = integrate.quad(integrand, -QUAD_LIMIT, QUAD_LIMIT, epsabs=1e-12, epsrel=1e-10, limit=200)
    if not np.isfinite(value) or err > 1e-9:
        raise KernelError(f"quadrature did not converge for moment j={j} (error estimate {err:.2e})")
    return value


def kernel_moments(kernel: Kernel) -> KernelMoments:
    ell = kernel.order
    # E[T^ell He_{2k}(T)] for T ~ N(0,1) is exact through the Gauss-Hermite rule
    nodes, weights = hermite_e.hermegauss(ell + 2)
    weights = weights / SQRT_2PI
    p = np.polynomial.polynomial.polyval(nodes, kernel.density_poly)
    gamma = float(np.sum(weights * nodes**ell * p)) / math.factorial(ell)
    # K^2 = p^2 phi^2 and phi(t)^2 = phi(sqrt(2) t) / sqrt(2 pi)
    deg = 2 * (ell - 2)
    nodes, weights = hermite_e.hermegauss(deg // 2 + 2)
    weights = weights / SQRT_2PI
    s = nodes / math.sqrt(2.0)
    p = np.polynomial.polynomial.polyval(s, kernel.density_poly)
    mu_tilde = float(np.sum(weights * p**2)) / (SQRT_2PI * math.sqrt(2.0))
    if gamma == 0.0 or mu_tilde <= 0.0:
        raise KernelError("degenerate kernel moments")
    return KernelMoments(gamma=gamma, mu_tilde=mu_tilde)
