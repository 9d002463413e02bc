"""Hot numeric kernels with an optional numba backend.

Every function here is written in the subset of numpy that numba's nopython
mode understands. With ``MCIDSCORE_NUMBA`` unset (or truthy) they are compiled
with ``numba.njit``; with ``MCIDSCORE_NUMBA=0`` they run as ordinary numpy code.
The only primitive that needs two sources is the normal upper tail, because
numba has ``math.erfc`` but not ``scipy.special``.

The flag is read once at import time.
"""

from __future__ import annotations

import math
import os

import numpy as np
from scipy import special

_FLAG = os.environ.get("MCIDSCORE_NUMBA", "1").strip().lower()
NUMBA_ENABLED = _FLAG not in {"0", "false", "no", "off"}

if NUMBA_ENABLED:
    try:
        import numba
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False

SQRT_2PI = math.sqrt(2.0 * math.pi)
SQRT_2 = math.sqrt(2.0)


def jit(fn):
    if NUMBA_ENABLED:
        return numba.njit(cache=True, fastmath=False)(fn)
    return fn


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"


if NUMBA_ENABLED:

    @numba.njit(cache=True)
    def normal_sf(u):
        out = np.empty(u.shape[0])
        for i in range(u.shape[0]):
            out[i] = 0.5 * math.erfc(u[i] / SQRT_2)
        return out

else:

    def normal_sf(u):
        return special.ndtr(-u)


@jit
def polyval(u, coef):
    out = np.full(u.shape[0], coef[coef.shape[0] - 1])
    for k in range(coef.shape[0] - 2, -1, -1):
        out = out * u + coef[k]
    return out


@jit
def poly_phi(u, coef):
    """``q(u) * phi(u)`` with ``q`` given by monomial coefficients."""
    return polyval(u, coef) * np.exp(-0.5 * u * u) / SQRT_2PI


@jit
def kernel_tail(u, tail_poly):
    """``int_u^inf K`` for a Gaussian-Hermite kernel (``tail_poly`` from ``Kernel``)."""
    return normal_sf(u) + poly_phi(u, tail_poly)


@jit
def risk_and_grad(x, y, z, wobs, beta, delta, tail_poly, dens_poly):
    """Smoothed risk and its gradient.

    ``wobs`` holds ``w(y_i)`` per observation. The gradient is
    ``(1/n) sum w_i y_i z_i K(u_i) / delta`` with ``u_i = y_i (x_i - beta'z_i) / delta``.
    """
    n = x.shape[0]
    u = y * (x - z @ beta) / delta
    risk = np.sum(wobs * kernel_tail(u, tail_poly)) / n
    c = wobs * y * poly_phi(u, dens_poly) / (delta * n)
    grad = z.T @ c
    return risk, grad


@jit
def hessian_weights(x, y, z, wobs, beta, delta, deriv_poly):
    """Per-observation ``a_i`` with Hessian ``= (1/n) sum a_i z_i z_i'``."""
    n = x.shape[0]
    u = y * (x - z @ beta) / delta
    return -wobs * poly_phi(u, deriv_poly) / (delta * delta * n)


@jit
def hessian_norm(z, a, iters, seed_vec):
    """Spectral norm of ``z' diag(a) z`` by power iteration."""
    v = seed_vec / np.sqrt(np.sum(seed_vec * seed_vec))
    est = 0.0
    for _ in range(iters):
        hv = z.T @ (a * (z @ v))
        nrm = np.sqrt(np.sum(hv * hv))
        if nrm == 0.0:
            return 0.0
        est = nrm
        v = hv / nrm
    return est


@jit
def soft_threshold(v, thresh):
    return np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)


@jit
def prox_grad_stage(x, y, z, wobs, delta, tail_poly, dens_poly, beta0, lam, step,
                    nu, eta, tol, max_iter, radius, trace):
    """Proximal gradient on ``R(beta) + lam * ||beta||_1`` over the l2 ball.

    Backtracking shrinks the step by ``eta`` until the sufficient-decrease test
    ``F(new) <= F(old) - (nu / t) ||new - old||^2`` holds. Stops when the
    prox-gradient mapping ``||beta - prox(beta - t grad)||_inf / t`` is at most
    ``tol`` and returns the point at which that residual was measured.

    Returns ``(beta, objective, iterations, residual, converged, trace_len)``;
    ``trace[k]`` holds the objective after ``k`` accepted steps.
    """
    beta = beta0.copy()
    f, g = risk_and_grad(x, y, z, wobs, beta, delta, tail_poly, dens_poly)
    obj = f + lam * np.sum(np.abs(beta))
    trace[0] = obj
    t = step
    it = 0
    resid = np.inf
    fc = f
    gc = g
    objc = obj
    while True:
        while True:
            cand = soft_threshold(beta - t * g, t * lam)
            nrm = np.sqrt(np.sum(cand * cand))
            if nrm > radius:
                cand = cand * (radius / nrm)
            diff = cand - beta
            dn2 = np.sum(diff * diff)
            if dn2 == 0.0:
                break
            fc, gc = risk_and_grad(x, y, z, wobs, cand, delta, tail_poly, dens_poly)
            objc = fc + lam * np.sum(np.abs(cand))
            if objc <= obj - (nu / t) * dn2 or t < 1e-14:
                break
            t *= eta
        resid = np.max(np.abs(diff)) / t
        if resid <= tol:
            return beta, obj, it, resid, True, it + 1
        if it >= max_iter:
            return beta, obj, it, resid, False, it + 1
        if objc > obj:
            # line search bottomed out without descent; keep the better point
            return beta, obj, it, resid, False, it + 1
        beta = cand
        f = fc
        g = gc
        obj = objc
        it += 1
        trace[it] = obj


@jit
def dantzig_admm(a, b, lam, rho, max_iter, tol):
    """Linearized ADMM for ``min ||w||_1 s.t. ||a w - b||_inf <= lam``.

    Splits ``r = a w - b`` with ``r`` in the box ``[-lam, lam]``. Stops on a
    relative duality gap below ``tol`` with primal infeasibility below
    ``tol * (1 + lam)``. Returns ``(w, gap, infeas, iterations, converged)``.
    """
    m = a.shape[1]
    w = np.zeros(m)
    r = np.clip(-b, -lam, lam)
    u = np.zeros(a.shape[0])
    # tau >= rho ||a||_2^2 keeps the linearized step a contraction
    v = np.ones(m) / np.sqrt(m)
    sn = 0.0
    for _ in range(50):
        av = a.T @ (a @ v)
        nv = np.sqrt(np.sum(av * av))
        if nv == 0.0:
            break
        sn = nv
        v = av / nv
    tau = rho * max(sn, 1e-12) * 1.01
    gap = np.inf
    infeas = np.inf
    for it in range(1, max_iter + 1):
        resid = a @ w - b - r + u
        w = soft_threshold(w - (rho / tau) * (a.T @ resid), 1.0 / tau)
        aw = a @ w - b
        r = np.clip(aw + u, -lam, lam)
        u = u + aw - r
        if it % 10 == 0:
            y = rho * u
            scale = max(1.0, np.max(np.abs(a.T @ y)))
            y = y / scale
            dual = -np.sum(y * b) - lam * np.sum(np.abs(y))
            primal = np.sum(np.abs(w))
            gap = abs(primal - dual) / (1.0 + primal)
            infeas = max(np.max(np.abs(aw)) - lam, 0.0)
            if gap <= tol and infeas <= tol * (1.0 + lam):
                return w, gap, infeas, it, True
    return w, gap, infeas, max_iter, False
