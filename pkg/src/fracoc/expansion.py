r"""Truncated moment expansions of Riemann-Liouville and Caputo derivatives.

The left derivative is approximated by

.. math::

    {}_aD_t^\alpha x(t) \approx A\,(t-a)^{-\alpha}x(t) + B\,(t-a)^{1-\alpha}\dot x(t)
        - \sum_{p=2}^{K} C_p\,(t-a)^{1-p-\alpha} V_p(t),

with moments :math:`\dot V_p = (1-p)(t-a)^{p-2}x`, :math:`V_p(a) = 0`. The
right derivative is the mirror image with moments :math:`W_p` that vanish at
the right end. Only the first derivative of ``x`` is needed, which is what
makes the expansion usable inside an ODE right-hand side.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError
from .fracops import Function, GridFn, Order, _evaluate, _fd_derivative, _point, as_order, gamma

#: Relative offset from a singular endpoint used wherever an expansion (or a
#: residual built on one) cannot be evaluated at the endpoint itself.
EPS = 1e-6


@dataclass(frozen=True, eq=False)
class ExpansionCoeffs:
    """Coefficients of the expansion truncated at order ``K``.

    ``C[i]`` holds the coefficient for moment ``p = i + 2``.
    """

    order: Order
    K: int
    A: float
    B: float
    C: np.ndarray

    @property
    def alpha(self) -> float:
        return self.order.alpha

    @property
    def moments(self) -> range:
        return range(2, self.K + 1)

    def C_p(self, p: int) -> float:
        if not 2 <= p <= self.K:
            raise DomainError(f"moment index p={p} outside 2..{self.K}")
        return float(self.C[p - 2])


def _ratios(alpha: float, K: int) -> np.ndarray:
    """Gamma(p - 1 + alpha) / (p - 1)! for p = 1..K, by forward recurrence."""
    r = np.empty(K)
    r[0] = gamma(alpha)
    for p in range(2, K + 1):
        r[p - 1] = r[p - 2] * (p - 2 + alpha) / (p - 1)
    return r


def coeffs(order, K: int) -> ExpansionCoeffs:
    """Expansion coefficients ``A(alpha, K)``, ``B(alpha, K)`` and ``C(alpha, p)``."""
    order = as_order(order)
    if int(K) != K or K < 2:
        raise DomainError(f"truncation order K must be an integer >= 2, got {K!r}")
    K = int(K)
    al = order.alpha
    g_a = gamma(al)
    g_am1 = g_a / (al - 1.0)  # Gamma(alpha - 1) by recurrence
    g_1ma = gamma(1.0 - al)
    g_2ma = (1.0 - al) * g_1ma

    r = _ratios(al, K)  # r[p-1] = Gamma(p-1+alpha)/(p-1)!
    p = np.arange(1, K + 1)
    A = (1.0 + np.sum(r[1:]) / g_a) / g_1ma
    B = (1.0 + np.sum(r / p) / g_am1) / g_2ma
    C = r[1:] / (g_2ma * g_am1)
    return ExpansionCoeffs(order, K, float(A), float(B), C)


def moment_left(x: Function, p: int, a: float, grid) -> np.ndarray:
    """``V_p`` on ``grid`` (``grid[0] == a``) by classical RK4 steps.

    The moment ODE has no state dependence, so each step reduces to
    Simpson's rule on the step.
    """
    grid = np.asarray(grid, dtype=float)
    h = np.diff(grid)
    mid = grid[:-1] + 0.5 * h
    f = lambda s: (1 - p) * (s - a) ** (p - 2) * _sample(x, s)
    steps = h / 6.0 * (f(grid[:-1]) + 4.0 * f(mid) + f(grid[1:]))
    return np.concatenate(([0.0], np.cumsum(steps)))


def moment_right(x: Function, p: int, b: float, grid) -> np.ndarray:
    """``W_p`` on ``grid`` (``grid[-1] == b``), integrated backward from ``W_p(b) = 0``."""
    grid = np.asarray(grid, dtype=float)
    h = np.diff(grid)
    mid = grid[:-1] + 0.5 * h
    f = lambda s: -(1 - p) * (b - s) ** (p - 2) * _sample(x, s)
    steps = h / 6.0 * (f(grid[:-1]) + 4.0 * f(mid) + f(grid[1:]))
    return -np.concatenate((np.cumsum(steps[::-1])[::-1], [0.0]))


def _sample(x: Function, s):
    return x(s) if isinstance(x, GridFn) else _evaluate(x, np.asarray(s, dtype=float))


def _slope_at(x: Function, t: float, lo: float, hi: float, dx: Callable | None) -> float:
    if dx is not None:
        return float(_evaluate(dx, np.array([t]))[0])
    if isinstance(x, GridFn):
        return float(x.derivative(t))
    return float(_fd_derivative(x, np.array([t]), lo, hi)[0])


def approx_left_rl(x: Function, c: ExpansionCoeffs, a: float, t: float, *, dx=None, steps: int = 2000) -> float:
    """Expansion approximation of the left Riemann-Liouville derivative at ``t``."""
    if not t > a:
        raise DomainError(f"left expansion needs t > a, got a={a}, t={t}")
    tau = t - a
    al = c.alpha
    grid = np.linspace(a, t, steps + 1)
    value = c.A * tau ** (-al) * _point(x, t) + c.B * tau ** (1 - al) * _slope_at(x, t, a, t, dx)
    for p in c.moments:
        value -= c.C_p(p) * tau ** (1 - p - al) * moment_left(x, p, a, grid)[-1]
    return float(value)


def approx_right_rl(x: Function, c: ExpansionCoeffs, b: float, t: float, *, dx=None, steps: int = 2000) -> float:
    """Expansion approximation of the right Riemann-Liouville derivative at ``t``.

    Uses the reflection of the left formula, so the moment sum enters with a
    minus sign: ``A x (b-t)^-a - B x' (b-t)^(1-a) - sum C_p (b-t)^(1-p-a) W_p``.
    """
    if not t < b:
        raise DomainError(f"right expansion needs t < b, got b={b}, t={t}")
    tau = b - t
    al = c.alpha
    grid = np.linspace(t, b, steps + 1)
    value = c.A * tau ** (-al) * _point(x, t) - c.B * tau ** (1 - al) * _slope_at(x, t, t, b, dx)
    for p in c.moments:
        value -= c.C_p(p) * tau ** (1 - p - al) * moment_right(x, p, b, grid)[0]
    return float(value)


def approx_caputo_left(x: Function, c: ExpansionCoeffs, a: float, t: float, *, dx=None, steps: int = 2000) -> float:
    """Left Caputo derivative via the expansion and the Caputo/RL relation."""
    rl = approx_left_rl(x, c, a, t, dx=dx, steps=steps)
    return rl - _point(x, a) * (t - a) ** (-c.alpha) / gamma(1.0 - c.alpha)


def approx_caputo_right(x: Function, c: ExpansionCoeffs, b: float, t: float, *, dx=None, steps: int = 2000) -> float:
    """Right Caputo derivative via the expansion and the Caputo/RL relation."""
    rl = approx_right_rl(x, c, b, t, dx=dx, steps=steps)
    return rl - _point(x, b) * (b - t) ** (-c.alpha) / gamma(1.0 - c.alpha)
