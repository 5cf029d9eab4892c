"""Fractional optimal control problem statement and its Hamiltonian.

The problem is

    minimize    J = int_A^T L(t, x, u) dt + phi(T, x(T))
    subject to  m x' + n C_aD_t^alpha x = f(t, x, u),   x(A) = x_start,

with ``A == a`` in the basic setting and ``A > a`` in the generalized one.
All user callables must accept numpy arrays and broadcast elementwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import UsageError
from .fracops import GridFn, Order, as_order, caputo_left

Fn3 = Callable[..., np.ndarray]


# -- terminal modes ---------------------------------------------------------


@dataclass(frozen=True)
class TerminalMode:
    time_fixed = False
    state_fixed = False

    @property
    def T(self) -> Optional[float]:
        return None

    @property
    def x_T(self) -> Optional[float]:
        return None


@dataclass(frozen=True)
class FreeTimeFreeState(TerminalMode):
    pass


@dataclass(frozen=True)
class FixedTimeFreeState(TerminalMode):
    T_fixed: float
    time_fixed = True

    @property
    def T(self):
        return self.T_fixed


@dataclass(frozen=True)
class FreeTimeFixedState(TerminalMode):
    x_fixed: float
    state_fixed = True

    @property
    def x_T(self):
        return self.x_fixed


@dataclass(frozen=True)
class FixedBoth(TerminalMode):
    T_fixed: float
    x_fixed: float
    time_fixed = True
    state_fixed = True

    @property
    def T(self):
        return self.T_fixed

    @property
    def x_T(self):
        return self.x_fixed


@dataclass(frozen=True)
class Curve(TerminalMode):
    """Terminal point constrained to ``x(T) = gamma(T)``."""

    gamma: Callable[[float], float]
    dgamma: Optional[Callable[[float], float]] = None

    def slope(self, t: float) -> float:
        if self.dgamma is not None:
            return float(self.dgamma(t))
        h = 1e-6 * max(1.0, abs(t))
        return (float(self.gamma(t + h)) - float(self.gamma(t - h))) / (2 * h)


@dataclass(frozen=True)
class FixedTimeStateLowerBound(TerminalMode):
    """``T`` fixed and ``x(T) >= bound``."""

    T_fixed: float
    bound: float
    time_fixed = True

    def __post_init__(self):
        if not np.isfinite(self.bound):
            raise UsageError("state bound must be finite")

    @property
    def T(self):
        return self.T_fixed


@dataclass(frozen=True)
class FixedStateTimeUpperBound(TerminalMode):
    """``x(T)`` fixed and ``T <= bound``."""

    x_fixed: float
    bound: float
    state_fixed = True

    def __post_init__(self):
        if not np.isfinite(self.bound):
            raise UsageError("time bound must be finite")

    @property
    def x_T(self):
        return self.x_fixed


# -- problem ----------------------------------------------------------------


def _zero2(t, x):
    return np.zeros(np.broadcast(t, x).shape)


@dataclass(frozen=True, eq=False)
class FocpSpec:
    """A scalar fractional optimal control problem.

    Optional analytic partials (``L_x``, ``L_u``, ``f_x``, ``f_u``,
    ``phi_t``, ``phi_x``) take precedence over finite differences.
    ``u_opt(t, x, lam)`` is a closed-form solution of the stationary
    condition ``dH/du = 0``; without it the solver root-solves pointwise.
    """

    L: Fn3
    f: Fn3
    terminal: TerminalMode
    alpha: Order
    m_coef: float = 1.0
    n_coef: float = 1.0
    a: float = 0.0
    A_cost: Optional[float] = None
    x_start: float = 0.0
    phi: Callable = _zero2
    L_x: Optional[Fn3] = None
    L_u: Optional[Fn3] = None
    f_x: Optional[Fn3] = None
    f_u: Optional[Fn3] = None
    phi_t: Optional[Callable] = None
    phi_x: Optional[Callable] = None
    u_opt: Optional[Fn3] = None
    fixed_at_a: bool = False
    name: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "alpha", as_order(self.alpha))
        if self.A_cost is None:
            object.__setattr__(self, "A_cost", self.a)
        if self.m_coef == 0 and self.n_coef == 0:
            raise UsageError("(m_coef, n_coef) must not both vanish")
        if self.A_cost < self.a:
            raise UsageError(f"A_cost={self.A_cost} lies before a={self.a}")

    @property
    def generalized(self) -> bool:
        return self.A_cost > self.a

    def dphi_dt(self, t, x):
        if self.phi_t is not None:
            return self.phi_t(t, x)
        h = 1e-6 * max(1.0, abs(float(np.max(np.abs(t)))))
        return (self.phi(t + h, x) - self.phi(t - h, x)) / (2 * h)

    def dphi_dx(self, t, x):
        if self.phi_x is not None:
            return self.phi_x(t, x)
        h = 1e-6 * np.maximum(1.0, np.abs(x))
        return (self.phi(t, x + h) - self.phi(t, x - h)) / (2 * h)


# -- Hamiltonian ------------------------------------------------------------


def _central(fn: Fn3, which: int) -> Fn3:
    def d(t, x, u):
        args = [np.asarray(t, float), np.asarray(x, float), np.asarray(u, float)]
        h = 1e-6 * np.maximum(1.0, np.abs(args[which]))
        hi = list(args)
        lo = list(args)
        hi[which] = args[which] + h
        lo[which] = args[which] - h
        return (fn(*hi) - fn(*lo)) / (2 * h)

    return d


@dataclass(frozen=True, eq=False)
class Hamiltonian:
    """``H = L + lam * f`` with its partial derivatives."""

    L: Fn3
    f: Fn3
    L_x: Fn3
    L_u: Fn3
    f_x: Fn3
    f_u: Fn3

    def __call__(self, t, x, u, lam):
        return self.L(t, x, u) + lam * self.f(t, x, u)

    def dx(self, t, x, u, lam):
        return self.L_x(t, x, u) + lam * self.f_x(t, x, u)

    def du(self, t, x, u, lam):
        return self.L_u(t, x, u) + lam * self.f_u(t, x, u)

    def dlam(self, t, x, u, lam):
        return self.f(t, x, u)


def make_hamiltonian(spec: FocpSpec) -> Hamiltonian:
    return Hamiltonian(
        L=spec.L,
        f=spec.f,
        L_x=spec.L_x or _central(spec.L, 1),
        L_u=spec.L_u or _central(spec.L, 2),
        f_x=spec.f_x or _central(spec.f, 1),
        f_u=spec.f_u or _central(spec.f, 2),
    )


# -- trajectory checks ------------------------------------------------------


def _check_pair(x: GridFn, u: GridFn):
    if not x.same_grid(u):
        raise UsageError("x and u must share one grid")


def admissible(spec: FocpSpec, x: GridFn, u: GridFn) -> float:
    """Dynamics defect of a sampled pair plus the initial-value defect.

    The Caputo derivative is taken with lower limit ``spec.a``, so in the
    generalized setting ``x`` must be sampled from ``a`` on.
    """
    _check_pair(x, u)
    t = x.grid
    xd = x.derivative.values
    interior = np.zeros(t.size, dtype=bool)
    interior[1:-1] = True
    interior &= (t >= spec.A_cost) & (t > spec.a)
    idx = np.flatnonzero(interior)
    frac = np.zeros(idx.size)
    if spec.n_coef != 0:
        frac = np.array([caputo_left(x, spec.alpha, spec.a, t[k]) for k in idx])
    defect = spec.m_coef * xd[idx] + spec.n_coef * frac - spec.f(t[idx], x.values[idx], u.values[idx])
    dyn = float(np.max(np.abs(defect))) if idx.size else 0.0
    return dyn + abs(float(x(spec.A_cost)) - spec.x_start)


def cost(spec: FocpSpec, x: GridFn, u: GridFn, T: Optional[float] = None) -> float:
    """Trapezoidal running cost over ``[A_cost, T]`` plus the terminal cost."""
    _check_pair(x, u)
    T = x.end if T is None else float(T)
    slack = 1e-5 * (x.end - x.start)
    if T > x.end + slack or T < x.start:
        raise UsageError(f"T={T} lies outside the grid [{x.start}, {x.end}]")
    lo = max(spec.A_cost, x.start)
    hi = min(T, x.end)
    t = x.grid[(x.grid > lo) & (x.grid < hi)]
    t = np.concatenate(([lo], t, [hi]))
    run = spec.L(t, x(t), u(t))
    J = float(np.sum(0.5 * (run[1:] + run[:-1]) * np.diff(t)))
    return J + float(spec.phi(T, x(hi)))
