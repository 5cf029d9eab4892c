"""Built-in problems and the quadratic catalog form used by config files.

The catalog form is

    L   = wc + wx (x - xr)^2 + wu (u - ur)^2 + wm (ct t u - cx x)^2
    f   = f0 + fx x + fu u + ft t^pt
    phi = px (x - xf)^2

which covers both worked examples and the classical toy. Its stationary
condition is linear in ``u`` and is inverted in closed form.
"""

from __future__ import annotations

import numpy as np

from .errors import UsageError
from .fracops import gamma
from .model import (
    FixedBoth,
    FixedTimeFreeState,
    FocpSpec,
    FreeTimeFixedState,
    FreeTimeFreeState,
)

CATALOG_KEYS = ("wc", "wx", "xr", "wu", "ur", "wm", "ct", "cx", "f0", "fx", "fu", "ft", "pt", "px", "xf")
_DEFAULTS = dict(wc=0.0, wx=0.0, xr=0.0, wu=0.0, ur=0.0, wm=0.0, ct=1.0, cx=0.0,
                 f0=0.0, fx=0.0, fu=1.0, ft=0.0, pt=0.0, px=0.0, xf=0.0)


def quadratic_problem(alpha, terminal, *, m_coef=1.0, n_coef=1.0, a=0.0, A_cost=None,
                      x_start=0.0, name="quadratic", **coefs) -> FocpSpec:
    unknown = set(coefs) - set(CATALOG_KEYS)
    if unknown:
        raise UsageError(f"unknown catalog coefficients: {sorted(unknown)}")
    c = {**_DEFAULTS, **{k: float(v) for k, v in coefs.items()}}
    wc, wx, xr, wu, ur, wm, ct, cx = (c[k] for k in ("wc", "wx", "xr", "wu", "ur", "wm", "ct", "cx"))
    f0, fx, fu, ft, pt, px, xf = (c[k] for k in ("f0", "fx", "fu", "ft", "pt", "px", "xf"))
    if wu == 0.0 and wm == 0.0:
        raise UsageError("catalog problem needs wu or wm nonzero for a solvable stationary condition")

    def L(t, x, u):
        return wc + wx * (x - xr) ** 2 + wu * (u - ur) ** 2 + wm * (ct * t * u - cx * x) ** 2

    def L_x(t, x, u):
        return 2 * wx * (x - xr) - 2 * wm * cx * (ct * t * u - cx * x)

    def L_u(t, x, u):
        return 2 * wu * (u - ur) + 2 * wm * ct * t * (ct * t * u - cx * x)

    def f(t, x, u):
        return f0 + fx * x + fu * u + ft * np.power(t, pt)

    def f_x(t, x, u):
        return fx + 0.0 * (t + x + u)

    def f_u(t, x, u):
        return fu + 0.0 * (t + x + u)

    def u_opt(t, x, lam):
        return (2 * wu * ur + 2 * wm * ct * cx * t * x - lam * fu) / (2 * wu + 2 * wm * ct**2 * t**2)

    return FocpSpec(
        L=L, f=f, terminal=terminal, alpha=alpha, m_coef=m_coef, n_coef=n_coef, a=a,
        A_cost=A_cost, x_start=x_start,
        phi=lambda t, x: px * (x - xf) ** 2,
        phi_t=lambda t, x: 0.0 * x,
        phi_x=lambda t, x: 2 * px * (x - xf),
        L_x=L_x, L_u=L_u, f_x=f_x, f_u=f_u, u_opt=u_opt,
        name=name, meta={"coefficients": c},
    )


def example41(alpha=0.5) -> FocpSpec:
    """Fixed-time example with the known solution ``x = 2 t^(alpha+2) / Gamma(alpha+3)``."""
    x_T = 2.0 / gamma(3.0 + alpha)
    return quadratic_problem(alpha, FixedBoth(1.0, x_T), wm=1.0, ct=1.0, cx=alpha + 2.0,
                             fu=1.0, ft=1.0, pt=2.0, name="example41")


def example41_exact(alpha=0.5):
    """Exact optimal pair ``(x, u)`` of :func:`example41` as callables."""
    cx = 2.0 / gamma(alpha + 3.0)
    cu = 2.0 / gamma(alpha + 2.0)
    return (lambda t: cx * np.power(t, alpha + 2.0), lambda t: cu * np.power(t, alpha + 1.0))


def example42(alpha=0.5) -> FocpSpec:
    """Free-time variant of :func:`example41` with ``x(T) = 1``."""
    return quadratic_problem(alpha, FreeTimeFixedState(1.0), wm=1.0, ct=1.0, cx=alpha + 2.0,
                             fu=1.0, ft=1.0, pt=2.0, name="example42")


def classical_toy(alpha=0.5) -> FocpSpec:
    """Integer-order check: L = 1 + u^2, x' = u, x(0) = 0, x(T) = 1, T free.

    The optimum is u = 1, T = 1, J = 2 with costate -2.
    """
    return quadratic_problem(alpha, FreeTimeFixedState(1.0), m_coef=1.0, n_coef=0.0,
                             wc=1.0, wu=1.0, fu=1.0, name="classical_toy")


BUILTINS = {
    "example41": example41,
    "example42": example42,
    "classical_toy": classical_toy,
}


def references(name: str, alpha=0.5):
    """Exact state trajectory for built-ins that have one, else None."""
    if name == "example41":
        return example41_exact(alpha)[0]
    if name == "classical_toy":
        return lambda t: np.asarray(t, dtype=float)
    return None


def terminal_from_config(kind: str, T=None, x_T=None):
    kind = kind.replace("-", "_")
    if kind == "fixed_both":
        return FixedBoth(float(T), float(x_T))
    if kind == "fixed_time_free_state":
        return FixedTimeFreeState(float(T))
    if kind == "free_time_fixed_state":
        return FreeTimeFixedState(float(x_T))
    if kind == "free_time_free_state":
        return FreeTimeFreeState()
    raise UsageError(f"unsupported terminal mode {kind!r}")
