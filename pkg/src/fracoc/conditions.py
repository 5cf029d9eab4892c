"""Numerical residuals of the fractional optimality conditions.

A candidate ``(x, u, lam, T)`` sampled on a grid over ``[a, T]`` is checked
against

* the Hamiltonian system
  ``m lam' - n tD_T^a lam = -H_x`` and ``m x' + n C aD_t^a x = H_lam``,
* the stationary condition ``H_u = 0``,
* the transversality conditions at ``T``, in the variant that matches the
  terminal mode,

with every fractional operator taken from :mod:`fracops`. Two brackets at
``t = T`` recur throughout::

    B1 = H - n lam C_D x + n x' I lam + phi_t     (horizon bracket)
    B2 = m lam + n I lam - phi_x                  (state bracket)

where ``I lam = tI_T^(1-alpha) lam``, which vanishes at ``t = T`` for any
bounded costate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import model
from .errors import UsageError
from .expansion import EPS
from .fracops import GridFn, caputo_left, rl_derivative_right, rl_integral_right

DEFAULT_THRESHOLD = 1e-2


@dataclass(frozen=True, eq=False)
class CandidateTriplet:
    """Sampled state, control and costate sharing one grid that ends at ``T``."""

    x: GridFn
    u: GridFn
    lam: GridFn
    T: float

    def __post_init__(self):
        if not (self.x.same_grid(self.u) and self.x.same_grid(self.lam)):
            raise UsageError("x, u and lambda must share one grid")
        T = float(self.T)
        span = self.x.end - self.x.start
        if abs(self.x.end - T) > 1e-9 * max(1.0, span):
            raise UsageError(f"grid ends at {self.x.end}, not at T = {T}")
        object.__setattr__(self, "T", T)

    @property
    def grid(self) -> np.ndarray:
        return self.x.grid

    @classmethod
    def from_arrays(cls, t, x, u, lam, T=None) -> "CandidateTriplet":
        t = np.asarray(t, dtype=float)
        return cls(GridFn(t, x), GridFn(t, u), GridFn(t, lam), float(t[-1]) if T is None else T)

    @classmethod
    def from_report(cls, report, a: Optional[float] = None) -> "CandidateTriplet":
        """Triplet from a solver report.

        Solver grids start a tiny offset after ``a``; passing ``a`` prepends
        that point, extrapolating each column linearly from its first two
        samples so the gap introduces no artificial kink.
        """
        t, cols = extend_to(a, report.t, [report.x.values, report.u.values, report.lambda_.values])
        return cls.from_arrays(t, *cols, T=report.T)


def extend_to(a: Optional[float], t, cols):
    """Prepend ``a`` to grid ``t`` with linearly extrapolated columns."""
    t = np.asarray(t, dtype=float)
    if a is None or t[0] <= a:
        return t, cols
    w = (a - t[0]) / (t[1] - t[0])
    head = [c[0] + w * (c[1] - c[0]) for c in cols]
    return np.concatenate(([a], t)), [np.concatenate(([h], c)) for h, c in zip(head, cols)]


@dataclass(frozen=True)
class ConditionsReport:
    """Max-norm residuals of one candidate; all entries are non-negative.

    Inequality variants contribute their signed slack clipped at zero, so a
    feasible slack reads as 0.
    """

    hamiltonian_state_residual: float
    hamiltonian_costate_residual: float
    stationarity_residual: float
    transversality_residuals: np.ndarray
    transversality_labels: tuple = ()
    extra_interval_residual: Optional[float] = None
    threshold: float = DEFAULT_THRESHOLD
    details: dict = field(default_factory=dict, compare=False)

    def items(self):
        yield "hamiltonian_state", self.hamiltonian_state_residual
        yield "hamiltonian_costate", self.hamiltonian_costate_residual
        yield "stationarity", self.stationarity_residual
        for label, value in zip(self.transversality_labels, self.transversality_residuals):
            yield f"transversality_{label}", float(value)
        if self.extra_interval_residual is not None:
            yield "extra_interval", self.extra_interval_residual

    @property
    def max_residual(self) -> float:
        return max((v for _, v in self.items()), default=0.0)

    @property
    def satisfied(self) -> bool:
        return self.max_residual <= self.threshold

    def failures(self) -> list:
        return [k for k, v in self.items() if not v <= self.threshold]

    def format(self) -> str:
        lines = [f"{k} = {v:.6e}" for k, v in self.items()]
        lines.append(f"threshold = {self.threshold:.3e}")
        lines.append(f"satisfied = {str(self.satisfied).lower()}")
        return "\n".join(lines) + "\n"


# -- pieces -----------------------------------------------------------------


def _interior(grid: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Indices of interior nodes within ``[lo, hi]``."""
    idx = np.arange(1, grid.size - 1)
    t = grid[idx]
    return idx[(t >= lo) & (t <= hi)]


def _max_abs(values) -> float:
    values = np.asarray(values, dtype=float)
    return float(np.max(np.abs(values))) if values.size else 0.0


def _hamiltonian_system(spec, H, cand, lo, hi, x_lower):
    """Costate, state and stationarity residual profiles on ``[lo, hi]``."""
    t_all = cand.grid
    idx = _interior(t_all, lo, hi)
    t = t_all[idx]
    x, u, lam = cand.x.values[idx], cand.u.values[idx], cand.lam.values[idx]
    m, n, alpha = spec.m_coef, spec.n_coef, spec.alpha
    xd = cand.x.derivative.values[idx]
    ld = cand.lam.derivative.values[idx]
    right = np.zeros(idx.size)
    left = np.zeros(idx.size)
    if n != 0:
        right = np.array([rl_derivative_right(cand.lam, alpha, cand.T, s) for s in t])
        left = np.array([caputo_left(cand.x, alpha, x_lower, s) for s in t])
    costate = m * ld - n * right + H.dx(t, x, u, lam)
    state = m * xd + n * left - H.dlam(t, x, u, lam)
    stationary = H.du(t, x, u, lam)
    return t, costate, state, stationary


def _brackets(spec, cand, H):
    """The horizon bracket ``B1`` and state bracket ``B2`` at ``t = T``."""
    T = cand.T
    xT, uT, lT = float(cand.x(T)), float(cand.u(T)), float(cand.lam(T))
    n = spec.n_coef
    cd = caputo_left(cand.x, spec.alpha, spec.a, T) if n != 0 else 0.0
    # I lam(T) = tI_T^(1-alpha) lam at t = T is an empty integral
    i_lam = 0.0
    xd = float(cand.x.derivative(T))
    b1 = float(H(T, xT, uT, lT)) - n * lT * cd + n * xd * i_lam + float(spec.dphi_dt(T, xT))
    b2 = spec.m_coef * lT + n * i_lam - float(spec.dphi_dx(T, xT))
    return b1, b2


def _check_mode(spec, cand, mode):
    if mode != spec.terminal:
        raise UsageError(f"terminal mode {mode!r} does not match the problem's {spec.terminal!r}")
    scale = max(1.0, abs(cand.T))
    if mode.time_fixed and abs(cand.T - mode.T) > 1e-6 * scale:
        raise UsageError(f"candidate horizon {cand.T} differs from the fixed T = {mode.T}")


# -- public API -------------------------------------------------------------


def transversality(spec: model.FocpSpec, cand: CandidateTriplet, mode=None) -> np.ndarray:
    """Signed transversality residuals for ``mode`` (default: the problem's).

    Equality variants return their brackets. The two inequality variants
    return ``[slack, complementarity]`` where a feasible slack is ``<= 0``:

    * ``x(T) >= K`` with ``T`` fixed: slack ``B2``; complementarity ``|B2|``
      while ``x(T) > K`` and ``|(x(T) - K) B2|`` once the bound is active.
    * ``T <= K`` with ``x(T)`` fixed: slack ``-B1``; complementarity ``|B1|``
      while ``T < K`` and ``|(T - K) B1|`` once the bound is active.
    """
    mode = spec.terminal if mode is None else mode
    _check_mode(spec, cand, mode)
    values, _ = _variant(spec, cand, mode)
    return values


def _variant(spec, cand, mode):
    H = model.make_hamiltonian(spec)
    b1, b2 = _brackets(spec, cand, H)
    T = cand.T
    if isinstance(mode, model.FixedBoth):
        return np.zeros(0), ()
    if isinstance(mode, model.FixedTimeFreeState):
        return np.array([b2]), ("state",)
    if isinstance(mode, model.FreeTimeFixedState):
        return np.array([b1]), ("horizon",)
    if isinstance(mode, model.FreeTimeFreeState):
        return np.array([b1, b2]), ("horizon", "state")
    if isinstance(mode, model.Curve):
        return np.array([b1 - mode.slope(T) * b2]), ("curve",)
    if isinstance(mode, model.FixedTimeStateLowerBound):
        xT = float(cand.x(T))
        comp = abs(b2) if xT > mode.bound else abs((xT - mode.bound) * b2)
        return np.array([b2, comp]), ("slack", "complementarity")
    if isinstance(mode, model.FixedStateTimeUpperBound):
        comp = abs(b1) if T < mode.bound else abs((T - mode.bound) * b1)
        return np.array([-b1, comp]), ("slack", "complementarity")
    raise UsageError(f"unsupported terminal mode {type(mode).__name__}")


def _report_values(values, labels):
    out = np.abs(values)
    for k, label in enumerate(labels):
        if label == "slack":
            out[k] = max(values[k], 0.0)
    return out


def necessary_residuals(spec: model.FocpSpec, cand: CandidateTriplet, *,
                        threshold: float = DEFAULT_THRESHOLD, eps: float = EPS) -> ConditionsReport:
    """Residuals of the Hamiltonian system, stationarity and transversality.

    Interior grid nodes in ``[a + eps (T - a), T]`` are checked, which keeps
    ``1/t`` stationary solutions and the endpoint singularities of the
    fractional operators out of the max norm.
    """
    if spec.generalized:
        raise UsageError("A_cost > a: use generalized_residuals for this problem")
    a = spec.a
    if abs(cand.x.start - a) > 1e-9 * max(1.0, cand.T - a):
        raise UsageError(f"candidate grid must start at a = {a}, got {cand.x.start}")
    H = model.make_hamiltonian(spec)
    lo = a + eps * (cand.T - a)
    t, costate, state, stationary = _hamiltonian_system(spec, H, cand, lo, cand.T, a)
    values, labels = _variant(spec, cand, spec.terminal)
    return ConditionsReport(
        hamiltonian_state_residual=_max_abs(state),
        hamiltonian_costate_residual=_max_abs(costate),
        stationarity_residual=_max_abs(stationary),
        transversality_residuals=_report_values(values, labels),
        transversality_labels=labels,
        threshold=threshold,
        details={"t": t, "costate": costate, "state": state, "stationarity": stationary,
                 "transversality_signed": values},
    )


def generalized_residuals(spec: model.FocpSpec, cand: CandidateTriplet, *,
                          threshold: float = DEFAULT_THRESHOLD, eps: float = EPS) -> ConditionsReport:
    """Residuals for a cost integral over ``[A, T]`` with memory from ``a < A``.

    On ``[A, T]`` the Hamiltonian system and stationarity are checked as
    usual. On ``[a, A)`` the costate must satisfy
    ``tD_T^alpha lam - tD_A^alpha lam = 0``. The third transversality
    condition ``[tI_T^(1-alpha) lam - tI_A^(1-alpha) lam]_(t=a) = 0`` is
    appended unless ``spec.fixed_at_a`` says both ``x(a)`` and ``x(A)`` are
    prescribed. No boundary data for ``lam`` on ``[a, A]`` is assumed.
    """
    if not spec.generalized:
        raise UsageError("A_cost == a: use necessary_residuals for this problem")
    a, A, T, alpha = spec.a, spec.A_cost, cand.T, spec.alpha
    if abs(cand.x.start - a) > 1e-9 * max(1.0, T - a):
        raise UsageError(f"candidate grid must start at a = {a}, got {cand.x.start}")
    if not A < T:
        raise UsageError(f"A_cost = {A} must lie before T = {T}")
    H = model.make_hamiltonian(spec)
    lo = A + eps * (T - A)
    t, costate, state, stationary = _hamiltonian_system(spec, H, cand, lo, T, a)

    grid = cand.grid
    pre = grid[(grid >= a) & (grid < A)]
    extra = np.array([rl_derivative_right(cand.lam, alpha, T, s) - rl_derivative_right(cand.lam, alpha, A, s)
                      for s in pre])

    values, labels = _variant(spec, cand, spec.terminal)
    if not spec.fixed_at_a:
        third = rl_integral_right(cand.lam, 1.0 - alpha.alpha, T, a) - rl_integral_right(
            cand.lam, 1.0 - alpha.alpha, A, a)
        values = np.append(values, third)
        labels = labels + ("initial",)
    return ConditionsReport(
        hamiltonian_state_residual=_max_abs(state),
        hamiltonian_costate_residual=_max_abs(costate),
        stationarity_residual=_max_abs(stationary),
        transversality_residuals=_report_values(values, labels),
        transversality_labels=labels,
        extra_interval_residual=_max_abs(extra),
        threshold=threshold,
        details={"t": t, "extra_t": pre, "extra": extra, "transversality_signed": values},
    )


# -- sufficiency ------------------------------------------------------------


@dataclass(frozen=True)
class Certificate:
    certified: bool
    report: str
    failed: tuple = ()


def _midpoint_gap(fn, t, p, q):
    """``(g(p) + g(q))/2 - g((p+q)/2)`` with a matching scale; >= 0 when convex."""
    gp, gq = fn(t, *p), fn(t, *q)
    gm = fn(t, *[(pi + qi) / 2.0 for pi, qi in zip(p, q)])
    gap = 0.5 * (gp + gq) - gm
    scale = 1.0 + np.abs(gp) + np.abs(gq) + np.abs(gm)
    return np.asarray(gap, dtype=float), np.asarray(scale, dtype=float)


def certify_sufficient(spec: model.FocpSpec, cand: CandidateTriplet, samples: int = 1000, *,
                       seed: int = 0, threshold: float = DEFAULT_THRESHOLD,
                       tol: float = 1e-9) -> Certificate:
    """Check the sufficiency hypotheses on a sampled cloud.

    Certified only if the necessary conditions hold below ``threshold``,
    ``L`` and ``f`` pass midpoint convexity in ``(x, u)``, ``phi`` passes it
    in ``x``, and either ``lam >= 0`` on the grid or ``f`` is affine in
    ``(x, u)`` (midpoint second differences vanish). Failing hypotheses are
    named in the report.
    """
    term = spec.terminal
    if not isinstance(term, (model.FixedTimeFreeState, model.FixedBoth)):
        raise UsageError("sufficiency needs a fixed horizon (FixedTimeFreeState or FixedBoth)")
    if samples < 1:
        raise UsageError("samples must be positive")
    rng = np.random.default_rng(seed)
    a, T = spec.a, cand.T

    def box(v):
        lo, hi = float(np.min(v)), float(np.max(v))
        pad = max(1.0, hi - lo)
        return lo - pad, hi + pad

    xb, ub = box(cand.x.values), box(cand.u.values)
    t = rng.uniform(a, T, samples)
    p = (rng.uniform(*xb, samples), rng.uniform(*ub, samples))
    q = (rng.uniform(*xb, samples), rng.uniform(*ub, samples))
    directions = {
        "x": (p, (q[0], p[1])),
        "u": (p, (p[0], q[1])),
        "(x, u)": (p, q),
    }

    lines, failed = [], []

    def record(name, ok, note=""):
        lines.append(f"[{'ok' if ok else 'FAIL'}] {name}{': ' + note if note else ''}")
        if not ok:
            failed.append(name)

    for fname, fn in (("L", spec.L), ("f", spec.f)):
        for dname, (pp, qq) in directions.items():
            gap, scale = _midpoint_gap(fn, t, pp, qq)
            worst = float(np.min(gap / scale))
            record(f"{fname} convex in {dname}", worst >= -tol, f"worst scaled midpoint gap {worst:.3e}")

    xs, ys = rng.uniform(*xb, samples), rng.uniform(*xb, samples)
    gap, scale = _midpoint_gap(lambda tt, xx: spec.phi(tt, xx), np.full(samples, T), (xs,), (ys,))
    worst = float(np.min(gap / scale))
    record("phi convex in x", worst >= -tol, f"worst scaled midpoint gap {worst:.3e}")

    gap, scale = _midpoint_gap(spec.f, t, p, q)
    affine = float(np.max(np.abs(gap) / scale)) <= tol
    lam_min = float(np.min(cand.lam.values))
    sign_ok = lam_min >= -tol
    record("lambda >= 0 or f linear in (x, u)", sign_ok or affine,
           f"min lambda {lam_min:.3e}, f {'affine' if affine else 'not affine'}")

    nec = necessary_residuals(spec, cand, threshold=threshold)
    record("necessary conditions", nec.satisfied,
           f"max residual {nec.max_residual:.3e} vs threshold {threshold:.1e}"
           + (f" ({', '.join(nec.failures())})" if nec.failures() else ""))

    certified = not failed
    lines.insert(0, f"certified = {str(certified).lower()}")
    return Certificate(certified, "\n".join(lines) + "\n", tuple(failed))
