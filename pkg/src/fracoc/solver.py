"""Indirect solution of fractional optimal control problems by shooting.

Two routes lead to an integer-order two-point boundary value problem:

* ``fractional`` (route A): write the fractional necessary conditions first,
  then replace the left Caputo and right Riemann-Liouville derivatives by
  their moment expansions. State ``(x, V_2..V_K, lam, W_2..W_K)``.
* ``approximate`` (route B): expand the dynamics first, which gives a
  classical problem in ``(x, V_2..V_K)``, then apply the classical necessary
  conditions. State ``(x, V_2..V_K, lam_1..lam_K)``.

Every assembled problem is posed on the rescaled time ``s`` with
``t = a + (T - a) s`` so that a free ``T`` is just one more Newton unknown.
Integration starts at ``s = eps`` because the expansion terms and the
stationary solutions of the examples are singular at ``t = a``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from . import model
from .errors import AssemblyError, SolveError, UsageError
from .expansion import EPS, ExpansionCoeffs, coeffs
from .fracops import GridFn, gamma

log = logging.getLogger(__name__)


ROUTES = {"fractional": "fractional", "frac": "fractional", "a": "fractional",
          "approximate": "approximate", "approx": "approximate", "b": "approximate"}


def canonical_route(route: str) -> str:
    try:
        return ROUTES[route.lower()]
    except KeyError:
        raise UsageError(f"unknown route {route!r}") from None


@dataclass(frozen=True, eq=False)
class BvpProblem:
    """First-order system ``dy/ds = rhs(s, y, T)`` with two-point conditions.

    ``rhs`` and ``boundary`` are evaluated on batches: ``y`` has shape
    ``(dim, m)`` and ``T`` shape ``(m,)``. ``boundary(y_left, y_right, T)``
    returns ``dim`` rows (``dim + 1`` when ``T`` is free). ``T`` is the fixed
    horizon, or the initial guess when ``T_free``.
    """

    dim: int
    rhs: Callable
    boundary: Callable
    T: float = 1.0
    T_free: bool = False
    span: tuple = (0.0, 1.0)
    grading: str = "none"
    y_guess: Optional[np.ndarray] = None
    T_lower: float = 0.0
    time_of: Optional[Callable] = None
    extract: Optional[Callable] = None
    labels: tuple = ()

    @property
    def unknowns(self) -> int:
        return self.dim + int(self.T_free)


@dataclass(frozen=True, eq=False)
class SolveReport:
    t: np.ndarray
    y: np.ndarray
    T: float
    newton_iters: int
    boundary_residual_norm: float
    residual_history: list
    method: str
    labels: tuple = ()
    x: Optional[GridFn] = None
    u: Optional[GridFn] = None
    lambda_: Optional[GridFn] = None
    aux_V: list = field(default_factory=list)
    aux_W: list = field(default_factory=list)
    J: Optional[float] = None
    error_vs_reference: Optional[float] = None
    route: Optional[str] = None
    K: Optional[int] = None
    extras: dict = field(default_factory=dict)


# -- meshes and integration -------------------------------------------------


def _logit(p):
    return np.log(p / (1.0 - p))


def make_mesh(span, intervals: int, grading: str = "none") -> np.ndarray:
    """Mesh on ``span`` clustered geometrically toward singular ends.

    ``"both"`` assumes singular points at 0 and 1, ``"left"`` at 0 only.
    """
    s0, s1 = map(float, span)
    if grading == "none":
        return np.linspace(s0, s1, intervals + 1)
    if grading == "both":
        # a right end at 1 is clustered as if it sat at 1 - EPS
        y = np.linspace(_logit(s0), _logit(min(s1, 1.0 - EPS)), intervals + 1)
        s = 1.0 / (1.0 + np.exp(-y))
    elif grading == "left":
        y = np.linspace(_logit(0.5 * s0), _logit(0.5 * s1), intervals + 1)
        s = 2.0 / (1.0 + np.exp(-y))
    else:
        raise UsageError(f"unknown grading {grading!r}")
    s[0], s[-1] = s0, s1
    return s


def _rk4(rhs, nodes, Y, T, keep=False):
    out = [Y] if keep else None
    for i in range(nodes.size - 1):
        s, h = nodes[i], nodes[i + 1] - nodes[i]
        k1 = rhs(s, Y, T)
        k2 = rhs(s + 0.5 * h, Y + 0.5 * h * k1, T)
        k3 = rhs(s + 0.5 * h, Y + 0.5 * h * k2, T)
        k4 = rhs(s + h, Y + h * k3, T)
        Y = Y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if keep:
            out.append(Y)
    return np.stack(out) if keep else Y


class _Shooting:
    """Residual map of single (1 segment) or multiple shooting."""

    def __init__(self, p: BvpProblem, nodes: np.ndarray, segments: int):
        self.p = p
        self.nodes = nodes
        self.cuts = np.unique(np.linspace(0, nodes.size - 1, segments + 1).round().astype(int))
        self.segments = self.cuts.size - 1
        self.n = self.segments * p.dim + int(p.T_free)

    def T_of(self, Z):
        if self.p.T_free:
            return Z[-1]
        return np.full(Z.shape[1], self.p.T)

    def __call__(self, Z):
        p, d = self.p, self.p.dim
        T = self.T_of(Z)
        ends = []
        for k in range(self.segments):
            seg = self.nodes[self.cuts[k] : self.cuts[k + 1] + 1]
            ends.append(_rk4(p.rhs, seg, Z[k * d : (k + 1) * d], T))
        rows = [ends[k] - Z[(k + 1) * d : (k + 2) * d] for k in range(self.segments - 1)]
        rows.append(np.asarray(p.boundary(Z[:d], ends[-1], T), dtype=float))
        return np.concatenate(rows, axis=0)

    def trajectory(self, z):
        p, d = self.p, self.p.dim
        T = self.T_of(z[:, None])
        parts = []
        for k in range(self.segments):
            seg = self.nodes[self.cuts[k] : self.cuts[k + 1] + 1]
            Y = _rk4(p.rhs, seg, z[k * d : (k + 1) * d, None], T, keep=True)[:, :, 0]
            parts.append(Y if k == 0 else Y[1:])
        return np.concatenate(parts, axis=0)


def _norm(r):
    return float(np.max(np.abs(r))) if np.all(np.isfinite(r)) else np.inf


def fd_jacobian(F, z, r0=None, rel_step=1e-7, max_change=1e-3):
    """Forward-difference Jacobian with all columns evaluated in one batch.

    Columns whose probe moved the residual by more than ``max_change``
    (relative to ``1 + |r|``) are recomputed once with a proportionally
    smaller step, so unknowns with huge leverage are not probed far
    outside the linear regime.
    """
    h = rel_step * np.maximum(1.0, np.abs(z))
    J, base = _fd_columns(F, z, h, r0)
    scale = max_change * (1.0 + np.max(np.abs(base)))
    moved = np.max(np.abs(J), axis=0) * h
    shrink = np.isfinite(moved) & (moved > scale)
    if np.any(shrink):
        h2 = h.copy()
        h2[shrink] = h[shrink] * scale / moved[shrink]
        J2, _ = _fd_columns(F, z, h2, base)
        J[:, shrink] = J2[:, shrink]
    return J, base


def _fd_columns(F, z, h, r0):
    n = z.size
    Z = np.repeat(z[:, None], n + 1, axis=1)
    Z[np.arange(n), np.arange(1, n + 1)] += h
    with np.errstate(all="ignore"):
        R = F(Z)
    base = R[:, 0] if r0 is None else r0
    return (R[:, 1:] - base[:, None]) / h, R[:, 0] if r0 is None else r0


def _equilibrated_step(J, r):
    """Newton step with row and column equilibration.

    Costate unknowns at a singular start can move the terminal residuals by
    many orders of magnitude more than ``T`` does, so an unscaled solve
    loses the weak rows entirely.
    """
    rows = np.max(np.abs(J), axis=1)
    rows[rows == 0] = 1.0
    Jr = J / rows[:, None]
    cols = np.max(np.abs(Jr), axis=0)
    cols[cols == 0] = 1.0
    Js = Jr / cols[None, :]
    rhs = -r / rows
    try:
        y = np.linalg.solve(Js, rhs)
    except np.linalg.LinAlgError:
        y = np.linalg.lstsq(Js, rhs, rcond=None)[0]
    return y / cols


def _lm_steps(J, r):
    """Levenberg-Marquardt steps of increasing damping on column-scaled ``J``."""
    cols = np.max(np.abs(J), axis=0)
    cols[cols == 0] = 1.0
    Js = J / cols[None, :]
    A = Js.T @ Js
    g = Js.T @ r
    lam0 = np.max(np.diag(A))
    for mu in lam0 * 10.0 ** np.arange(-8, 5, 2, dtype=float):
        yield np.linalg.solve(A + mu * np.eye(A.shape[0]), -g) / cols


_STEPS = 2.0 ** -np.arange(13)


def _newton(F, z, tol, max_iter, T_index, T_lower, history):
    def evaluate(trials):
        """Residuals of the columns of ``trials``; inadmissible ones become NaN."""
        with np.errstate(all="ignore"):
            R = F(trials)
        if T_index is not None:
            R[:, ~(trials[T_index] > T_lower)] = np.nan
        return R

    with np.errstate(all="ignore"):
        r = F(z[:, None])[:, 0]
    history.append(_norm(r))
    for it in range(max_iter):
        if history[-1] <= tol:
            return z, r, it, True
        J, _ = fd_jacobian(F, z, r)
        if not np.all(np.isfinite(J)):
            return z, r, it, False
        phi0 = float(r @ r)
        delta = _equilibrated_step(J, r)
        # full step first; otherwise Armijo backtracking and then damped steps
        # for a useless (singular) Newton direction, all in one batched
        # integration where the first acceptable trial in this order wins
        trials = (z + delta)[:, None]
        R = evaluate(trials)
        merit = np.sum(R * R, axis=0)
        ok = np.isfinite(merit) & (merit <= (1.0 - 2e-4) * phi0)
        k, how = 0, "1"
        if not ok[0]:
            lm = list(_lm_steps(J, r))
            steps = _STEPS[1:]
            trials = np.column_stack([z + h * delta for h in steps] + [z + d for d in lm])
            R = evaluate(trials)
            merit = np.sum(R * R, axis=0)
            bound = np.concatenate([(1.0 - 2e-4 * steps) * phi0, np.full(len(lm), phi0)])
            ok = np.isfinite(merit) & (merit <= bound)
            ok[len(steps):] &= merit[len(steps):] < phi0
            if not np.any(ok):
                return z, r, it + 1, False
            k = int(np.argmax(ok))
            how = f"{steps[k]:.3g}" if k < len(steps) else "lm"
        z, r = trials[:, k], R[:, k]
        history.append(_norm(r))
        log.debug("newton iter %d: |r| = %.3e (step %s)", it + 1, history[-1], how)
    return z, r, max_iter, history[-1] <= tol


def solve_bvp(p: BvpProblem, mesh: int = 2000, tol: float = 1e-10, *, max_iter: int = 50,
              fallback_segments: int = 4) -> SolveReport:
    """Solve ``p`` by damped-Newton single shooting on a fixed RK4 mesh.

    If single shooting stalls, retries with multiple shooting on
    ``fallback_segments`` segments, warm-started from the last iterate.
    """
    if mesh < 32:
        raise UsageError(f"mesh must be >= 32 intervals, got {mesh}")
    if not tol > 0:
        raise UsageError("tol must be positive")
    nodes = make_mesh(p.span, mesh, p.grading)
    d = p.dim
    y0 = np.zeros(d) if p.y_guess is None else np.asarray(p.y_guess, dtype=float)
    z = np.concatenate((y0, [p.T])) if p.T_free else y0.copy()

    history: list = []
    single = _Shooting(p, nodes, 1)
    T_idx = d if p.T_free else None
    z, r, iters, ok = _newton(single, z, tol, max_iter, T_idx, p.T_lower, history)
    shoot, method = single, "single"

    if not ok and fallback_segments > 1:
        log.info("single shooting stalled at |r| = %.3e, trying %d segments", history[-1], fallback_segments)
        multi = _Shooting(p, nodes, fallback_segments)
        with np.errstate(all="ignore"):
            Y = single.trajectory(z)
        starts = [Y[c] if np.all(np.isfinite(Y[c])) else y0 for c in multi.cuts[:-1]]
        zm = np.concatenate(starts + ([z[-1:]] if p.T_free else []))
        T_idx = multi.n - 1 if p.T_free else None
        zm, r, more, ok = _newton(multi, zm, tol, max_iter, T_idx, p.T_lower, history)
        iters += more
        shoot, method, z = multi, f"multiple({multi.segments})", zm

    if not ok:
        raise SolveError(
            f"Newton did not converge: |r| = {history[-1]:.3e} > tol = {tol:.1e}",
            last_iterate=z, residual_history=history,
        )
    T = float(z[-1]) if p.T_free else float(p.T)
    if T <= p.T_lower:
        raise SolveError(f"terminal time iterate {T} is not admissible", last_iterate=z,
                         residual_history=history)
    Y = shoot.trajectory(z)
    t = p.time_of(nodes, T) if p.time_of is not None else nodes
    report = SolveReport(t=t, y=Y, T=T, newton_iters=iters, boundary_residual_norm=_norm(r),
                         residual_history=history, method=method, labels=p.labels)
    if p.extract is not None:
        report = replace(report, **p.extract(t, Y, T))
    return report


# -- route assembly ---------------------------------------------------------


def _stationary_solver(spec: model.FocpSpec, H: model.Hamiltonian):
    if spec.u_opt is not None:
        return spec.u_opt

    def solve_u(t, x, lam):
        t, x, lam = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float), np.asarray(lam, float))
        out = np.empty(t.shape)
        for i in np.ndindex(t.shape):
            g = lambda v: float(H.du(t[i], x[i], v, lam[i]))
            lo, hi, width = -1.0, 1.0, 1.0
            while g(lo) * g(hi) > 0:
                width *= 2.0
                lo, hi = -width, width
                if width > 1e12:
                    raise SolveError("stationary condition has no root", location=float(t[i]))
            out[i] = brentq(g, lo, hi, xtol=1e-14)
        return out

    return solve_u


class _Frame:
    """Quantities shared by both routes."""

    def __init__(self, spec: model.FocpSpec, K: int):
        if spec.generalized:
            raise UsageError("route assembly covers problems with A_cost == a only")
        self.spec = spec
        self.c: ExpansionCoeffs = coeffs(spec.alpha, K)
        self.K = K
        self.H = model.make_hamiltonian(spec)
        self.u_of = _stationary_solver(spec, self.H)
        self.m, self.n = float(spec.m_coef), float(spec.n_coef)
        self.al = spec.alpha.alpha
        self.caputo_shift = spec.x_start / gamma(1.0 - self.al)
        term = spec.terminal
        if isinstance(term, (model.Curve, model.FixedTimeStateLowerBound, model.FixedStateTimeUpperBound)):
            raise UsageError(f"solver supports fixed/free T and x(T) only, not {type(term).__name__}")
        self.T_free = not term.time_fixed
        self.state_fixed = term.state_fixed

    def denominator(self, tau):
        return self.m + self.n * self.c.B * tau ** (1.0 - self.al)

    def check_denominator(self, T):
        """Raise if ``m + n B tau^(1-alpha)`` vanishes for some tau in (0, T - a]."""
        if self.n == 0.0 or self.c.B == 0.0:
            if self.m == 0.0:
                raise AssemblyError("dynamics denominator vanishes identically")
            return
        ratio = -self.m / (self.n * self.c.B)
        if ratio > 0.0:
            root = ratio ** (1.0 / (1.0 - self.al))
            if root <= T - self.spec.a:
                raise AssemblyError(f"dynamics denominator vanishes at t = {self.spec.a + root:.6g}")
        elif ratio == 0.0:
            raise AssemblyError("dynamics denominator vanishes at t = a")

    def left_memory(self, tl, x, V):
        """The expanded left derivative without its ``B x'`` term (Caputo form)."""
        al, c = self.al, self.c
        out = (c.A * x - self.caputo_shift) * tl ** (-al)
        for i, p in enumerate(c.moments):
            out = out - c.C[i] * tl ** (1 - p - al) * V[i]
        return out

    def state_rates(self, t, tl, x, V, u):
        xdot = (self.spec.f(t, x, u) - self.n * self.left_memory(tl, x, V)) / self.denominator(tl)
        Vdot = [(1 - p) * tl ** (p - 2) * x for p in self.c.moments]
        return xdot, Vdot

    def T_start(self, T_guess):
        spec = self.spec
        if spec.terminal.time_fixed:
            return float(spec.terminal.T)
        if T_guess is None:
            return spec.a + 1.0
        if not T_guess > spec.a:
            raise UsageError(f"T_guess must exceed a = {spec.a}")
        return float(T_guess)


def _pack(Ks, arrays):
    out = np.empty((len(arrays), *Ks))
    for i, a in enumerate(arrays):
        out[i] = a
    return out


def assemble_route_a(spec: model.FocpSpec, K: int, *, T_guess=None,
                     free_time_condition: str = "auto", eps: float = EPS) -> BvpProblem:
    """Expand the fractional necessary conditions into an integer-order BVP.

    With free ``T`` and fixed ``x(T)`` the extra condition is ``lam(T) = 0``
    when ``n_coef != 0`` and the Hamiltonian transversality condition when
    the problem is classical (``free_time_condition="auto"``). Either can be
    forced with ``"costate"`` or ``"hamiltonian"``.

    Integration runs over ``s`` in ``[eps, 1]``. The right expansion is
    evaluated at distance ``(T - t) + eps (T - a)``, i.e. with its memory
    endpoint just past ``T``, so the terminal conditions sit exactly at ``T``.
    """
    fr = _Frame(spec, K)
    c, m, n, al, a = fr.c, fr.m, fr.n, fr.al, spec.a
    T0 = fr.T_start(T_guess)
    fr.check_denominator(T0)
    dim = 2 * K
    nv = K - 1

    def rhs(s, Y, T):
        span = T - a
        t = a + span * s
        tl, tr = span * s, span * (1.0 + eps - s)
        x, V, lam, W = Y[0], Y[1:K], Y[K], Y[K + 1 :]
        u = fr.u_of(t, x, lam)
        xdot, Vdot = fr.state_rates(t, tl, x, V, u)
        lamdot = -fr.H.dx(t, x, u, lam)
        if n != 0.0:
            right = c.A * tr ** (-al) * lam
            for i, p in enumerate(c.moments):
                right = right - c.C[i] * tr ** (1 - p - al) * W[i]
            lamdot = lamdot + n * right
        lamdot = lamdot / fr.denominator(tr)
        Wdot = [-(1 - p) * tr ** (p - 2) * lam for p in c.moments]
        return _pack(Y.shape[1:], [xdot, *Vdot, lamdot, *Wdot]) * span

    mode = free_time_condition
    if mode == "auto":
        mode = "costate" if n != 0.0 else "hamiltonian"
    if mode not in ("costate", "hamiltonian"):
        raise UsageError(f"unknown free-time condition {free_time_condition!r}")
    if not fr.state_fixed and m == 0.0:
        raise AssemblyError("free x(T) with m_coef = 0 leaves lam(T) undetermined")

    s0, s1 = eps, 1.0

    def hamiltonian_row(Y1, T):
        t = T
        x, lam = Y1[0], Y1[K]
        u = fr.u_of(t, x, lam)
        xdot = rhs(s1, Y1, T)[0] / (T - a)
        # H - n lam C_D x + phi_t with n C_D x = f - m x' and I^(1-a) lam(T) = 0
        return spec.L(t, x, u) + m * lam * xdot + spec.dphi_dt(t, x)

    def boundary(Y0, Y1, T):
        rows = [Y0[0] - spec.x_start, *Y0[1:K], *Y1[K + 1 :]]
        if fr.state_fixed:
            rows.append(Y1[0] - spec.terminal.x_T)
        else:
            rows.append(m * Y1[K] - spec.dphi_dx(T, Y1[0]))
        if fr.T_free:
            if fr.state_fixed and mode == "costate":
                rows.append(Y1[K])
            else:
                rows.append(hamiltonian_row(Y1, T))
        return _pack(Y0.shape[1:], rows)

    def extract(t, Y, T):
        x, lam = Y[:, 0], Y[:, K]
        u = fr.u_of(t, x, lam)
        xg = GridFn(t, x)
        ug = GridFn(t, np.broadcast_to(u, t.shape))
        return dict(x=xg, u=ug, lambda_=GridFn(t, lam),
                    aux_V=[GridFn(t, Y[:, 1 + i]) for i in range(nv)],
                    aux_W=[GridFn(t, Y[:, K + 1 + i]) for i in range(nv)],
                    J=model.cost(spec, xg, ug, T), route="fractional", K=K)

    y_guess = np.zeros(dim)
    y_guess[0] = spec.x_start
    labels = ("x", *[f"V{p}" for p in c.moments], "lambda", *[f"W{p}" for p in c.moments])
    return BvpProblem(dim=dim, rhs=rhs, boundary=boundary, T=T0, T_free=fr.T_free,
                      span=(s0, s1), grading="both" if n != 0.0 else "left",
                      y_guess=y_guess, T_lower=a, time_of=lambda s, T: a + (T - a) * s,
                      extract=extract, labels=labels)


def assemble_route_b(spec: model.FocpSpec, K: int, *, T_guess=None, eps: float = EPS) -> BvpProblem:
    """Expand the dynamics first, then apply the classical necessary conditions.

    The classical costate ``lam_1`` relates to the fractional multiplier by
    ``lam = lam_1 / (m + n B (t-a)^(1-alpha))``; reports carry that ratio
    as ``lambda_`` and ``lam_1`` in ``extras``.
    """
    fr = _Frame(spec, K)
    c, n, al, a = fr.c, fr.n, fr.al, spec.a
    T0 = fr.T_start(T_guess)
    fr.check_denominator(T0)
    dim = 2 * K
    nv = K - 1

    def parts(s, Y, T):
        span = T - a
        t = a + span * s
        tl = span * s
        x, V, l1, lp = Y[0], Y[1:K], Y[K], Y[K + 1 :]
        mu = l1 / fr.denominator(tl)
        u = fr.u_of(t, x, mu)
        return span, t, tl, x, V, l1, lp, mu, u

    def rhs(s, Y, T):
        span, t, tl, x, V, l1, lp, mu, u = parts(s, Y, T)
        xdot, Vdot = fr.state_rates(t, tl, x, V, u)
        l1dot = -fr.H.dx(t, x, u, mu) + n * c.A * tl ** (-al) * mu
        for i, p in enumerate(c.moments):
            l1dot = l1dot - lp[i] * (1 - p) * tl ** (p - 2)
        lpdot = [-mu * n * c.C[i] * tl ** (1 - p - al) for i, p in enumerate(c.moments)]
        return _pack(Y.shape[1:], [xdot, *Vdot, l1dot, *lpdot]) * span

    def classical_H(s, Y, T):
        span, t, tl, x, V, l1, lp, mu, u = parts(s, Y, T)
        xdot, _ = fr.state_rates(t, tl, x, V, u)
        H = spec.L(t, x, u) + l1 * xdot
        for i, p in enumerate(c.moments):
            H = H + lp[i] * (1 - p) * tl ** (p - 2) * x
        return H

    s0, s1 = eps, 1.0

    def boundary(Y0, Y1, T):
        rows = [Y0[0] - spec.x_start, *Y0[1:K], *Y1[K + 1 :]]
        if fr.state_fixed:
            rows.append(Y1[0] - spec.terminal.x_T)
        else:
            rows.append(Y1[K] - spec.dphi_dx(T, Y1[0]))
        if fr.T_free:
            rows.append(classical_H(s1, Y1, T) + spec.dphi_dt(T, Y1[0]))
        return _pack(Y0.shape[1:], rows)

    def extract(t, Y, T):
        x, l1 = Y[:, 0], Y[:, K]
        mu = l1 / fr.denominator(t - a)
        u = fr.u_of(t, x, mu)
        xg = GridFn(t, x)
        ug = GridFn(t, np.broadcast_to(u, t.shape))
        return dict(x=xg, u=ug, lambda_=GridFn(t, mu),
                    aux_V=[GridFn(t, Y[:, 1 + i]) for i in range(nv)],
                    aux_W=[GridFn(t, Y[:, K + 1 + i]) for i in range(nv)],
                    J=model.cost(spec, xg, ug, T), route="approximate", K=K,
                    extras={"lambda1": GridFn(t, l1)})

    y_guess = np.zeros(dim)
    y_guess[0] = spec.x_start
    labels = ("x", *[f"V{p}" for p in c.moments], "lambda1", *[f"lambda{p}" for p in c.moments])
    return BvpProblem(dim=dim, rhs=rhs, boundary=boundary, T=T0, T_free=fr.T_free,
                      span=(s0, s1), grading="left", y_guess=y_guess, T_lower=a,
                      time_of=lambda s, T: a + (T - a) * s, extract=extract, labels=labels)


def assemble(spec: model.FocpSpec, K: int, route: str, *, T_guess=None, eps: float = EPS) -> BvpProblem:
    route = canonical_route(route)
    if route == "fractional":
        return assemble_route_a(spec, K, T_guess=T_guess, eps=eps)
    return assemble_route_b(spec, K, T_guess=T_guess, eps=eps)


def solve(spec: model.FocpSpec, K: int = 2, route: str = "fractional", *, mesh: int = 2000,
          tol: float = 1e-10, T_guess=None, max_iter: int = 50, eps: float = EPS) -> SolveReport:
    """Assemble ``spec`` by ``route`` and solve it."""
    p = assemble(spec, K, route, T_guess=T_guess, eps=eps)
    return solve_bvp(p, mesh, tol, max_iter=max_iter)


#: Start offsets walked through by :func:`solve_free_time` before ``EPS``.
CONTINUATION = (1e-2, 1e-4)
#: Mesh cap for the continuation stages.
STAGE_MESH = 500


def solve_free_time(spec: model.FocpSpec, K: int, mesh: int, tol: float, T_guess: float = 1.0,
                    route: str = "fractional", *, max_iter: int = 50,
                    continuation=CONTINUATION) -> SolveReport:
    """Solve a free-horizon problem with ``T`` as an extra Newton unknown.

    A costate offset of order ``eps**(alpha + 3)`` at the singular start can
    steer ``x(T)`` while staying below rounding in every other boundary row,
    so at ``eps = 1e-6`` the horizon may be numerically unidentifiable. The
    solve therefore starts at the larger offsets in ``continuation``, where
    all rows are resolved, and carries each stage's horizon into the next,
    smaller offset. Pass ``continuation=()`` to solve at ``EPS`` directly.
    """
    if spec.terminal.time_fixed:
        raise UsageError("solve_free_time needs a free terminal time")
    if not T_guess > 0:
        raise UsageError("T_guess must be positive")
    ladder = [e for e in continuation if e > EPS]
    T, history, iters = float(T_guess), [], 0
    for eps in ladder:
        # coarse stages only carry T forward; costates restart from zero
        try:
            rep = solve(spec, K, route, mesh=min(mesh, STAGE_MESH), tol=max(tol, 1e-8),
                        T_guess=T, max_iter=max_iter, eps=eps)
        except SolveError as err:
            log.debug("eps=%g: stage failed (%s), keeping T=%g", eps, err, T)
            continue
        log.debug("eps=%g: T=%.10g after %d iterations", eps, rep.T, rep.newton_iters)
        T = rep.T
        history += rep.residual_history
        iters += rep.newton_iters
    rep = solve(spec, K, route, mesh=mesh, tol=tol, T_guess=T, max_iter=max_iter)
    return replace(rep, newton_iters=iters + rep.newton_iters,
                   residual_history=history + rep.residual_history,
                   extras={**rep.extras, "continuation": tuple(ladder) + (EPS,)})


def error_vs_reference(report: SolveReport, reference: Callable) -> float:
    """Discrete max-norm distance between the computed state and ``reference``."""
    x = report.x.values if report.x is not None else report.y[:, 0]
    ref = np.asarray(reference(report.t), dtype=float)
    return float(np.max(np.abs(x - ref)))
