"""Positivity-preserving, mass-conserving time stepping for parabolic-elliptic Keller-Segel.

One step maps ``(u^k, v^k)`` to ``(u^{k+1}, v^{k+1})``:

* ``u^{k+1}`` solves the nodal system

      L (U - U^k) / tau + A(U^k) log(U) - chi A(U^k) V^k = 0,

  where ``L`` is the lumped mass diagonal and ``A(w)`` the stiffness matrix
  with vertex-mean coefficient ``w``. The log term is implicit, which keeps
  ``U`` positive and makes the problem uniquely solvable.
* ``v^{k+1}`` solves ``(K + M) V = alpha L U^{k+1}`` with exact stiffness and
  mass matrices.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import diagnostics
from .femcore import FieldError, P1Space
from .linalg import SolverFailure, solve_general, solve_spd
from .mesh import Mesh


@dataclass(frozen=True)
class SchemeParams:
    chi: float = 1.0
    alpha: float = 1.0
    tau: float = 0.01

    def __post_init__(self):
        if not self.chi >= 0:
            raise ValueError(f"chi must be nonnegative, got {self.chi}")
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")


@dataclass(frozen=True)
class NewtonOptions:
    tol: float = 1e-10
    max_iter: int = 50
    fraction_to_boundary: float = 0.9
    stall_window: int = 5
    stall_reduction: float = 1e-3
    linear_tol: float = 1e-10
    spd_tol: float = 1e-12
    variable: str = "log"  # "log": Newton on log U; "density": damped Newton on U

    def __post_init__(self):
        if self.variable not in ("log", "density"):
            raise ValueError(f"unknown Newton variable {self.variable!r}")


@dataclass(frozen=True)
class SchemeState:
    """Discrete solution at time ``t = k * tau``. ``u`` and ``v`` are nodal arrays."""

    space: P1Space
    k: int
    t: float
    u: np.ndarray
    v: np.ndarray
    params: SchemeParams
    newton: NewtonOptions = field(default_factory=NewtonOptions)
    # Optional manufactured-solution forcing (not part of the analysed scheme):
    # forcing(t) -> (f_u, f_v) nodal arrays added to the right-hand sides.
    forcing: Optional[Callable[[float], tuple]] = None

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh


@dataclass(frozen=True)
class StepOutcome:
    state: SchemeState
    newton_iterations: int
    newton_final_residual: float
    status: str  # "ok" or "newton_failed"
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def _space(mesh_or_space) -> P1Space:
    return mesh_or_space if isinstance(mesh_or_space, P1Space) else P1Space(mesh_or_space)


def elliptic_step(space, U, alpha, tol=1e-12, f_v=None) -> np.ndarray:
    """Solve ``(K + M) V = alpha L U`` (plus ``L f_v`` when forced)."""
    space = _space(space)
    U = space.check(U, "U")
    if not np.all(np.isfinite(U)):
        raise FieldError("U has non-finite entries")
    rhs = alpha * space.lumped * U
    if f_v is not None:
        rhs = rhs + space.lumped * f_v
    V, _ = solve_spd(space.stiffness + space.mass, rhs, tol=tol)
    return V


def initialize(mesh, u0, params: SchemeParams, newton: NewtonOptions | None = None, forcing=None) -> SchemeState:
    """Interpolate ``u0`` and compute the matching ``v`` from the elliptic equation.

    ``u0`` is either a callable ``f(x, y)`` or an array of nodal values.
    """
    space = _space(mesh)
    newton = newton or NewtonOptions()
    u = space.check(u0(space.mesh.vertices[:, 0], space.mesh.vertices[:, 1]) if callable(u0) else u0, "u0")
    u = np.array(np.broadcast_to(u, (space.n,)), dtype=float)
    bad = np.flatnonzero(~(u > 0))
    if bad.size:
        i = bad[0]
        raise FieldError(f"initial density must be positive at every vertex; vertex {i} "
                         f"{tuple(space.mesh.vertices[i])} has value {u[i]}")
    f_v = forcing(0.0)[1] if forcing is not None else None
    v = elliptic_step(space, u, params.alpha, tol=newton.spd_tol, f_v=f_v)
    return SchemeState(space, 0, 0.0, u, v, params, newton, forcing)


def nonlinear_residual(state: SchemeState, U, A=None, f_u=None) -> np.ndarray:
    """Residual of the u-equation at candidate ``U`` (``A`` = A(u^k) if precomputed)."""
    space, p = state.space, state.params
    A = space.weighted_stiffness(state.u) if A is None else A
    R = space.lumped * (U - state.u) / p.tau + A @ (np.log(U) - p.chi * state.v)
    if f_u is not None:
        R -= space.lumped * f_u
    return R


def nonlinear_jacobian(state: SchemeState, U, A=None) -> sp.csr_matrix:
    """``L / tau + A(u^k) diag(1 / U)``."""
    space = state.space
    A = space.weighted_stiffness(state.u) if A is None else A
    return (sp.diags(space.lumped / state.params.tau) + A @ sp.diags(1.0 / U)).tocsr()


def potential(state: SchemeState, w, A=None, f_u=None) -> float:
    """Convex function of ``w = log U`` whose gradient is the u-residual."""
    space, p = state.space, state.params
    A = space.weighted_stiffness(state.u) if A is None else A
    with np.errstate(over="ignore"):
        G = float(np.dot(space.lumped, np.exp(w) - state.u * w)) / p.tau
    G += float(w @ (A @ (0.5 * w - p.chi * state.v)))
    if f_u is not None:
        G -= float(np.dot(space.lumped * f_u, w))
    return G


def _newton_log(state, A, f_u, tol):
    """Newton on ``w = log U`` with backtracking on the convex potential.

    The Jacobian in ``w`` is ``L diag(U) / tau + A(u^k)``, symmetric positive
    definite, so every iterate is positive by construction.
    """
    space, p, opts = state.space, state.params, state.newton
    w = np.log(state.u)
    U = state.u.copy()
    R = nonlinear_residual(state, U, A, f_u)
    rnorm = float(np.linalg.norm(R))
    G = potential(state, w, A, f_u)
    damped_history = []
    for it in range(opts.max_iter + 1):
        if rnorm <= tol:
            return U, it, rnorm, "ok", ""
        if it == opts.max_iter:
            break
        J = (sp.diags(space.lumped * U / p.tau) + A).tocsr()
        try:
            delta, _ = solve_spd(J, -R, tol=opts.linear_tol)
        except SolverFailure as exc:
            return U, it, rnorm, "newton_failed", f"linear solve failed: {exc}"
        slope = float(R @ delta)
        lam = 1.0
        for _ in range(60):
            w_new = w + lam * delta
            with np.errstate(over="ignore"):
                U_new = np.exp(w_new)
            # trial points where exp over- or underflows are rejected
            if np.all(np.isfinite(U_new)) and np.all(U_new > 0):
                G_new = potential(state, w_new, A, f_u)
                R_new = nonlinear_residual(state, U_new, A, f_u)
                rnorm_new = float(np.linalg.norm(R_new))
                armijo = G_new <= G + 1e-4 * lam * slope + 1e-15 * abs(G)
                if armijo or (lam == 1.0 and rnorm_new < rnorm):
                    break
            lam *= 0.5
        else:
            return U, it + 1, rnorm, "newton_failed", "line search failed"
        w, U, R, G = w_new, U_new, R_new, G_new
        if lam < 1.0:
            damped_history.append(rnorm)
            if len(damped_history) >= opts.stall_window:
                start = damped_history[-opts.stall_window]
                if rnorm_new > (1.0 - opts.stall_reduction) * start:
                    return U, it + 1, rnorm_new, "newton_failed", "stalled under damping"
        else:
            damped_history.clear()
        rnorm = rnorm_new
    return U, opts.max_iter, rnorm, "newton_failed", f"no convergence in {opts.max_iter} iterations"


def _newton_density(state, A, f_u, tol):
    """Newton on ``U`` itself, cut to ``min(1, 0.9 * lambda_max)`` where
    ``lambda_max`` is the largest step keeping every entry positive."""
    opts = state.newton
    U = state.u.copy()
    R = nonlinear_residual(state, U, A, f_u)
    rnorm = float(np.linalg.norm(R))
    damped_history = []
    for it in range(opts.max_iter + 1):
        if rnorm <= tol:
            return U, it, rnorm, "ok", ""
        if it == opts.max_iter:
            break
        J = nonlinear_jacobian(state, U, A)
        try:
            delta, _ = solve_general(J, -R, tol=opts.linear_tol)
        except SolverFailure as exc:
            return U, it, rnorm, "newton_failed", f"linear solve failed: {exc}"
        neg = delta < 0
        lam_max = np.min(-U[neg] / delta[neg]) if neg.any() else np.inf
        lam = min(1.0, opts.fraction_to_boundary * lam_max)
        U_new = U + lam * delta
        if not np.all(U_new > 0):
            return U, it + 1, rnorm, "newton_failed", "positivity lost (underflow)"
        U = U_new
        R = nonlinear_residual(state, U, A, f_u)
        rnorm_new = float(np.linalg.norm(R))
        if not np.isfinite(rnorm_new):
            return U, it + 1, rnorm_new, "newton_failed", "non-finite residual"
        if lam < 1.0:
            damped_history.append(rnorm)
            if len(damped_history) >= opts.stall_window:
                start = damped_history[-opts.stall_window]
                if rnorm_new > (1.0 - opts.stall_reduction) * start:
                    return U, it + 1, rnorm_new, "newton_failed", "stalled under damping"
        else:
            damped_history.clear()
        rnorm = rnorm_new
    return U, opts.max_iter, rnorm, "newton_failed", f"no convergence in {opts.max_iter} iterations"


def solve_u(state: SchemeState):
    """Solve the u-equation of one step.

    Returns ``(U, iterations, residual_norm, status, message)``. On success
    ``U`` is rescaled to the exact mass of ``u^k``: a constant factor leaves
    ``A(u^k) log U`` unchanged, so this only removes the roundoff-level mass
    defect left by the iteration.
    """
    space, p, opts = state.space, state.params, state.newton
    A = space.weighted_stiffness(state.u)
    f_u = state.forcing(state.t + p.tau)[0] if state.forcing is not None else None
    tol = opts.tol * (1.0 + np.linalg.norm(space.lumped * state.u / p.tau))
    solver = _newton_log if opts.variable == "log" else _newton_density
    U, it, rnorm, status, msg = solver(state, A, f_u, tol)
    if status == "ok" and f_u is None:
        U = U * (space.integral(state.u) / space.integral(U))
        rnorm = float(np.linalg.norm(nonlinear_residual(state, U, A, f_u)))
    return U, it, rnorm, status, msg


def nonlinear_step(state: SchemeState) -> StepOutcome:
    """Advance one time step (u-update then v-update)."""
    U, iters, res, status, msg = solve_u(state)
    if status != "ok":
        return StepOutcome(state, iters, res, status, msg)
    p = state.params
    f_v = state.forcing(state.t + p.tau)[1] if state.forcing is not None else None
    try:
        V = elliptic_step(state.space, U, p.alpha, tol=state.newton.spd_tol, f_v=f_v)
    except SolverFailure as exc:
        return StepOutcome(state, iters, res, "newton_failed", f"elliptic solve failed: {exc}")
    new = replace(state, k=state.k + 1, t=(state.k + 1) * p.tau, u=U, v=V)
    return StepOutcome(new, iters, res, "ok")


@dataclass
class AdvanceResult:
    state: SchemeState
    history: list
    status: str  # "ok", "newton_failed", or the reason returned by ``stop``
    failed_step: Optional[int] = None
    message: str = ""

    @property
    def completed(self) -> bool:
        return self.status == "ok"


def advance(state: SchemeState, n_steps: int, callback=None, weight=None, stop=None) -> AdvanceResult:
    """Take up to ``n_steps`` steps, stopping at the first Newton failure.

    ``history`` starts with the record of the input state. ``callback`` is
    called with ``(record, state)`` for the input state and after every
    accepted step. ``stop(record, state)`` may return a reason string to end
    the run early after an accepted step; ``failed_step`` is then that step.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    rec = diagnostics.record(state, weight, newton_iterations=0)
    history = [rec]
    if callback is not None:
        callback(rec, state)
    for _ in range(n_steps):
        outcome = nonlinear_step(state)
        if not outcome.ok:
            return AdvanceResult(state, history, outcome.status, state.k + 1, outcome.message)
        state = outcome.state
        rec = diagnostics.record(state, weight, newton_iterations=outcome.newton_iterations)
        history.append(rec)
        if callback is not None:
            callback(rec, state)
        reason = stop(rec, state) if stop is not None else None
        if reason:
            return AdvanceResult(state, history, reason, state.k)
    return AdvanceResult(state, history, "ok")
