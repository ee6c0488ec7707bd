"""Per-step observables: mass, extrema, discrete free energy, moment, blow-up checks."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .femcore import FieldError, P1Space


@dataclass(frozen=True)
class MomentWeight:
    """Quadratic-then-flat radial weight centred at ``q``, interpolated on the mesh.

    ``phi(r) = r**2`` up to ``r1``, a concave quadratic blending to the
    constant ``r1 * r2`` at ``r2``, constant beyond.
    """

    q: tuple
    r1: float
    r2: float
    a1: float
    a2: float
    a3: float
    phi_h: np.ndarray

    def phi(self, r):
        return radial_weight(r, self.r1, self.r2)


def weight_coefficients(r1: float, r2: float):
    d = r2 - r1
    return -r1 / d, 2.0 * r1 * r2 / d, -r1 * r1 * r2 / d


def radial_weight(r, r1: float, r2: float):
    a1, a2, a3 = weight_coefficients(r1, r2)
    r = np.asarray(r, dtype=float)
    return np.where(r <= r1, r * r, np.where(r <= r2, (a1 * r + a2) * r + a3, r1 * r2))


def default_moment_parameters(mesh):
    (x0, x1), (y0, y1) = mesh.bounds
    q = (0.5 * (x0 + x1), 0.5 * (y0 + y1))
    d = mesh.distance_to_boundary(q)
    return q, 0.25 * d, 0.5 * d


def build_moment_weight(mesh, q=None, r1=None, r2=None) -> MomentWeight:
    if q is None or r1 is None or r2 is None:
        dq, dr1, dr2 = default_moment_parameters(mesh)
        q = dq if q is None else q
        r1 = dr1 if r1 is None else r1
        r2 = dr2 if r2 is None else r2
    q = (float(q[0]), float(q[1]))
    dist = mesh.distance_to_boundary(q)
    if not 0.0 < r1 < r2 < dist:
        raise ValueError(f"moment radii need 0 < r1 < r2 < dist(q, boundary) = {dist:g}; "
                         f"got r1={r1}, r2={r2}")
    a1, a2, a3 = weight_coefficients(r1, r2)
    r = np.hypot(mesh.vertices[:, 0] - q[0], mesh.vertices[:, 1] - q[1])
    phi_h = radial_weight(r, r1, r2)
    phi_h.setflags(write=False)
    return MomentWeight(q, float(r1), float(r2), a1, a2, a3, phi_h)


def moment(space: P1Space, u, weight: MomentWeight) -> float:
    return space.inner(u, weight.phi_h)


def discrete_energy(state) -> float:
    """Lumped entropy minus lumped coupling plus exact-norm chemoattractant energy."""
    space, p = state.space, state.params
    u, v = space.check(state.u, "u"), space.check(state.v, "v")
    if np.any(u <= 0):
        raise FieldError("discrete energy requires strictly positive u")
    entropy = float(np.dot(space.lumped, u * (np.log(u) - 1.0)))
    if p.chi == 0:
        return entropy
    coupling = space.inner(u, v)
    v_energy = float(v @ (space.stiffness @ v) + v @ (space.mass @ v))
    return entropy - p.chi * coupling + p.chi / (2.0 * p.alpha) * v_energy


def blowup_threshold(alpha: float, chi: float) -> float:
    """Critical mass ``8 pi / (alpha chi)``."""
    if not (alpha > 0 and chi > 0):
        raise ValueError(f"alpha and chi must be positive, got alpha={alpha}, chi={chi}")
    return 8.0 * math.pi / (alpha * chi)


@dataclass(frozen=True)
class DiagnosticsRecord:
    k: int
    t: float
    mass: float
    u_min: float
    u_max: float
    energy: float
    moment: float
    newton_iterations: int


def record(state, weight: MomentWeight | None = None, newton_iterations: int = 0) -> DiagnosticsRecord:
    u = state.u
    m = moment(state.space, u, weight) if weight is not None else float("nan")
    return DiagnosticsRecord(
        k=state.k,
        t=state.t,
        mass=state.space.integral(u),
        u_min=float(u.min()),
        u_max=float(u.max()),
        energy=discrete_energy(state),
        moment=m,
        newton_iterations=newton_iterations,
    )


def energy_violations(history, rel=1e-10):
    """Steps ``k+1`` where ``F^{k+1} > F^k + rel * (1 + |F^k|)``."""
    return [b.k for a, b in zip(history, history[1:])
            if b.energy > a.energy + rel * (1.0 + abs(a.energy))]


def max_mass_drift(history) -> float:
    m0 = history[0].mass
    return max(abs(r.mass - m0) for r in history) / m0


def concentration(space: P1Space, u) -> float:
    """Largest share of the discrete mass carried by a single vertex."""
    share = space.lumped * space.check(u)
    return float(share.max() / share.sum())


def collapse_stop(fraction: float = 0.99):
    """Stop rule for :func:`kellersegel.scheme.advance`: fires once one vertex
    holds ``fraction`` of the mass, the most concentrated state the mesh can
    represent. Past it the discrete solution no longer tracks a blow-up."""
    def stop(rec, state):
        return "collapsed" if concentration(state.space, state.u) >= fraction else None
    return stop


COMPLETED = "completed"
BLOWUP_SUSPECTED = "blowup_suspected"
SOLVER_FAILURE = "solver_failure"


def moment_tail_decreasing(history, window: int = 20) -> bool:
    """True when the last ``window`` moment increments are all negative."""
    m = np.array([r.moment for r in history])
    if len(m) < window + 1 or not np.all(np.isfinite(m[-window - 1:])):
        return False
    return bool(np.all(np.diff(m[-window - 1:]) < 0))


def classify_run(history, status: str, growth_factor: float = 50.0, window: int = 20) -> str:
    """Verdict for a finished run.

    ``status`` is the run's termination status: ``"ok"`` when it reached the
    final time, ``"newton_failed"`` or ``"collapsed"`` when it stopped early.
    An early stop counts as a suspected blow-up only with supporting
    evidence: ``u_max`` grew by ``growth_factor`` over its initial value, or
    the moment decreased monotonically over the last ``window`` accepted
    steps. An early stop without evidence is a solver failure.
    """
    if not history:
        raise ValueError("empty history")
    if status == "ok":
        return COMPLETED
    grew = max(r.u_max for r in history) >= growth_factor * history[0].u_max
    if grew or moment_tail_decreasing(history, window):
        return BLOWUP_SUSPECTED
    return SOLVER_FAILURE
