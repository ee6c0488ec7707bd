"""Experiments: self-convergence under h-refinement and supercritical collapse."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import diagnostics as dg
from . import scheme
from .femcore import P1Space
from .mesh import Mesh, refine


@dataclass(frozen=True)
class Constant:
    value: float = 1.0

    def nodal(self, space: P1Space) -> np.ndarray:
        return np.full(space.n, float(self.value))


@dataclass(frozen=True)
class Gaussian:
    """``exp(-|x - center|^2 / (2 width^2))`` rescaled to a given discrete mass."""

    center: tuple = (0.5, 0.5)
    width: float = 0.1
    mass: float = 4.0 * math.pi

    def nodal(self, space: P1Space) -> np.ndarray:
        cx, cy = self.center
        s2 = 2.0 * self.width ** 2
        g = space.interpolate(lambda x, y: np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / s2))
        return g * (self.mass / space.integral(g))


def initial_state(mesh_or_space, initial, params, newton=None) -> scheme.SchemeState:
    space = mesh_or_space if isinstance(mesh_or_space, P1Space) else P1Space(mesh_or_space)
    return scheme.initialize(space, initial.nodal(space), params, newton)


def steps_to(final_time: float, tau: float) -> int:
    """Number of steps of size ``tau`` reaching ``final_time`` exactly."""
    n = round(final_time / tau)
    if n < 0 or not math.isclose(n * tau, final_time, rel_tol=1e-9, abs_tol=1e-14):
        raise ValueError(f"final time {final_time} is not a multiple of tau={tau}")
    return int(n)


class StudyError(RuntimeError):
    pass


@dataclass
class RateRow:
    level: int
    h: float
    tau: float
    err_u_l2h: float
    err_v_h1: float
    rate_u: float = float("nan")
    rate_v: float = float("nan")


@dataclass
class RateTable:
    rows: list
    reference_h: float
    reference_tau: float
    final_time: float

    def rates_u(self):
        return [r.rate_u for r in self.rows[1:]]

    def rates_v(self):
        return [r.rate_v for r in self.rows[1:]]


def _rate(coarse: float, fine: float, floor: float) -> float:
    if coarse <= floor or fine <= floor:
        return float("nan")
    return math.log2(coarse / fine)


def convergence_study(mesh: Mesh, initial, chi=1.0, alpha=1.0, final_time=0.0625,
                      levels=3, coupling=1.0, newton=None, histories=None) -> RateTable:
    """Self-convergence of the scheme with ``tau = coupling * h`` on each level.

    ``mesh`` is the coarsest level. One extra refinement (with its own
    ``tau = coupling * h``) is the reference; coarse nodal values are compared
    on the reference mesh at their own vertices, which the nested structured
    meshes share exactly. Errors: lumped L2 for u, full H1 for v.

    ``histories``, if a list, receives each level's diagnostics history.
    """
    if levels < 2:
        raise ValueError("need at least two levels")
    meshes = [mesh]
    for _ in range(levels):
        meshes.append(refine(meshes[-1]))
    runs = []
    for level, m in enumerate(meshes):
        space = P1Space(m)
        tau = coupling * _cell_size(m)
        params = scheme.SchemeParams(chi=chi, alpha=alpha, tau=tau)
        state = initial_state(space, initial, params, newton)
        result = scheme.advance(state, steps_to(final_time, tau))
        if not result.completed:
            raise StudyError(f"level {level} (h={_cell_size(m):g}) failed at step "
                             f"{result.failed_step}: {result.message}")
        if histories is not None:
            histories.append(result.history)
        runs.append((m, tau, result.state))

    ref_mesh, ref_tau, ref = runs[-1]
    ref_space = ref.space
    rows = []
    scale_u = max(ref_space.l2h_norm(ref.u), 1.0)
    scale_v = max(ref_space.h1_norm(ref.v), 1.0)
    for level, (m, tau, st) in enumerate(runs[:-1]):
        # nested P1 spaces: the coarse field is represented exactly on the reference mesh
        eu = prolong(m, st.u, ref_mesh) - ref.u
        ev = prolong(m, st.v, ref_mesh) - ref.v
        rows.append(RateRow(level, _cell_size(m), tau, ref_space.l2h_norm(eu), ref_space.h1_norm(ev)))
    for a, b in zip(rows, rows[1:]):
        b.rate_u = _rate(a.err_u_l2h, b.err_u_l2h, 1e-12 * scale_u)
        b.rate_v = _rate(a.err_v_h1, b.err_v_h1, 1e-12 * scale_v)
    return RateTable(rows, _cell_size(ref_mesh), ref_tau, final_time)


def _cell_size(m: Mesh) -> float:
    """Leg length of the structured right triangles (the ``h`` of an ``n x n`` grid)."""
    (x0, x1), _ = m.bounds
    return (x1 - x0) / m.divisions[0]


def prolong(coarse: Mesh, values, fine: Mesh) -> np.ndarray:
    """Evaluate a coarse P1 field at the vertices of a nested structured refinement."""
    (cx, cy), (fx, fy) = coarse.divisions, fine.divisions
    sx, sy = fx // cx, fy // cy
    V = np.asarray(values).reshape(cy + 1, cx + 1)
    J, I = np.meshgrid(np.arange(fy + 1), np.arange(fx + 1), indexing="ij")
    i0 = np.minimum(I // sx, cx - 1)
    j0 = np.minimum(J // sy, cy - 1)
    s = I / sx - i0
    t = J / sy - j0
    v00 = V[j0, i0]
    v10 = V[j0, i0 + 1]
    v01 = V[j0 + 1, i0]
    v11 = V[j0 + 1, i0 + 1]
    # cells are split along the (0,0)-(1,1) diagonal
    lower = s >= t
    out = np.where(lower,
                   v00 + s * (v10 - v00) + t * (v11 - v10),
                   v00 + t * (v01 - v00) + s * (v11 - v01))
    return out.ravel()


@dataclass
class BlowupResult:
    verdict: str
    history: list
    status: str
    t_max: Optional[float]
    message: str = ""
    final_state: Optional[scheme.SchemeState] = None

    @property
    def moments(self) -> np.ndarray:
        return np.array([r.moment for r in self.history])

    @property
    def growth(self) -> float:
        return max(r.u_max for r in self.history) / self.history[0].u_max

    def moment_decrements(self) -> np.ndarray:
        """``(M^{k+1} - M^k) / tau``, the quantity bounded by the moment inequality."""
        m = self.moments
        t = np.array([r.t for r in self.history])
        return np.diff(m) / np.diff(t)


def blowup_study(mesh: Mesh, initial, chi=1.0, alpha=1.0, tau=None, final_time=1.0,
                 moment_params=None, newton=None, growth_factor=50.0, window=20,
                 collapse_fraction=0.99, callback=None) -> BlowupResult:
    """Run to ``final_time`` or until the run stops early, then classify it.

    Early stops are Newton failures and, unless ``collapse_fraction`` is None,
    collapse of the density onto a single vertex. ``t_max`` is ``k_max * tau``
    for an early stop and None otherwise.
    """
    space = P1Space(mesh)
    tau = _cell_size(mesh) if tau is None else tau
    params = scheme.SchemeParams(chi=chi, alpha=alpha, tau=tau)
    weight = dg.build_moment_weight(mesh, *(moment_params or (None, None, None)))
    state = initial_state(space, initial, params, newton)
    stop = dg.collapse_stop(collapse_fraction) if collapse_fraction is not None else None
    result = scheme.advance(state, steps_to(final_time, tau), callback, weight, stop)
    verdict = dg.classify_run(result.history, result.status, growth_factor, window)
    t_max = None if result.completed else result.history[-1].t
    return BlowupResult(verdict, result.history, result.status, t_max, result.message, result.state)
