"""P1 assembly with vertex quadrature (mass lumping).

The lumped product ``(u, v)_h`` sums ``area/3 * u*v`` over the vertices of every
triangle; it is diagonal in the nodal basis. Gradients of P1 functions are
elementwise constant, so any lumped product of the form ``(w grad a, grad b)_h``
collapses to the stiffness matrix with the vertex mean of ``w`` as elementwise
coefficient.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh

_CONSISTENT_LOCAL = (np.ones((3, 3)) + np.eye(3)) / 12.0


class FieldError(ValueError):
    """A nodal array does not match the mesh, or holds non-finite values."""


def _check_field(mesh: Mesh, u, name="field") -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_vertices,):
        raise FieldError(f"{name} has shape {u.shape}, mesh has {mesh.n_vertices} vertices")
    return u


def vertex_quadrature(area: float, f_at_vertices) -> float:
    """Integrate over one triangle using the average of the vertex values."""
    f = np.asarray(f_at_vertices, dtype=float)
    return area / 3.0 * float(f[0] + f[1] + f[2])


def _assemble(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    """Sum per-triangle 3x3 blocks into an n_v x n_v CSR matrix.

    Duplicates are summed by scipy in a fixed order, so the result is
    reproducible bit for bit.
    """
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_vertices
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def local_stiffness(mesh: Mesh) -> np.ndarray:
    """Per-triangle blocks ``area * grad(phi_i) . grad(phi_j)``, shape (n_t, 3, 3)."""
    g = mesh.basis_gradients
    return mesh.areas[:, None, None] * np.einsum("tik,tjk->tij", g, g)


def lumped_mass_diagonal(mesh: Mesh) -> np.ndarray:
    d = np.zeros(mesh.n_vertices)
    np.add.at(d, mesh.triangles.ravel(), np.repeat(mesh.areas / 3.0, 3))
    return d


def lumped_mass(mesh: Mesh) -> sp.csr_matrix:
    return sp.diags(lumped_mass_diagonal(mesh)).tocsr()


def consistent_mass(mesh: Mesh) -> sp.csr_matrix:
    return _assemble(mesh, mesh.areas[:, None, None] * _CONSISTENT_LOCAL)


def stiffness(mesh: Mesh) -> sp.csr_matrix:
    return _assemble(mesh, local_stiffness(mesh))


def weighted_stiffness(mesh: Mesh, w) -> sp.csr_matrix:
    """Matrix of ``(w grad phi_j, grad phi_i)_h`` for a nodal weight ``w``."""
    w = _check_field(mesh, w, "weight")
    wbar = w[mesh.triangles].mean(axis=1)
    return _assemble(mesh, wbar[:, None, None] * local_stiffness(mesh))


def interpolate(mesh: Mesh, f) -> np.ndarray:
    """Nodal values of ``f(x, y)``; ``f`` must accept coordinate arrays."""
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    values = np.broadcast_to(np.asarray(f(x, y), dtype=float), x.shape).copy()
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        i = bad[0]
        raise FieldError(f"non-finite value {values[i]} at vertex {i} {tuple(mesh.vertices[i])}")
    return values


class P1Space:
    """A mesh with its assembled lumped, consistent and stiffness matrices."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.lumped = lumped_mass_diagonal(mesh)
        self.mass = consistent_mass(mesh)
        self.stiffness = stiffness(mesh)
        self._local_stiffness = local_stiffness(mesh)
        tri = mesh.triangles
        n = mesh.n_vertices
        # Fixed CSR pattern for weighted stiffness: map each local entry to its slot.
        rows = np.repeat(tri, 3, axis=1).ravel()
        cols = np.tile(tri, (1, 3)).ravel()
        pattern = sp.coo_matrix(
            (np.arange(1, rows.size + 1, dtype=float), (rows, cols)), shape=(n, n)
        ).tocsr()
        pattern.sort_indices()
        self._indptr = pattern.indptr
        self._indices = pattern.indices
        key = rows * n + cols
        slot_keys = np.repeat(np.arange(n), np.diff(pattern.indptr)) * n + pattern.indices
        self._slot = np.searchsorted(slot_keys, key)

    @property
    def n(self) -> int:
        return self.mesh.n_vertices

    def check(self, u, name="field") -> np.ndarray:
        return _check_field(self.mesh, u, name)

    def weighted_stiffness(self, w) -> sp.csr_matrix:
        """Same matrix as :func:`weighted_stiffness`, reusing the cached pattern."""
        w = self.check(w, "weight")
        wbar = w[self.mesh.triangles].mean(axis=1)
        contrib = (wbar[:, None, None] * self._local_stiffness).ravel()
        data = np.bincount(self._slot, weights=contrib, minlength=len(self._indices))
        return sp.csr_matrix((data, self._indices, self._indptr), shape=(self.n, self.n))

    def interpolate(self, f) -> np.ndarray:
        return interpolate(self.mesh, f)

    def inner(self, u, v) -> float:
        """Lumped inner product ``(u, v)_h``."""
        u, v = self.check(u, "u"), self.check(v, "v")
        return float(np.dot(self.lumped * u, v))

    def l2_inner(self, u, v) -> float:
        """Exact L2 inner product of two P1 functions."""
        u, v = self.check(u, "u"), self.check(v, "v")
        return float(u @ (self.mass @ v))

    def quadrature_error(self, u, v) -> float:
        return self.inner(u, v) - self.l2_inner(u, v)

    def integral(self, u) -> float:
        return float(np.dot(self.lumped, self.check(u)))

    def l2h_norm(self, u) -> float:
        return float(np.sqrt(self.inner(u, u)))

    def l2_norm(self, u) -> float:
        return float(np.sqrt(max(self.l2_inner(u, u), 0.0)))

    def h1_seminorm(self, u) -> float:
        u = self.check(u)
        return float(np.sqrt(max(u @ (self.stiffness @ u), 0.0)))

    def h1_norm(self, u) -> float:
        return float(np.hypot(self.l2_norm(u), self.h1_seminorm(u)))
