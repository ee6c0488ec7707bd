"""Structured triangulations of rectangles with cached P1 geometry."""
from __future__ import annotations

import numpy as np


class MeshError(ValueError):
    """Raised for invalid mesh construction parameters."""


class Mesh:
    """Conforming triangulation with per-triangle areas and hat-function gradients.

    Attributes
    ----------
    vertices : (n_v, 2) float array
    triangles : (n_t, 3) int array, counterclockwise
    areas : (n_t,) float array
    basis_gradients : (n_t, 3, 2) float array
        Constant gradient of the hat function of each local vertex.
    h : float
        Maximum edge length.
    boundary_vertices : int array
    """

    def __init__(self, vertices, triangles, *, bounds=None, divisions=None):
        vertices = np.ascontiguousarray(vertices, dtype=float)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must have shape (n, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError("triangles must have shape (m, 3)")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise MeshError("triangle index out of range")

        p = vertices[triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        signed = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        if np.any(signed <= 0.0):
            raise MeshError("triangles must have positive (counterclockwise) area")

        # grad(phi_i) is the left normal of the opposite edge divided by twice the area
        opp = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
        grads = np.empty_like(opp)
        grads[..., 0] = -opp[..., 1]
        grads[..., 1] = opp[..., 0]
        grads /= (2.0 * signed)[:, None, None]

        edges = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
        edges = np.sort(edges, axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        if np.any(counts > 2):
            raise MeshError("non-conforming mesh: an edge is shared by more than two triangles")
        lengths = np.linalg.norm(vertices[uniq[:, 1]] - vertices[uniq[:, 0]], axis=1)

        self.vertices = vertices
        self.triangles = triangles
        self.areas = signed
        self.basis_gradients = grads
        self.edges = uniq
        self.h = float(lengths.max())
        self.h_min = float(lengths.min())
        self.boundary_vertices = np.unique(uniq[counts == 1])
        self.bounds = bounds
        self.divisions = divisions
        for arr in (self.vertices, self.triangles, self.areas, self.basis_gradients):
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    def __repr__(self):
        return f"Mesh(n_vertices={self.n_vertices}, n_triangles={self.n_triangles}, h={self.h:.4g})"

    def distance_to_boundary(self, point) -> float:
        """Distance from an interior point to the boundary of the rectangle."""
        if self.bounds is None:
            raise MeshError("distance_to_boundary needs a rectangle mesh")
        (x0, x1), (y0, y1) = self.bounds
        x, y = point
        return float(min(x - x0, x1 - x, y - y0, y1 - y))


def build_uniform_rect_mesh(x_range=(0.0, 1.0), y_range=(0.0, 1.0), nx=32, ny=32) -> Mesh:
    """Split an nx-by-ny grid of cells along the lower-left/upper-right diagonal.

    Vertex ``(i, j)`` has index ``j * (nx + 1) + i``.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError(f"nx and ny must be positive integers, got nx={nx}, ny={ny}")
    nx, ny = int(nx), int(ny)
    x0, x1 = map(float, x_range)
    y0, y1 = map(float, y_range)
    if not (np.isfinite([x0, x1, y0, y1]).all() and x1 > x0 and y1 > y0):
        raise MeshError(f"degenerate rectangle {x_range} x {y_range}")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n00 = (j * (nx + 1) + i).ravel()
    n10 = n00 + 1
    n01 = n00 + nx + 1
    n11 = n01 + 1
    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return Mesh(vertices, triangles, bounds=((x0, x1), (y0, y1)), divisions=(nx, ny))


def refine(mesh: Mesh) -> Mesh:
    """Uniform refinement of a structured rectangle mesh (cell counts doubled)."""
    if mesh.divisions is None or mesh.bounds is None:
        raise MeshError("refine only supports meshes from build_uniform_rect_mesh")
    nx, ny = mesh.divisions
    return build_uniform_rect_mesh(*mesh.bounds, 2 * nx, 2 * ny)


def coarse_to_fine_indices(coarse: Mesh, fine: Mesh) -> np.ndarray:
    """Indices in ``fine`` of the vertices of a nested coarser structured mesh."""
    if coarse.bounds != fine.bounds or coarse.divisions is None or fine.divisions is None:
        raise MeshError("meshes are not nested structured meshes of the same rectangle")
    (cx, cy), (fx, fy) = coarse.divisions, fine.divisions
    if fx % cx or fy % cy:
        raise MeshError("fine mesh is not a refinement of the coarse mesh")
    sx, sy = fx // cx, fy // cy
    i, j = np.meshgrid(np.arange(cx + 1), np.arange(cy + 1))
    return ((j * sy) * (fx + 1) + i * sx).ravel()
