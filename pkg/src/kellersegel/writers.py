"""Plain-text outputs: time-series and rate CSVs, legacy VTK snapshots."""
from __future__ import annotations

import csv
import math

import numpy as np

TIMESERIES_HEADER = ["step", "t", "mass", "u_min", "u_max", "energy", "moment", "newton_iters"]
RATES_HEADER = ["level", "h", "tau", "err_u_l2h", "err_v_h1", "rate_u", "rate_v"]


def _g(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def write_timeseries(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIMESERIES_HEADER)
        for r in history:
            w.writerow([_g(r.k), _g(r.t), _g(r.mass), _g(r.u_min), _g(r.u_max),
                        _g(r.energy), _g(r.moment), _g(r.newton_iterations)])


def write_rates(path, table):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RATES_HEADER)
        for r in table.rows:
            w.writerow([_g(r.level), _g(r.h), _g(r.tau), _g(r.err_u_l2h), _g(r.err_v_h1),
                        _g(r.rate_u), _g(r.rate_v)])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], [[float(x) for x in row] for row in rows[1:]]


def write_vtk(path, mesh, fields, title="kellersegel snapshot"):
    """Legacy ASCII unstructured grid of triangles with nodal scalar fields."""
    n, m = mesh.n_vertices, mesh.n_triangles
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {n} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.vertices]
    lines.append(f"CELLS {m} {4 * m}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {m}")
    lines += ["5"] * m
    lines.append(f"POINT_DATA {n}")
    for name, values in fields.items():
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [f"{v:.17g}" for v in np.asarray(values, dtype=float)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_vtk(path):
    """Inverse of :func:`write_vtk`: returns ``(points, triangles, fields)``."""
    with open(path) as fh:
        tokens = fh.read().split("\n")
    it = iter(tokens[4:])
    points = triangles = None
    fields = {}
    for line in it:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "POINTS":
            n = int(parts[1])
            points = np.array([[float(t) for t in next(it).split()[:2]] for _ in range(n)])
        elif parts[0] == "CELLS":
            m = int(parts[1])
            triangles = np.array([[int(t) for t in next(it).split()[1:]] for _ in range(m)])
        elif parts[0] == "CELL_TYPES":
            for _ in range(int(parts[1])):
                next(it)
        elif parts[0] == "SCALARS":
            next(it)  # LOOKUP_TABLE
            fields[parts[1]] = np.array([float(next(it)) for _ in range(len(points))])
    return points, triangles, fields
