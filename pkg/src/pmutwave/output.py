"""Probe CSV files and legacy-VTK pressure snapshots."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import CORNER_SIGNS

VTK_HEXAHEDRON = 12


def write_probe_csv(times, values, path, column="p"):
    """Two-column CSV ``t,<column>`` with round-trippable floats."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.shape != values.shape:
        raise ValueError("times and values must have the same length")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must increase")
    with open(path, "w") as fh:
        fh.write(f"t,{column}\n")
        for t, v in zip(times, values):
            fh.write(f"{t:.17g},{v:.17g}\n")


def read_probe_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1]


def vertex_values(mesh, dofmap, u):
    """Field value at every mesh vertex (corner GLL node of any element)."""
    out = np.zeros(mesh.n_nodes)
    for g in dofmap.groups:
        n = g.rule.n
        ijk = (CORNER_SIGNS.astype(np.int64) + 1) // 2 * (n - 1)
        loc = ijk[:, 0] + n * (ijk[:, 1] + n * ijk[:, 2])
        out[mesh.elements[g.elements]] = u[g.dofs[:, loc]]
    return out


def write_vtk_snapshot(mesh, values, path, name="pressure"):
    """Legacy ASCII unstructured grid with one point-data scalar per vertex."""
    values = np.asarray(values, dtype=float)
    if len(values) != mesh.n_nodes:
        raise ValueError("one value per mesh vertex is required")
    path = Path(path)
    E = mesh.n_elements
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\npmutwave pressure snapshot\nASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_nodes} double\n")
        np.savetxt(fh, mesh.nodes, fmt="%.17g")
        fh.write(f"CELLS {E} {9 * E}\n")
        np.savetxt(fh, np.column_stack([np.full(E, 8), mesh.elements]), fmt="%d")
        fh.write(f"CELL_TYPES {E}\n")
        np.savetxt(fh, np.full(E, VTK_HEXAHEDRON), fmt="%d")
        fh.write(f"POINT_DATA {mesh.n_nodes}\nSCALARS {name} double 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, values, fmt="%.17g")
        fh.write(f"CELL_DATA {E}\nSCALARS region int 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, mesh.region, fmt="%d")
