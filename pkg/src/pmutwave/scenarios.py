"""Desk-scale problem geometries built from a :class:`SimulationConfig`.

Every scenario is a box: a fine inner block holding the PMUT array is cut
out of the top of a coarse outer box (free surface at z = 0, fluid below),
wrapped in PML on the x, y and bottom sides. ``txrx_obstacle`` adds a rigid
plate below the transducer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .blocks import ArrayLayout, generate_array_mesh
from .config import ConfigError
from .dg import tag_interfaces
from .mesh import FaceTag, HexMesh, MeshError, Region, boundary_faces, concatenate, structured_box
from .pmut import ModeShape, PmutMembrane, VoltageSignal, clamped_plate_roots
from .pmut import default_clamped_plate_modes, read_modal_data
from .pml import PmlProfile

INNER_MATERIAL, OUTER_MATERIAL = 0, 1
MARGIN_CELLS = 6  # default outer cells between the inner block and the domain sides


@dataclass
class Domain:
    mesh: HexMesh
    layout: ArrayLayout
    materials: np.ndarray  # rows (c, rho)
    lo: np.ndarray  # physical (non-PML) box
    hi: np.ndarray
    pml_profile: PmlProfile | None
    obstacle: tuple | None  # (lo, hi) of the removed rigid box
    membranes: list
    signals: list

    @property
    def obstacle_depth(self):
        return None if self.obstacle is None else float(-self.obstacle[1][2])

    @property
    def c_elem(self):
        return self.materials[self.mesh.material, 0]


def _snap(x, h):
    return round(x / h) * h


def _ceil(x, h):
    return math.ceil(x / h - 1e-9) * h


def _edges(breaks, h, axis):
    """Grid lines through every breakpoint with spacing h; gaps must be multiples of h."""
    b = np.unique(np.round(np.asarray(breaks, float) / h * 1e6) / 1e6 * h)
    out = [b[:1]]
    for a, c in zip(b[:-1], b[1:]):
        n = (c - a) / h
        if abs(n - round(n)) > 1e-6:
            raise MeshError(
                f"outer element size {h:g} does not divide the {axis} segment [{a:g}, {c:g}]"
            )
        out.append(np.linspace(a, c, int(round(n)) + 1)[1:])
    return np.concatenate(out)


def array_layout(cfg):
    sc = cfg["scenario"]
    rows, cols = (cfg["array.rows"], cfg["array.cols"]) if sc == "array" else (1, 1)
    stagger = cfg["array.stagger"] if rows > 1 else 0.0
    try:
        return ArrayLayout(rows, cols, cfg["array.radius"], cfg["array.pitch"], stagger,
                           cfg["geometry.inner_thickness"], cfg["numerics.h_in"],
                           cfg.get("array.row_pitch"))
    except MeshError as exc:
        raise ConfigError(f"array: {exc}") from exc


def _membranes(cfg, layout, kappa):
    n = cfg["pmut.modes"]
    if cfg.get("pmut.modal_file"):
        data = read_modal_data(cfg["pmut.modal_file"])
        missing = [k for k in range(layout.n_membranes) if k not in data]
        if missing:
            raise ConfigError(f"pmut.modal_file: no data for membrane {missing[0]}")
        tables = [data[k] for k in range(layout.n_membranes)]
    else:
        if n > 6:
            raise ConfigError("pmut.modes: at most 6 analytic modes are available")
        lam = clamped_plate_roots(n)
        w1 = 2 * np.pi * cfg["drive.frequency"]
        omega = cfg.get("pmut.omega") or list(w1 * (lam / lam[0]) ** 2)
        eta = cfg.get("pmut.eta") or [1.0] * n
        if len(omega) != n or len(eta) != n:
            raise ConfigError("pmut.omega/pmut.eta: need one entry per mode")
        prof = default_clamped_plate_modes(cfg["array.radius"], n)
        modes = [ModeShape(p, w, e) for p, w, e in zip(prof, omega, eta)]
        tables = [(cfg["pmut.capacitance"], modes)] * layout.n_membranes
    return [
        PmutMembrane(k, c, layout.pmut_radius, list(modes), C, kappa)
        for k, (c, (C, modes)) in enumerate(zip(layout.centers(), tables))
    ]


def build_domain(cfg):
    """Mesh, materials, PML profile, membranes and drive signals for ``cfg``."""
    sc = cfg["scenario"]
    h_out = cfg["numerics.h_out"]
    layout = array_layout(cfg)
    W, H, t_in = layout.width, layout.height, layout.inner_thickness
    c_in, rho_in = cfg["material.c"], cfg["material.rho"]
    c_out = cfg.get("material.c_outer", c_in)
    rho_out = cfg.get("material.rho_outer", rho_in)
    materials = np.array([[c_in, rho_in], [c_out, rho_out]])

    margin = MARGIN_CELLS * h_out
    X = cfg.get("geometry.lx", W + 2 * margin) / 2
    Y = cfg.get("geometry.ly", H + 2 * margin) / 2

    obstacle = None
    if sc == "txrx_obstacle":
        d = cfg.get("geometry.obstacle_depth", 3 * c_out * cfg["drive.duration"])
        d = _snap(d, h_out)
        a = _snap(cfg.get("geometry.obstacle_radius", 8 * h_out), h_out)
        th = _snap(cfg.get("geometry.obstacle_thickness", 2 * h_out), h_out)
        if min(d, a, th) <= 0:
            raise ConfigError("geometry.obstacle_radius: obstacle degenerates on the outer grid")
        Z = cfg.get("geometry.lz", _ceil(d + th + margin, h_out))
        if d <= t_in or d + th >= Z or a >= min(X, Y):
            raise ConfigError("geometry.obstacle_depth: obstacle does not fit inside the domain")
        obstacle = (np.array([-a, -a, -d - th]), np.array([a, a, -d]))
    else:
        Z = cfg.get("geometry.lz", _ceil(300e-6, h_out))
    if W / 2 >= X or H / 2 >= Y or t_in >= Z:
        raise ConfigError("geometry.lx: the domain must enclose the inner block")

    ell = _ceil(cfg["pml.thickness"], h_out) if cfg["pml.enabled"] else 0.0
    xb = [-X - ell, -X, -W / 2, W / 2, X, X + ell]
    yb = [-Y - ell, -Y, -H / 2, H / 2, Y, Y + ell]
    zb = [-Z - ell, -Z, -t_in, 0.0]
    if obstacle is not None:
        xb += [obstacle[0][0], obstacle[1][0]]
        yb += [obstacle[0][1], obstacle[1][1]]
        zb += [obstacle[0][2], obstacle[1][2]]
    edges = [_edges(b, h_out, ax) for b, ax in zip((xb, yb, zb), "xyz")]
    mid = [(e[1:] + e[:-1]) / 2 for e in edges]
    C = np.stack(np.meshgrid(*mid, indexing="ij"), -1)

    def inside(lo, hi):
        return np.all((C > lo) & (C < hi), axis=-1)

    keep = ~inside(np.array([-W / 2, -H / 2, -t_in]), np.array([W / 2, H / 2, 1.0]))
    if obstacle is not None:
        keep &= ~inside(*obstacle)
    lo, hi = np.array([-X, -Y, -Z]), np.array([X, Y, 0.0])
    nodes, elems, ijk = structured_box(*edges, keep)
    cen = C[ijk[:, 0], ijk[:, 1], ijk[:, 2]]
    region = np.where(np.any((cen < lo) | (cen > hi), axis=1), Region.PML, Region.OUTER)
    outer = HexMesh(nodes, elems, region, OUTER_MATERIAL)
    _tag_outer(outer, lo - ell, hi, obstacle, cfg, ell > 0)

    inner = generate_array_mesh(layout, material=INNER_MATERIAL)
    mesh = tag_interfaces(concatenate([inner, outer]))

    profile = None
    if ell > 0:
        profile = PmlProfile.from_box(lo, hi + np.array([0, 0, ell]), ell, c_out,
                                      cfg["pml.reflection_coeff"])
    kappa = rho_in * c_in**2
    membranes = _membranes(cfg, layout, kappa)
    sig = VoltageSignal(cfg["drive.amplitude"], cfg["drive.frequency"], cfg["drive.duration"],
                        cfg["drive.envelope"], cfg.get("drive.switch_time", np.inf),
                        cfg["drive.clamp_envelope"])
    return Domain(mesh, layout, materials, lo, hi, profile, obstacle, membranes,
                  [sig] * len(membranes))


def _tag_outer(mesh, ext_lo, ext_hi, obstacle, cfg, pml):
    bf = boundary_faces(mesh.elements)
    mesh.faces = bf
    cen = mesh.face_centroids()
    tol = 1e-6 * float(np.max(ext_hi - ext_lo))
    tags = np.full(len(bf), -1)
    wall = np.any(np.abs(cen - ext_lo) < tol, axis=1) | np.any(
        np.abs(cen[:, :2] - ext_hi[:2]) < tol, axis=1
    )
    if pml:
        wall_tag = FaceTag.PML_OUTER
    else:
        wall_tag = FaceTag.ABC if cfg["geometry.outer_boundary"] == "abc" else FaceTag.NEUMANN
    tags[wall] = wall_tag
    tags[np.abs(cen[:, 2] - ext_hi[2]) < tol] = FaceTag.NEUMANN
    if obstacle is not None:
        on = np.all((cen >= obstacle[0] - tol) & (cen <= obstacle[1] + tol), axis=1)
        tags[on] = FaceTag.NEUMANN
    sel = tags >= 0
    mesh.faces = bf[sel]
    mesh.face_tag = tags[sel]
    mesh.face_membrane = np.full(sel.sum(), -1)


def default_probes(domain):
    """Centre of membrane 0 and a point halfway down the physical box."""
    c = domain.membranes[0].center if domain.membranes else np.zeros(3)
    return [tuple(c), (0.0, 0.0, domain.lo[2] / 2)]
