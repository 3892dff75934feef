"""Inner-domain mesh blocks, PMUT array layout and block merging.

The inner domain is assembled from elementary blocks, one per logical
rank. Blocks keep local 0-based numbering until :func:`merge_blocks`
deduplicates the nodes on shared interfaces and renumbers globally.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import FACE_CORNERS, face_frame, face_points
from .mesh import (
    FaceTag,
    HexMesh,
    MeshError,
    Region,
    boundary_faces,
    regular_edges,
    structured_box,
)
from .partition import build_block_layout

SIDES = ("x-", "x+", "y-", "y+")


@dataclass
class ArrayLayout:
    """Staggered PMUT array on the top surface of the inner domain.

    Membranes in row ``m`` sit at ``x = x0 + (i + 1/2) d_p + (m % 2) * stagger``
    and rows are ``row_pitch`` apart in y (default ``d_p``).
    """

    n_rows: int
    n_cols: int
    pmut_radius: float
    pitch: float
    stagger: float
    inner_thickness: float
    element_size: float
    row_pitch: float | None = None

    def __post_init__(self):
        if self.row_pitch is None:
            self.row_pitch = self.pitch
        for name in ("pmut_radius", "pitch", "inner_thickness", "element_size", "row_pitch"):
            if getattr(self, name) <= 0:
                raise MeshError(f"{name} must be positive")
        if self.stagger < 0 or self.stagger >= self.pitch:
            raise MeshError("stagger must lie in [0, pitch)")
        if self.n_membranes and not self.pitch > 2 * self.pmut_radius:
            raise MeshError(
                f"membranes overlap: pitch {self.pitch} <= 2 * radius {2 * self.pmut_radius}"
            )
        if self.n_membranes and not self.row_pitch > 2 * self.pmut_radius:
            raise MeshError("membranes overlap across rows")

    @property
    def n_membranes(self):
        return max(self.n_rows, 0) * max(self.n_cols, 0)

    @property
    def n_block(self):
        """Blocks per row: one per membrane plus a filler when rows are staggered."""
        if self.n_membranes == 0:
            return 1
        return self.n_cols + (1 if self.stagger > 0 else 0)

    @property
    def n_block_rows(self):
        return self.n_rows if self.n_membranes else 1

    @property
    def width(self):
        if self.n_membranes == 0:
            return self.pitch
        return self.n_cols * self.pitch + self.stagger

    @property
    def height(self):
        if self.n_membranes == 0:
            return self.row_pitch
        return self.n_rows * self.row_pitch

    def centers(self):
        """Membrane centres (K, 3) on z = 0, row-major membrane numbering."""
        x0, y0 = -self.width / 2, -self.height / 2
        out = []
        for m in range(max(self.n_rows, 0)):
            for i in range(max(self.n_cols, 0)):
                x = x0 + (i + 0.5) * self.pitch + (m % 2) * self.stagger
                y = y0 + (m + 0.5) * self.row_pitch
                out.append((x, y, 0.0))
        return np.array(out, dtype=float).reshape(-1, 3)

    def block_extents(self):
        """x/y extents of block (n, m) as {(n, m): (xa, xb, ya, yb, k)}.

        ``k`` is the membrane hosted by the block, or -1 for filler blocks.
        """
        x0, y0 = -self.width / 2, -self.height / 2
        out = {}
        for m in range(self.n_block_rows):
            ya, yb = y0 + m * self.row_pitch, y0 + (m + 1) * self.row_pitch
            if self.n_membranes == 0:
                out[(0, m)] = (x0, x0 + self.pitch, ya, yb, -1)
                continue
            widths = [self.pitch] * self.n_cols
            hosts = [m * self.n_cols + i for i in range(self.n_cols)]
            if self.stagger > 0:
                if m % 2 == 0:
                    widths.append(self.stagger)
                    hosts.append(-1)
                else:
                    widths.insert(0, self.stagger)
                    hosts.insert(0, -1)
            xa = x0
            for n, (w, k) in enumerate(zip(widths, hosts)):
                out[(n, m)] = (xa, xa + w, ya, yb, k)
                xa += w
        return out


@dataclass
class MeshBlockFile:
    """One elementary block with local numbering.

    ``interface_nodes`` maps each lateral side to the local ids of the
    nodes on it, sorted by (x, y, z).
    """

    index: tuple
    nodes: np.ndarray
    elements: np.ndarray
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    face_tag: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    face_membrane: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    interface_nodes: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.interface_nodes:
            self.interface_nodes = _side_nodes(self.nodes)

    def shared_nodes(self):
        """All interface node ids, sorted lexicographically by coordinates."""
        ids = np.unique(np.concatenate([v for v in self.interface_nodes.values()]))
        return _sort_by_coords(self.nodes, ids)


def _sort_by_coords(nodes, ids):
    c = nodes[ids]
    return ids[np.lexsort((c[:, 2], c[:, 1], c[:, 0]))]


def _side_nodes(nodes, rtol=1e-9):
    lo, hi = nodes.min(axis=0), nodes.max(axis=0)
    tol = rtol * np.linalg.norm(hi - lo)
    out = {}
    for s in SIDES:
        ax = 0 if s[0] == "x" else 1
        ref = lo[ax] if s[1] == "-" else hi[ax]
        ids = np.nonzero(np.abs(nodes[:, ax] - ref) <= tol)[0]
        out[s] = _sort_by_coords(nodes, ids)
    return out


def box_block(index, lo, hi, h):
    """Untagged structured block over the box [lo, hi] with spacing ``h``."""
    edges = [regular_edges(lo[a], hi[a], h, f"block {index} axis {a}") for a in range(3)]
    nodes, elems, _ = structured_box(*edges)
    return MeshBlockFile(tuple(index), nodes, elems)


def merge_blocks(blocks, adjacency, snap_rtol=1e-9, region=Region.INNER, material=0):
    """Merge elementary blocks into one mesh with dense global numbering.

    ``blocks[i]`` is owned by rank ``i`` and ``adjacency[i]`` lists its
    neighbouring ranks. Ranks are processed in increasing order; shared
    nodes take the id already assigned by the lower-ranked neighbour.
    Interface nodes of block ``i`` lying inside a lower neighbour's bounding
    box must find a partner there within the snap tolerance.
    """
    if len(blocks) != len(adjacency):
        raise MeshError("one adjacency list per block is required")
    all_nodes = np.concatenate([b.nodes for b in blocks])
    lo, hi = all_nodes.min(axis=0), all_nodes.max(axis=0)
    snap = snap_rtol * float(np.linalg.norm(hi - lo))

    offsets = np.cumsum([0] + [len(b.nodes) for b in blocks])
    gid = [offsets[i] + np.arange(len(b.nodes)) for i, b in enumerate(blocks)]
    shared = [b.shared_nodes() for b in blocks]
    trees = [cKDTree(b.nodes[s]) if len(s) else None for b, s in zip(blocks, shared)]
    boxes = [(b.nodes.min(axis=0), b.nodes.max(axis=0)) for b in blocks]

    for i in range(1, len(blocks)):
        Si = shared[i]
        assigned = np.zeros(len(Si), dtype=bool)
        pts = blocks[i].nodes[Si]
        for j in sorted(a for a in adjacency[i] if a < i):
            if trees[j] is None:
                continue
            dist, idx = trees[j].query(pts, distance_upper_bound=snap)
            hit = np.isfinite(dist)
            jlo, jhi = boxes[j]
            expected = np.all((pts >= jlo - snap) & (pts <= jhi + snap), axis=1)
            missing = expected & ~hit
            if np.any(missing):
                p = pts[np.nonzero(missing)[0][0]]
                raise MeshError(
                    f"unmatched interface node {tuple(p)} between blocks "
                    f"{blocks[j].index} (rank {j}) and {blocks[i].index} (rank {i})"
                )
            new = hit & ~assigned
            gid[i][Si[new]] = gid[j][shared[j][idx[new]]]
            assigned |= hit

    provisional = np.concatenate(gid)
    keep_ids, dense = np.unique(provisional, return_inverse=True)
    # coordinates of a shared node come from its lowest-ranked copy
    first = np.full(len(keep_ids), -1, dtype=np.int64)
    first[dense[::-1]] = np.arange(len(dense))[::-1]
    nodes = all_nodes[first]

    elems, faces, tags, memb, eblock = [], [], [], [], []
    e_off = 0
    for i, b in enumerate(blocks):
        local_to_dense = dense[offsets[i] : offsets[i + 1]]
        elems.append(local_to_dense[b.elements])
        f = np.asarray(b.faces, dtype=np.int64).reshape(-1, 2).copy()
        f[:, 0] += e_off
        faces.append(f)
        tags.append(np.asarray(b.face_tag, dtype=np.int64))
        memb.append(np.asarray(b.face_membrane, dtype=np.int64))
        eblock.append(np.full(len(b.elements), i, dtype=np.int64))
        e_off += len(b.elements)
    E = e_off
    return HexMesh(
        nodes,
        np.concatenate(elems),
        np.full(E, int(region)),
        np.full(E, material),
        np.concatenate(faces),
        np.concatenate(tags),
        np.concatenate(memb),
        np.concatenate(eblock),
    )


def array_blocks(layout: ArrayLayout, side_tag=FaceTag.INTERFACE_FINE):
    """Elementary blocks of the inner domain, ordered by owning rank.

    Top faces whose centroid lies within the membrane radius of the hosted
    membrane centre are tagged PMUT; other top faces are Neumann; the
    bottom and the outer lateral sides get ``INTERFACE_FINE`` (or
    ``side_tag`` for the sides).
    """
    h = layout.element_size
    ext = layout.block_extents()
    centers = layout.centers()
    N_block, M = layout.n_block, layout.n_block_rows
    L = build_block_layout(N_block, M).owner
    W2, H2 = layout.width / 2, layout.height / 2
    tol = 1e-9 * max(layout.width, layout.height)
    blocks = [None] * (N_block * M)
    for (n, m), (xa, xb, ya, yb, k) in ext.items():
        b = box_block((n, m), (xa, ya, -layout.inner_thickness), (xb, yb, 0.0), h)
        bf = boundary_faces(b.elements)
        cen = b.nodes[b.elements[bf[:, 0][:, None], FACE_CORNERS[bf[:, 1]]]].mean(axis=1)
        f_list, t_list, k_list = [], [], []
        for (e, f), c in zip(bf, cen):
            if f == 5:
                if k >= 0 and np.hypot(*(c[:2] - centers[k, :2])) <= layout.pmut_radius:
                    f_list.append((e, f)), t_list.append(FaceTag.PMUT), k_list.append(k)
                else:
                    f_list.append((e, f)), t_list.append(FaceTag.NEUMANN), k_list.append(-1)
            elif f == 4:
                f_list.append((e, f)), t_list.append(FaceTag.INTERFACE_FINE), k_list.append(-1)
            elif (
                abs(abs(c[0]) - W2) <= tol and f in (0, 1)
            ) or (abs(abs(c[1]) - H2) <= tol and f in (2, 3)):
                f_list.append((e, f)), t_list.append(side_tag), k_list.append(-1)
        b.faces = np.array(f_list, dtype=np.int64).reshape(-1, 2)
        b.face_tag = np.array(t_list, dtype=np.int64)
        b.face_membrane = np.array(k_list, dtype=np.int64)
        if k >= 0 and not np.any(b.face_membrane == k):
            raise MeshError(
                f"element size {h} too coarse: membrane {k} received no tagged faces"
            )
        blocks[int(L[n, m])] = b
    return blocks


def generate_array_mesh(layout: ArrayLayout, side_tag=FaceTag.INTERFACE_FINE, material=0):
    """Inner-domain mesh of a PMUT array built from merged elementary blocks."""
    blocks = array_blocks(layout, side_tag)
    lay = build_block_layout(layout.n_block, layout.n_block_rows)
    return merge_blocks(blocks, lay.adjacency, material=material)


def tagged_disc_areas(mesh: HexMesh):
    """Area of the PMUT-tagged faces of each membrane."""
    out = np.zeros(mesh.n_membranes)
    g = np.array([-1 / np.sqrt(3), 1 / np.sqrt(3)])
    q = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    for fi in mesh.faces_with_tag(FaceTag.PMUT):
        e, f = mesh.faces[fi]
        _, sj = face_frame(mesh.corners(e), f, face_points(f, q))
        out[mesh.face_membrane[fi]] += sj.sum()
    return out
