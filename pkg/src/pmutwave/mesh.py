"""Hexahedral meshes with region and boundary tags, and the mesh file format."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import FACE_CORNERS, jacobian_det


class MeshError(ValueError):
    pass


class Region(enum.IntEnum):
    INNER = 0
    OUTER = 1
    PML = 2
    DG_LAYER = 3


class FaceTag(enum.IntEnum):
    PMUT = 0
    NEUMANN = 1
    ABC = 2
    INTERFACE_FINE = 3
    INTERFACE_COARSE = 4
    PML_OUTER = 5


ABSORBING_TAGS = (FaceTag.ABC, FaceTag.PML_OUTER)


@dataclass
class HexMesh:
    """Hexahedral mesh.

    Attributes
    ----------
    nodes : (N, 3) float array
    elements : (E, 8) int array, VTK corner order
    region : (E,) int array of :class:`Region` codes
    material : (E,) int array, index into a material table
    faces : (F, 2) int array of (element, local face)
    face_tag : (F,) int array of :class:`FaceTag` codes
    face_membrane : (F,) int array, membrane index for PMUT faces else -1
    element_block : (E,) int array, originating mesh block or -1
    """

    nodes: np.ndarray
    elements: np.ndarray
    region: np.ndarray
    material: np.ndarray
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    face_tag: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    face_membrane: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    element_block: np.ndarray | None = None

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(-1, 3)
        self.elements = np.asarray(self.elements, dtype=np.int64).reshape(-1, 8)
        E = len(self.elements)
        self.region = np.broadcast_to(np.asarray(self.region, dtype=np.int64), (E,)).copy()
        self.material = np.broadcast_to(np.asarray(self.material, dtype=np.int64), (E,)).copy()
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 2)
        self.face_tag = np.asarray(self.face_tag, dtype=np.int64).reshape(-1)
        if len(self.face_membrane) != len(self.faces):
            self.face_membrane = np.full(len(self.faces), -1, dtype=np.int64)
        self.face_membrane = np.asarray(self.face_membrane, dtype=np.int64)
        if self.element_block is None:
            self.element_block = np.full(E, -1, dtype=np.int64)
        self.element_block = np.asarray(self.element_block, dtype=np.int64)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elements(self):
        return len(self.elements)

    def corners(self, elems=None):
        """Corner coordinates, shape (E, 8, 3)."""
        if elems is None:
            return self.nodes[self.elements]
        return self.nodes[self.elements[elems]]

    def faces_with_tag(self, *tags):
        mask = np.isin(self.face_tag, [int(t) for t in tags])
        return np.nonzero(mask)[0]

    def membrane_faces(self, k):
        return np.nonzero((self.face_tag == FaceTag.PMUT) & (self.face_membrane == k))[0]

    @property
    def n_membranes(self):
        m = self.face_membrane[self.face_tag == FaceTag.PMUT]
        return int(m.max()) + 1 if len(m) else 0

    def face_vertices(self, faces=None):
        """Vertex ids of boundary faces, shape (F, 4)."""
        f = self.faces if faces is None else self.faces[faces]
        return self.elements[f[:, 0][:, None], FACE_CORNERS[f[:, 1]]]

    def face_centroids(self, faces=None):
        return self.nodes[self.face_vertices(faces)].mean(axis=1)

    def element_centroids(self):
        return self.nodes[self.elements].mean(axis=1)

    def min_edge_lengths(self):
        c = self.corners()
        edges = [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4),
                 (0, 4), (1, 5), (2, 6), (3, 7)]
        lens = np.stack([np.linalg.norm(c[:, a] - c[:, b], axis=1) for a, b in edges], 1)
        return lens.min(axis=1)

    def bounding_box(self):
        return self.nodes.min(axis=0), self.nodes.max(axis=0)

    def validate(self, samples=3):
        """Raise MeshError unless every element has det J > 0 on a sample grid."""
        if self.n_elements == 0:
            raise MeshError("empty mesh")
        if self.elements.min() < 0 or self.elements.max() >= self.n_nodes:
            raise MeshError("element references a node out of range")
        srt = np.sort(self.elements, axis=1)
        if np.any(srt[:, 1:] == srt[:, :-1]):
            bad = int(np.nonzero(np.any(srt[:, 1:] == srt[:, :-1], axis=1))[0][0])
            raise MeshError(f"element {bad} has repeated vertices")
        g = np.linspace(-1.0, 1.0, samples)
        pts = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
        det = jacobian_det(self.corners(), pts)
        if np.any(det <= 0.0):
            bad = int(np.nonzero(np.any(det <= 0.0, axis=1))[0][0])
            raise MeshError(f"element {bad} has non-positive Jacobian")

    def subset(self, keep):
        """Mesh restricted to the elements in boolean mask ``keep``; nodes compacted."""
        keep = np.asarray(keep, dtype=bool)
        old_to_new_e = np.full(self.n_elements, -1, dtype=np.int64)
        old_to_new_e[keep] = np.arange(keep.sum())
        used = np.unique(self.elements[keep])
        old_to_new_n = np.full(self.n_nodes, -1, dtype=np.int64)
        old_to_new_n[used] = np.arange(len(used))
        fkeep = keep[self.faces[:, 0]] if len(self.faces) else np.zeros(0, bool)
        faces = self.faces[fkeep].copy()
        faces[:, 0] = old_to_new_e[faces[:, 0]]
        return HexMesh(
            self.nodes[used],
            old_to_new_n[self.elements[keep]],
            self.region[keep],
            self.material[keep],
            faces,
            self.face_tag[fkeep],
            self.face_membrane[fkeep],
            self.element_block[keep],
        )


def concatenate(meshes):
    """Disjoint union of meshes (no node sharing)."""
    nodes, elems, region, mat, faces, tags, memb, blocks = [], [], [], [], [], [], [], []
    n_off = e_off = 0
    for m in meshes:
        nodes.append(m.nodes)
        elems.append(m.elements + n_off)
        region.append(m.region)
        mat.append(m.material)
        f = m.faces.copy()
        f[:, 0] += e_off
        faces.append(f)
        tags.append(m.face_tag)
        memb.append(m.face_membrane)
        blocks.append(m.element_block)
        n_off += m.n_nodes
        e_off += m.n_elements
    return HexMesh(
        np.concatenate(nodes),
        np.concatenate(elems),
        np.concatenate(region),
        np.concatenate(mat),
        np.concatenate(faces),
        np.concatenate(tags),
        np.concatenate(memb),
        np.concatenate(blocks),
    )


def boundary_faces(elements):
    """(element, local face) pairs of faces not shared by two elements.

    Faces are identified by their sorted vertex ids, so only conforming
    (vertex-sharing) neighbours are recognised.
    """
    elements = np.asarray(elements, dtype=np.int64)
    E = len(elements)
    verts = elements[:, FACE_CORNERS].reshape(E * 6, 4)
    key = np.sort(verts, axis=1)
    order = np.lexsort(key.T[::-1])
    ks = key[order]
    same_next = np.all(ks[1:] == ks[:-1], axis=1)
    dup = np.zeros(len(ks), dtype=bool)
    dup[1:] |= same_next
    dup[:-1] |= same_next
    single = np.sort(order[~dup])
    return np.stack([single // 6, single % 6], axis=1)


def structured_box(x_edges, y_edges, z_edges, keep=None):
    """Tensor-product hex grid.

    Returns ``nodes`` (N, 3), ``elements`` (E, 8) and the (i, j, k) cell
    index of each element. ``keep`` is an optional boolean array of shape
    (nx, ny, nz) selecting cells; unused nodes are dropped.
    """
    x = np.asarray(x_edges, dtype=float)
    y = np.asarray(y_edges, dtype=float)
    z = np.asarray(z_edges, dtype=float)
    nx, ny, nz = len(x) - 1, len(y) - 1, len(z) - 1
    X, Y, Z = np.meshgrid(x, y, z, indexing="ij")
    nodes = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def nid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    I, J, K = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    if keep is not None:
        keep = np.asarray(keep, dtype=bool)
        I, J, K = I[keep], J[keep], K[keep]
    else:
        I, J, K = I.ravel(), J.ravel(), K.ravel()
    elements = np.stack(
        [
            nid(I, J, K),
            nid(I + 1, J, K),
            nid(I + 1, J + 1, K),
            nid(I, J + 1, K),
            nid(I, J, K + 1),
            nid(I + 1, J, K + 1),
            nid(I + 1, J + 1, K + 1),
            nid(I, J + 1, K + 1),
        ],
        axis=1,
    )
    used = np.unique(elements)
    remap = np.full(len(nodes), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return nodes[used], remap[elements], np.stack([I, J, K], axis=1)


def regular_edges(lo, hi, h, what="extent"):
    """Edges lo, lo+h, ..., hi; raises if h does not divide the extent."""
    n = (hi - lo) / h
    nr = int(round(n))
    if nr < 1 or abs(n - nr) > 1e-6 * max(1.0, n):
        raise MeshError(f"element size {h} does not divide {what} {hi - lo}")
    return np.linspace(lo, hi, nr + 1)


# ---------------------------------------------------------------------------
# mesh file format

MESH_HEADER = "PMUTMESH 1"
_REGION_NAMES = {r: r.name.lower() for r in Region}
_REGION_CODES = {v: k for k, v in _REGION_NAMES.items()}
_TAG_NAMES = {t: t.name.lower() for t in FaceTag}
_TAG_CODES = {v: k for k, v in _TAG_NAMES.items()}


def write_mesh(mesh, path):
    """Write ``mesh`` in the text format; floats use 17 significant digits."""
    if mesh.n_elements == 0:
        raise MeshError("empty mesh")
    lines = [MESH_HEADER, f"nodes {mesh.n_nodes}"]
    lines += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.nodes]
    lines.append(f"elements {mesh.n_elements}")
    for v, r, m, b in zip(mesh.elements, mesh.region, mesh.material, mesh.element_block):
        line = " ".join(map(str, v)) + f" {_REGION_NAMES[Region(r)]} {m}"
        if b >= 0:
            line += f" {b}"
        lines.append(line)
    lines.append(f"faces {len(mesh.faces)}")
    for (e, f), t, k in zip(mesh.faces, mesh.face_tag, mesh.face_membrane):
        line = f"{e} {f} {_TAG_NAMES[FaceTag(t)]}"
        if t == FaceTag.PMUT:
            line += f" {k}"
        lines.append(line)
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path, validate=True):
    """Read a mesh file; malformed input raises MeshError with a line number."""
    text = Path(path).read_text().splitlines()
    pos = 0

    def fail(msg):
        raise MeshError(f"{path}:{pos + 1}: {msg}")

    def take():
        nonlocal pos
        while pos < len(text) and not text[pos].strip():
            pos += 1
        if pos >= len(text):
            raise MeshError(f"{path}:{pos + 1}: unexpected end of file")
        line = text[pos].split()
        pos += 1
        return line

    def count(word):
        line = take()
        if len(line) != 2 or line[0] != word or not line[1].isdigit():
            pos_fail(f"expected '{word} <count>'")
        return int(line[1])

    def pos_fail(msg):
        nonlocal pos
        pos -= 1
        fail(msg)

    header = take()
    if " ".join(header) != MESH_HEADER:
        pos_fail(f"bad header, expected '{MESH_HEADER}'")
    nn = count("nodes")
    nodes = np.empty((nn, 3))
    for i in range(nn):
        line = take()
        if len(line) != 3:
            pos_fail(f"node line needs 3 coordinates, got {len(line)}")
        try:
            nodes[i] = [float(v) for v in line]
        except ValueError:
            pos_fail("non-numeric coordinate")
    ne = count("elements")
    if ne == 0:
        raise MeshError("empty mesh")
    elems = np.empty((ne, 8), dtype=np.int64)
    region = np.empty(ne, dtype=np.int64)
    mat = np.empty(ne, dtype=np.int64)
    block = np.empty(ne, dtype=np.int64)
    for i in range(ne):
        line = take()
        if len(line) not in (10, 11):
            pos_fail(f"element line needs 8 vertices, region and material; got {len(line)} fields")
        try:
            elems[i] = [int(v) for v in line[:8]]
            mat[i] = int(line[9])
            block[i] = int(line[10]) if len(line) == 11 else -1
        except ValueError:
            pos_fail("non-integer element field")
        if line[8] not in _REGION_CODES:
            pos_fail(f"unknown region '{line[8]}'")
        region[i] = _REGION_CODES[line[8]]
    nf = count("faces")
    faces = np.empty((nf, 2), dtype=np.int64)
    tags = np.empty(nf, dtype=np.int64)
    memb = np.full(nf, -1, dtype=np.int64)
    for i in range(nf):
        line = take()
        if len(line) not in (3, 4) or line[2] not in _TAG_CODES:
            pos_fail("face line must be 'elem face tag [k]'")
        faces[i] = int(line[0]), int(line[1])
        tags[i] = _TAG_CODES[line[2]]
        if tags[i] == FaceTag.PMUT:
            if len(line) != 4:
                pos_fail("pmut face needs a membrane index")
            memb[i] = int(line[3])
    mesh = HexMesh(nodes, elems, region, mat, faces, tags, memb, block)
    if validate:
        mesh.validate()
    return mesh


__all__ = [
    "ABSORBING_TAGS",
    "FaceTag",
    "HexMesh",
    "MeshError",
    "Region",
    "boundary_faces",
    "concatenate",
    "read_mesh",
    "regular_edges",
    "structured_box",
    "write_mesh",
]
