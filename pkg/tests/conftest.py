import numpy as np
import pytest

from pmutwave.dg import tag_interfaces
from pmutwave.geometry import FACE_CORNERS
from pmutwave.mesh import FaceTag, HexMesh, Region, boundary_faces, concatenate, structured_box


def box_mesh(nx, ny, nz, lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0), region=Region.OUTER, tag=None):
    edges = [np.linspace(a, b, n + 1) for a, b, n in zip(lo, hi, (nx, ny, nz))]
    nodes, el, _ = structured_box(*edges)
    faces = boundary_faces(el) if tag is not None else np.zeros((0, 2), dtype=np.int64)
    tags = np.full(len(faces), int(tag) if tag is not None else 0)
    return HexMesh(nodes, el, region, 0, faces, tags)


def two_layer(n_coarse=2, ratio=2, depth=1.0, width=1.0, bottom_tag=None, fine_depth=None):
    """Fine inner slab on top of a coarse outer slab, non-conforming at z = 0."""
    fd = depth if fine_depth is None else fine_depth
    nf = n_coarse * ratio
    hf = width / nf
    hc = width / n_coarse
    fine = box_mesh(nf, nf, max(1, int(round(fd / hf))), (0, 0, 0), (width, width, fd),
                    Region.INNER)
    coarse = box_mesh(n_coarse, n_coarse, max(1, int(round(depth / hc))), (0, 0, -depth),
                      (width, width, 0), Region.OUTER)
    m = concatenate([fine, coarse])
    if bottom_tag is not None:
        bf = boundary_faces(coarse.elements) + [fine.n_elements, 0]
        cen = m.nodes[m.elements[bf[:, 0][:, None], FACE_CORNERS[bf[:, 1]]]].mean(1)
        sel = bf[np.isclose(cen[:, 2], -depth)]
        m.faces = np.concatenate([m.faces, sel])
        m.face_tag = np.concatenate([m.face_tag, np.full(len(sel), int(bottom_tag))])
        m.face_membrane = np.full(len(m.faces), -1)
    return tag_interfaces(m)


def distort(mesh, amp, seed=0):
    """Smoothly perturb interior coordinates, keeping the boundary box and the z = 0 plane."""
    rng = np.random.default_rng(seed)
    k = rng.uniform(1.0, 2.0, 3)
    x = mesh.nodes.copy()
    lo, hi = x.min(0), x.max(0)
    s = (x - lo) / (hi - lo)
    bump = np.prod(np.sin(np.pi * s), axis=1)
    for a in range(2):
        x[:, a] += amp * bump * np.sin(k[a] * np.pi * s[:, (a + 1) % 3])
    return HexMesh(x, mesh.elements, mesh.region, mesh.material, mesh.faces, mesh.face_tag,
                   mesh.face_membrane, mesh.element_block)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
