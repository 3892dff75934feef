"""Non-conforming interface coupling by symmetric interior penalty.

Quadrature on the interface uses the GLL nodes of each fine face. Every
node is located in a coarse element by Newton inversion, after pruning
the coarse faces by an opposite-normal test and a vertex-radius test.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

from .geometry import (
    FACE_AXIS,
    FACE_CORNERS,
    FACE_SIDE,
    INSIDE_SLACK,
    face_frame,
    face_points,
    jacobian,
    map_forward,
    map_inverse,
)
from .mesh import FaceTag, MeshError, Region, boundary_faces
from .parallel import Executor
from .sem import face_gll_points, gather_add_chunk, gather_plan, gll_rule, tensor_basis

NORMAL_TOL = 1e-6
RADIUS_SLACK_REL = 1e-3


class MatchError(MeshError):
    pass


# --- trace operators --------------------------------------------------------


def jump_scalar(u_plus, u_minus, n_plus):
    """[[u]] = u+ n+ + u- n-  with n- = -n+."""
    return (np.asarray(u_plus) - np.asarray(u_minus))[..., None] * np.asarray(n_plus)


def average_scalar(u_plus, u_minus):
    return 0.5 * (np.asarray(u_plus) + np.asarray(u_minus))


def jump_vector(v_plus, v_minus, n_plus):
    """[[v]] = v+ . n+ + v- . n-."""
    return np.sum((np.asarray(v_plus) - np.asarray(v_minus)) * np.asarray(n_plus), axis=-1)


def average_vector(v_plus, v_minus):
    return 0.5 * (np.asarray(v_plus) + np.asarray(v_minus))


def boundary_jump_scalar(u, n):
    return np.asarray(u)[..., None] * np.asarray(n)


def penalty_gamma(c_plus, c_minus, r_in, r_out, h_in, h_out, alpha):
    """alpha * cbar^2 * max(r)^2 / min(h), cbar the harmonic mean of the speeds."""
    cbar = 2.0 * c_plus * c_minus / (c_plus + c_minus)
    return alpha * cbar**2 * max(r_in, r_out) ** 2 / np.minimum(h_in, h_out)


# --- face matching ----------------------------------------------------------


@dataclass
class FacePairTable:
    """One row per interface quadrature node, grouped by fine face."""

    fine_face: np.ndarray  # mesh face index of the fine face
    fine_elem: np.ndarray
    coarse_elem: np.ndarray
    xq: np.ndarray
    xhat_plus: np.ndarray
    xhat_minus: np.ndarray
    w: np.ndarray  # reference tensor weight
    surf_jac: np.ndarray
    normal: np.ndarray  # outward normal of the fine element
    n_candidates: int = 0  # Newton containment tests performed
    n_all_pairs: int = 0

    def __len__(self):
        return len(self.fine_face)

    def pairs(self):
        """Sorted unique (fine face, coarse element) pairs."""
        return sorted(set(zip(self.fine_face.tolist(), self.coarse_elem.tolist())))

    def face_area(self, face):
        sel = self.fine_face == face
        return float(np.sum(self.w[sel] * self.surf_jac[sel]))

    def dump(self, path):
        with open(Path(path), "w") as fh:
            for i in range(len(self)):
                x = self.xq[i]
                fh.write(
                    f"{self.fine_face[i]} {self.coarse_elem[i]} "
                    f"{x[0]:.17g} {x[1]:.17g} {x[2]:.17g} {self.w[i] * self.surf_jac[i]:.17g}\n"
                )


def _face_geometry(mesh, faces):
    """Centre normals, diameters and stored (lowest-index) vertex of boundary faces."""
    corners = mesh.corners(mesh.faces[faces, 0])
    normals = np.empty((len(faces), 3))
    centre = np.zeros(2)
    for i, (fi, c) in enumerate(zip(faces, corners)):
        f = mesh.faces[fi, 1]
        n, _ = face_frame(c, f, face_points(f, centre[None]))
        normals[i] = n[0]
    fv = mesh.face_vertices(faces)
    pts = mesh.nodes[fv]
    diam = np.max(np.linalg.norm(pts[:, :, None] - pts[:, None, :], axis=-1), axis=(1, 2))
    vertex = mesh.nodes[fv.min(axis=1)]
    return normals, diam, vertex


def _fine_nodes(mesh, fine_faces, r_in):
    """Concatenated GLL nodes of the fine faces with their face-local data."""
    rule = gll_rule(r_in)
    cols = [[] for _ in range(7)]
    for i, fi in enumerate(fine_faces):
        e, f = mesh.faces[fi]
        ref, w = face_gll_points(rule, f)
        c = mesh.corners([e])[0]
        n, sj = face_frame(c, f, ref)
        for col, v in zip(cols, (np.full(len(w), i), np.full(len(w), e), map_forward(c, ref), ref, w, sj, n)):
            col.append(v)
    return [np.concatenate(c) for c in cols]


def _resolve(mesh, fine, coarse, nodes, node_of, face_of, slack, on_face_tol=1e-6):
    """Owner per node among candidate (node, coarse face) pairs.

    The owner is the lowest element id whose candidate face contains the
    node; nodes without one are orphans.
    """
    fidx, e_plus, xq, ref, w, sj, nrm = nodes
    cf = coarse[face_of]
    elems = mesh.faces[cf, 0]
    lf = mesh.faces[cf, 1]
    res = map_inverse(mesh.corners(elems), xq[node_of], slack=slack)
    on = np.abs(res.xhat[np.arange(len(cf)), FACE_AXIS[lf]] - FACE_SIDE[lf]) <= on_face_tol
    hit = np.nonzero(res.inside & on)[0]
    order = hit[np.lexsort((elems[hit], node_of[hit]))]
    first = order[np.r_[True, node_of[order][1:] != node_of[order][:-1]]] if len(order) else order
    owner = np.full(len(xq), -1, dtype=np.int64)
    xm = np.full((len(xq), 3), np.nan)
    owner[node_of[first]] = elems[first]
    xm[node_of[first]] = res.xhat[first]
    orphan = np.nonzero(owner < 0)[0]
    if len(orphan):
        q = orphan[0]
        raise MatchError(
            f"orphan interface node {tuple(np.round(xq[q], 15))} of fine face {fine[fidx[q]]}"
            f" ({len(orphan)} orphan nodes in total)"
        )
    return FacePairTable(
        fine[fidx], e_plus.astype(np.int64), owner, xq, ref, xm, w, sj, nrm
    )


def match_faces(mesh, r_in, normal_tol=NORMAL_TOL, radius_slack=None, slack=INSIDE_SLACK):
    """Build the FacePairTable for all interface_fine / interface_coarse faces.

    Candidates for a node x_q are coarse faces with antiparallel normal
    whose stored vertex lies within max(diam) + slack of x_q.
    """
    fine = mesh.faces_with_tag(FaceTag.INTERFACE_FINE)
    coarse = mesh.faces_with_tag(FaceTag.INTERFACE_COARSE)
    if len(fine) == 0:
        return _empty_table()
    if len(coarse) == 0:
        raise MatchError("interface_fine faces present but no interface_coarse faces")
    n_f, d_f, _ = _face_geometry(mesh, fine)
    n_c, d_c, v_c = _face_geometry(mesh, coarse)
    if radius_slack is None:
        radius_slack = RADIUS_SLACK_REL * min(d_f.min(), d_c.min())
    nodes = _fine_nodes(mesh, fine, r_in)
    fidx, xq = nodes[0], nodes[2]
    r_max = max(d_f.max(), d_c.max()) + radius_slack
    near = cKDTree(v_c).query_ball_point(xq, r_max)
    counts = np.array([len(x) for x in near])
    node_of = np.repeat(np.arange(len(xq)), counts)
    face_of = np.concatenate([np.sort(x) for x in near]).astype(np.int64) if len(node_of) else node_of
    fi = fidx[node_of]
    keep = np.linalg.norm(n_c[face_of] + n_f[fi], axis=1) < normal_tol
    dist = np.linalg.norm(v_c[face_of] - xq[node_of], axis=1)
    keep &= dist <= np.maximum(d_c[face_of], d_f[fi]) + radius_slack
    node_of, face_of = node_of[keep], face_of[keep]
    table = _resolve(mesh, fine, coarse, nodes, node_of, face_of, slack)
    table.n_candidates = len(node_of)
    table.n_all_pairs = len(xq) * len(coarse)
    return table


def match_faces_bruteforce(mesh, r_in, normal_tol=NORMAL_TOL, slack=INSIDE_SLACK):
    """Reference matcher: every fine node against every antiparallel coarse face."""
    fine = mesh.faces_with_tag(FaceTag.INTERFACE_FINE)
    coarse = mesh.faces_with_tag(FaceTag.INTERFACE_COARSE)
    if len(fine) == 0:
        return _empty_table()
    if len(coarse) == 0:
        raise MatchError("interface_fine faces present but no interface_coarse faces")
    n_f, _, _ = _face_geometry(mesh, fine)
    n_c, _, _ = _face_geometry(mesh, coarse)
    nodes = _fine_nodes(mesh, fine, r_in)
    Q = len(nodes[0])
    node_of = np.repeat(np.arange(Q), len(coarse))
    face_of = np.tile(np.arange(len(coarse)), Q)
    anti = np.linalg.norm(n_c[face_of] + n_f[nodes[0][node_of]], axis=1) < normal_tol
    table = _resolve(mesh, fine, coarse, nodes, node_of[anti], face_of[anti], slack)
    table.n_candidates = Q * len(coarse)
    table.n_all_pairs = Q * len(coarse)
    return table


def _empty_table():
    z = np.zeros((0, 3))
    i = np.zeros(0, dtype=np.int64)
    return FacePairTable(i, i, i, z, z, z, np.zeros(0), np.zeros(0), z)


# --- automatic interface tagging --------------------------------------------


def tag_interfaces(mesh, slack=1e-8):
    """Tag the non-conforming inner/outer interface and mark the DG layer.

    Boundary faces of the inner region lying on a boundary face of the
    outer region become interface_fine; the outer faces they lie on become
    interface_coarse, and outer elements owning such faces move to the
    DG_LAYER region. Existing tags on those faces are replaced.
    """
    inner = np.nonzero(mesh.region == Region.INNER)[0]
    outer = np.nonzero(mesh.region != Region.INNER)[0]
    if len(inner) == 0 or len(outer) == 0:
        return mesh
    bi = boundary_faces(mesh.elements[inner])
    bo = boundary_faces(mesh.elements[outer])
    fi = np.stack([inner[bi[:, 0]], bi[:, 1]], 1)
    fo = np.stack([outer[bo[:, 0]], bo[:, 1]], 1)

    def centroids(f):
        return mesh.nodes[mesh.elements[f[:, 0][:, None], FACE_CORNERS[f[:, 1]]]].mean(1)

    ci = centroids(fi)
    reach = np.max(np.linalg.norm(mesh.corners(outer) - mesh.element_centroids()[outer][:, None], axis=-1))
    tree = cKDTree(mesh.element_centroids()[fo[:, 0]])
    fine_hit = np.zeros(len(fi), dtype=bool)
    coarse_hit = np.zeros(len(fo), dtype=bool)
    for a, x in enumerate(ci):
        for b in sorted(tree.query_ball_point(x, reach * (1 + 1e-9))):
            e, f = fo[b]
            res = map_inverse(mesh.corners([e])[0], x, slack=slack)
            if res.inside and abs(res.xhat[FACE_AXIS[f]] - FACE_SIDE[f]) < 1e-6:
                fine_hit[a] = True
                coarse_hit[b] = True
    fine_f, coarse_f = fi[fine_hit], fo[coarse_hit]
    return _retag(mesh, fine_f, coarse_f)


def _retag(mesh, fine_f, coarse_f):
    key = {tuple(f): i for i, f in enumerate(mesh.faces.tolist())}
    faces = mesh.faces.tolist()
    tags = mesh.face_tag.tolist()
    memb = mesh.face_membrane.tolist()
    for group, tag in ((fine_f, FaceTag.INTERFACE_FINE), (coarse_f, FaceTag.INTERFACE_COARSE)):
        for f in group.tolist():
            i = key.get(tuple(f))
            if i is None:
                key[tuple(f)] = len(faces)
                faces.append(f)
                tags.append(int(tag))
                memb.append(-1)
            else:
                tags[i] = int(tag)
                memb[i] = -1
    region = mesh.region.copy()
    dg = np.unique(coarse_f[:, 0]) if len(coarse_f) else np.zeros(0, dtype=np.int64)
    region[dg[region[dg] == Region.OUTER]] = Region.DG_LAYER
    mesh.faces = np.array(faces, dtype=np.int64).reshape(-1, 2)
    mesh.face_tag = np.array(tags, dtype=np.int64)
    mesh.face_membrane = np.array(memb, dtype=np.int64)
    mesh.region = region
    return mesh


# --- interface operator -----------------------------------------------------


@njit(nogil=True, cache=True)
def _flux_chunk(u, idx_p, phi_p, dn_p, idx_m, phi_m, dn_m, W, gam, q0, q1, buf_p, buf_m):
    n_p = idx_p.shape[1]
    n_m = idx_m.shape[1]
    for q in range(q0, q1):
        up = 0.0
        sp = 0.0
        for a in range(n_p):
            v = u[idx_p[q, a]]
            up += phi_p[q, a] * v
            sp += dn_p[q, a] * v
        um = 0.0
        sm = 0.0
        for a in range(n_m):
            v = u[idx_m[q, a]]
            um += phi_m[q, a] * v
            sm += dn_m[q, a] * v
        jump = up - um
        # flux paired with the test jump, and the jump paired with the test average
        r = W[q] * (gam[q] * jump - 0.5 * (sp + sm))
        s = 0.5 * W[q] * jump
        for a in range(n_p):
            buf_p[q * n_p + a] = r * phi_p[q, a] - s * dn_p[q, a]
        for a in range(n_m):
            buf_m[q * n_m + a] = -r * phi_m[q, a] - s * dn_m[q, a]


class InterfaceOperator:
    """Action of the three interface sums of the SIP bilinear form.

    Per quadrature node the traces are ``u+ = phi+ . u``, ``u- = phi- . u``
    and the normal fluxes ``c^2 grad u . n+`` on both sides, so that::

        a_I(u, v) = sum_q W_q ( gamma [u][v] - {c^2 du/dn}[v] - {c^2 dv/dn}[u] )
    """

    def __init__(self, mesh, dofmap, table, c_elem, alpha=10.0, executor=None):
        self.n_dofs = dofmap.n_dofs
        self.executor = executor or Executor(1)
        Q = len(table)
        self.Q = Q
        if Q == 0:
            return
        c_elem = np.asarray(c_elem, dtype=float)
        gp = dofmap.group_of(int(table.fine_elem[0]))
        gm = dofmap.group_of(int(table.coarse_elem[0]))
        h = mesh.min_edge_lengths()
        self.W = table.w * table.surf_jac
        self.gamma = penalty_gamma(
            c_elem[table.fine_elem], c_elem[table.coarse_elem],
            gp.degree, gm.degree, h[table.fine_elem], h[table.coarse_elem], alpha,
        )
        self.idx_p, self.phi_p, self.dn_p = self._side(mesh, dofmap, table.fine_elem, table.xhat_plus, table.normal, c_elem)
        self.idx_m, self.phi_m, self.dn_m = self._side(mesh, dofmap, table.coarse_elem, table.xhat_minus, table.normal, c_elem)
        self.buf_p = np.empty(self.idx_p.size)
        self.buf_m = np.empty(self.idx_m.size)
        self.indptr, self.indices = gather_plan([self.idx_p, self.idx_m], self.n_dofs)
        self.touched = np.nonzero(np.diff(self.indptr))[0]

    @staticmethod
    def _side(mesh, dofmap, elems, xhat, normal, c_elem):
        Q = len(elems)
        rule = dofmap.group_of(int(elems[0])).rule
        nl = rule.n**3
        idx = np.empty((Q, nl), dtype=np.int64)
        phi = np.empty((Q, nl))
        dn = np.empty((Q, nl))
        corners = mesh.corners(elems)
        for q in range(Q):
            e = int(elems[q])
            if dofmap.group_of(e).rule is not rule:
                raise MeshError("interface side mixes polynomial degrees")
            v, g = tensor_basis(rule, xhat[q][None])
            J = jacobian(corners[q], xhat[q])
            grad = g[0] @ np.linalg.inv(J)  # (nl, 3) physical gradients
            idx[q] = dofmap.element_dofs(e)
            phi[q] = v[0]
            dn[q] = c_elem[e] ** 2 * (grad @ normal[q])
        return idx, phi, dn

    def apply(self, u, out):
        """Add the interface action to ``out`` in place."""
        if self.Q == 0:
            return out
        u = np.ascontiguousarray(u, dtype=float)
        self.executor.map_range(
            self.Q,
            lambda a, b: _flux_chunk(
                u, self.idx_p, self.phi_p, self.dn_p, self.idx_m, self.phi_m, self.dn_m,
                self.W, self.gamma, a, b, self.buf_p, self.buf_m,
            ),
        )
        buf = np.concatenate([self.buf_p, self.buf_m])
        self.executor.map_range(
            self.n_dofs, lambda a, b: gather_add_chunk(self.indptr, self.indices, buf, out, a, b)
        )
        return out
