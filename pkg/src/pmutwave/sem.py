"""Spectral-element building blocks on hexahedra.

GLL collocation gives a diagonal mass matrix; the stiffness action is
computed element by element from a per-node geometric tensor and then
gathered onto global DOFs in a fixed order, so results do not depend on
the number of worker threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .geometry import FACE_AXIS, FACE_SIDE, face_frame, jacobian, map_forward, map_inverse
from .mesh import FaceTag, MeshError, Region
from .parallel import Executor

MAX_DEGREE = 8
GLL_TOL = 1e-15


@dataclass(frozen=True)
class GllRule:
    degree: int
    nodes: np.ndarray
    weights: np.ndarray
    D: np.ndarray  # D[i, j] = l_j'(xi_i)

    @property
    def n(self):
        return self.degree + 1


def _legendre(r, x):
    """P_r(x) and P_{r-1}(x) by the three-term recurrence."""
    p0, p1 = np.ones_like(x), x.copy()
    if r == 0:
        return p0, np.zeros_like(x)
    for k in range(2, r + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    return p1, p0


@lru_cache(maxsize=None)
def gll_rule(r):
    """Gauss-Lobatto-Legendre rule of degree ``r`` (``r + 1`` points)."""
    if not (isinstance(r, (int, np.integer)) and 1 <= r <= MAX_DEGREE):
        raise ValueError(f"unsupported GLL degree {r!r}; expected 1..{MAX_DEGREE}")
    r = int(r)
    # Chebyshev-Gauss-Lobatto start, Newton on (1 - x^2) P_r'(x)
    x = -np.cos(np.pi * np.arange(r + 1) / r)
    for _ in range(100):
        P, Pm = _legendre(r, x)
        # (1-x^2) P_r' = r (P_{r-1} - x P_r); its derivative = -r(r+1) P_r
        f = r * (Pm - x * P)
        f[0] = f[-1] = 0.0
        dx = f / (-r * (r + 1) * P)
        x = x - dx
        if np.max(np.abs(dx)) < GLL_TOL:
            break
    x[0], x[-1] = -1.0, 1.0
    x = 0.5 * (x - x[::-1])  # exact symmetry
    P, _ = _legendre(r, x)
    w = 2.0 / (r * (r + 1) * P**2)
    D = np.zeros((r + 1, r + 1))
    for i in range(r + 1):
        for j in range(r + 1):
            if i != j:
                D[i, j] = P[i] / (P[j] * (x[i] - x[j]))
    # diagonal from the row sums so that D annihilates constants to rounding
    D[np.diag_indices(r + 1)] = -D.sum(axis=1)
    for a in (x, w, D):
        a.flags.writeable = False
    return GllRule(r, x, w, D)


def lagrange_basis(nodes, x):
    """Values and derivatives of the Lagrange basis on ``nodes`` at points ``x``.

    Returns ``L`` and ``dL`` of shape (len(x), len(nodes)).
    """
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = len(nodes)
    L = np.ones((len(x), n))
    dL = np.zeros((len(x), n))
    for j in range(n):
        for m in range(n):
            if m == j:
                continue
            den = nodes[j] - nodes[m]
            term = np.ones(len(x)) / den
            for k in range(n):
                if k != j and k != m:
                    term = term * (x - nodes[k]) / (nodes[j] - nodes[k])
            dL[:, j] += term
            L[:, j] *= (x - nodes[m]) / den
    return L, dL


def tensor_points(rule):
    """Reference GLL points of the tensor element, local index i + n*(j + n*k)."""
    g = rule.nodes
    k, j, i = np.meshgrid(g, g, g, indexing="ij")
    return np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1)


def tensor_weights(rule):
    w = rule.weights
    return (w[None, None, :] * w[None, :, None] * w[:, None, None]).ravel()


def tensor_basis(rule, xhat):
    """Values (P, n^3) and reference gradients (P, n^3, 3) of the tensor basis."""
    xhat = np.atleast_2d(xhat)
    n = rule.n
    L = [lagrange_basis(rule.nodes, xhat[:, a]) for a in range(3)]
    v = (L[2][0][:, :, None, None] * L[1][0][:, None, :, None] * L[0][0][:, None, None, :])
    g0 = L[2][0][:, :, None, None] * L[1][0][:, None, :, None] * L[0][1][:, None, None, :]
    g1 = L[2][0][:, :, None, None] * L[1][1][:, None, :, None] * L[0][0][:, None, None, :]
    g2 = L[2][1][:, :, None, None] * L[1][0][:, None, :, None] * L[0][0][:, None, None, :]
    P = len(xhat)
    grad = np.stack([g.reshape(P, n**3) for g in (g0, g1, g2)], axis=-1)
    return v.reshape(P, n**3), grad


def face_local_nodes(rule, face):
    """Local tensor indices lying on local face ``face``, ordered (a, b) row-major
    over the two remaining axes in increasing axis order."""
    n = rule.n
    axis = FACE_AXIS[face]
    fixed = 0 if FACE_SIDE[face] < 0 else n - 1
    idx = np.arange(n**3).reshape(n, n, n)  # [k, j, i]
    sl = [slice(None)] * 3
    sl[2 - axis] = fixed
    sub = idx[tuple(sl)]  # remaining axes in order (high, low)
    return np.ascontiguousarray(sub.T).ravel()  # low axis fastest outer -> (a, b) with a the lower axis


@dataclass
class ElementGroup:
    """Elements sharing one polynomial degree and one continuity class."""

    elements: np.ndarray  # mesh element ids
    rule: GllRule
    dofs: np.ndarray  # (E_g, n^3) global DOF ids

    @property
    def degree(self):
        return self.rule.degree


@dataclass
class DofMap:
    groups: list
    n_dofs: int
    coords: np.ndarray  # (n_dofs, 3)
    group_of_element: np.ndarray
    local_of_element: np.ndarray  # row inside its group

    def element_dofs(self, e):
        g = self.groups[self.group_of_element[e]]
        return g.dofs[self.local_of_element[e]]

    def group_of(self, e):
        return self.groups[self.group_of_element[e]]


def build_dofmap(mesh, r_in, r_out=None):
    """Continuous numbering inside the inner region and inside the rest.

    Nodes coinciding geometrically inside one group share a DOF; the two
    groups never share DOFs, which makes the inner/outer interface
    discontinuous. Inner DOFs are numbered first, each by first occurrence.
    """
    r_out = r_in if r_out is None else r_out
    inner = mesh.region == Region.INNER
    wanted = [(np.nonzero(inner)[0], r_in), (np.nonzero(~inner)[0], r_out)]
    wanted = [(els, r) for els, r in wanted if len(els)]
    if not wanted:
        raise MeshError("empty mesh")
    scale = np.min(mesh.min_edge_lengths())
    groups, coords = [], []
    group_of = np.empty(mesh.n_elements, dtype=np.int64)
    local_of = np.empty(mesh.n_elements, dtype=np.int64)
    offset = 0
    for gi, (els, r) in enumerate(wanted):
        rule = gll_rule(r)
        ref = tensor_points(rule)
        pts = map_forward(mesh.corners(els), ref).reshape(-1, 3)
        spacing = scale * np.min(np.diff(rule.nodes)) / 2.0
        tree = cKDTree(pts)
        pairs = tree.query_pairs(1e-3 * spacing, output_type="ndarray")
        n_pts = len(pts)
        graph = coo_matrix(
            (np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n_pts, n_pts)
        )
        _, lab = connected_components(graph, directed=False)
        _, first = np.unique(lab, return_index=True)
        order = np.argsort(first)
        rank = np.empty_like(order)
        rank[order] = np.arange(len(order))
        ids = rank[lab] + offset
        dofs = ids.reshape(len(els), -1)
        groups.append(ElementGroup(els, rule, dofs))
        c = np.empty((len(order), 3))
        c[rank[lab]] = pts
        coords.append(c)
        group_of[els] = gi
        local_of[els] = np.arange(len(els))
        offset += len(order)
    return DofMap(groups, offset, np.concatenate(coords), group_of, local_of)


def gather_plan(dofs_list, n_dofs):
    """CSR map from DOF to the flat positions of its element-local copies.

    ``dofs_list`` is a sequence of (E_g, n_loc) arrays whose flattened
    concatenation defines the local buffer layout. Entries per DOF are in
    increasing buffer order, which fixes the summation order.
    """
    flat = np.concatenate([np.asarray(d).ravel() for d in dofs_list])
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=n_dofs)
    indptr = np.zeros(n_dofs + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, order.astype(np.int64)


@njit(nogil=True, cache=True)
def gather_chunk(indptr, indices, buf, out, d0, d1):
    for d in range(d0, d1):
        s = 0.0
        for k in range(indptr[d], indptr[d + 1]):
            s += buf[indices[k]]
        out[d] = s


@njit(nogil=True, cache=True)
def gather_add_chunk(indptr, indices, buf, out, d0, d1):
    for d in range(d0, d1):
        s = 0.0
        for k in range(indptr[d], indptr[d + 1]):
            s += buf[indices[k]]
        out[d] += s


@njit(nogil=True, cache=True)
def _ref_grad(u, D, n, g):
    # g[:, l] = reference gradient of the local nodal field u at node l
    for k in range(n):
        for j in range(n):
            for i in range(n):
                l = i + n * (j + n * k)
                a0 = 0.0
                a1 = 0.0
                a2 = 0.0
                for m in range(n):
                    a0 += D[i, m] * u[m + n * (j + n * k)]
                    a1 += D[j, m] * u[i + n * (m + n * k)]
                    a2 += D[k, m] * u[i + n * (j + n * m)]
                g[0, l] = a0
                g[1, l] = a1
                g[2, l] = a2


@njit(nogil=True, cache=True)
def _ref_div_t(f, D, n, y):
    # y[l'] = sum_l sum_a f[a, l] * d_a phi_l'(x_l)
    for l in range(n * n * n):
        y[l] = 0.0
    for k in range(n):
        for j in range(n):
            for i in range(n):
                l = i + n * (j + n * k)
                f0 = f[0, l]
                f1 = f[1, l]
                f2 = f[2, l]
                for m in range(n):
                    y[m + n * (j + n * k)] += D[i, m] * f0
                    y[i + n * (m + n * k)] += D[j, m] * f1
                    y[i + n * (j + n * m)] += D[k, m] * f2


@njit(nogil=True, cache=True)
def stiffness_chunk(u, dofs, G, D, e0, e1, buf):
    """Element-local stiffness action for elements e0..e1 into ``buf`` (flat)."""
    n = D.shape[0]
    nl = n * n * n
    ul = np.empty(nl)
    g = np.empty((3, nl))
    f = np.empty((3, nl))
    y = np.empty(nl)
    for e in range(e0, e1):
        for l in range(nl):
            ul[l] = u[dofs[e, l]]
        _ref_grad(ul, D, n, g)
        for l in range(nl):
            G0 = G[e, l, 0]
            G1 = G[e, l, 1]
            G2 = G[e, l, 2]
            G3 = G[e, l, 3]
            G4 = G[e, l, 4]
            G5 = G[e, l, 5]
            f[0, l] = G0 * g[0, l] + G3 * g[1, l] + G4 * g[2, l]
            f[1, l] = G3 * g[0, l] + G1 * g[1, l] + G5 * g[2, l]
            f[2, l] = G4 * g[0, l] + G5 * g[1, l] + G2 * g[2, l]
        _ref_div_t(f, D, n, y)
        base = e * nl
        for l in range(nl):
            buf[base + l] = y[l]


@njit(nogil=True, cache=True)
def gradient_chunk(u, dofs, JinvT_w, D, e0, e1, buf):
    """Mass-weighted physical gradient w|J| J^{-T} grad_ref u at each local node."""
    n = D.shape[0]
    nl = n * n * n
    ul = np.empty(nl)
    g = np.empty((3, nl))
    for e in range(e0, e1):
        for l in range(nl):
            ul[l] = u[dofs[e, l]]
        _ref_grad(ul, D, n, g)
        for l in range(nl):
            base = 3 * (e * nl + l)
            for a in range(3):
                s = 0.0
                for b in range(3):
                    s += JinvT_w[e, l, a, b] * g[b, l]
                buf[base + a] = s


@njit(nogil=True, cache=True)
def weak_div_chunk(F, dofs, Jinv_w, D, e0, e1, buf):
    """Local vector of int F . grad phi_l for a nodal vector field F (N, 3)."""
    n = D.shape[0]
    nl = n * n * n
    f = np.empty((3, nl))
    y = np.empty(nl)
    for e in range(e0, e1):
        for l in range(nl):
            d = dofs[e, l]
            for a in range(3):
                s = 0.0
                for b in range(3):
                    s += Jinv_w[e, l, a, b] * F[d, b]
                f[a, l] = s
        _ref_div_t(f, D, n, y)
        base = e * nl
        for l in range(nl):
            buf[base + l] = y[l]


def element_geometry(mesh, elements, rule):
    """Jacobians at GLL points: returns (J (E, n^3, 3, 3), w|J| (E, n^3))."""
    ref = tensor_points(rule)
    J = jacobian(mesh.corners(elements), ref)
    det = np.linalg.det(J)
    if np.any(det <= 0):
        bad = elements[np.nonzero(np.any(det <= 0, axis=1))[0][0]]
        raise MeshError(f"element {bad}: non-positive Jacobian at a GLL point")
    return J, det * tensor_weights(rule)[None, :]


def assemble_mass(mesh, dofmap):
    """Diagonal GLL mass matrix, M_ii = sum over owning elements of w_i |J(x_i)|."""
    bufs = []
    for g in dofmap.groups:
        _, wdet = element_geometry(mesh, g.elements, g.rule)
        bufs.append(wdet.ravel())
    indptr, idx = gather_plan([g.dofs for g in dofmap.groups], dofmap.n_dofs)
    M = np.empty(dofmap.n_dofs)
    gather_chunk(indptr, idx, np.concatenate(bufs), M, 0, dofmap.n_dofs)
    return M


class _GroupStiffness:
    def __init__(self, mesh, group, c2):
        J, wdet = element_geometry(mesh, group.elements, group.rule)
        Jinv = np.linalg.inv(J)
        # G = w |J| c^2 J^{-1} J^{-T}
        A = np.einsum("elai,elbi->elab", Jinv, Jinv) * (wdet * c2[:, None])[..., None, None]
        self.G = np.ascontiguousarray(
            np.stack(
                [A[..., 0, 0], A[..., 1, 1], A[..., 2, 2], A[..., 0, 1], A[..., 0, 2], A[..., 1, 2]],
                axis=-1,
            )
        )
        self.dofs = np.ascontiguousarray(group.dofs)
        self.D = np.ascontiguousarray(group.rule.D)
        self.n_elem = len(group.elements)
        self.n_loc = group.rule.n**3


class StiffnessOperator:
    """Matrix-free volume stiffness  (K p)_i = sum_K int_K c^2 grad p . grad phi_i."""

    def __init__(self, mesh, dofmap, c_elem, executor=None):
        c_elem = np.asarray(c_elem, dtype=float)
        self.n_dofs = dofmap.n_dofs
        self.parts = [_GroupStiffness(mesh, g, c_elem[g.elements] ** 2) for g in dofmap.groups]
        self.indptr, self.indices = gather_plan([p.dofs for p in self.parts], self.n_dofs)
        self.buf = np.empty(sum(p.n_elem * p.n_loc for p in self.parts))
        self.executor = executor or Executor(1)

    def apply(self, u, out=None):
        u = np.ascontiguousarray(u, dtype=float)
        out = np.empty(self.n_dofs) if out is None else out
        off = 0
        for p in self.parts:
            view = self.buf[off : off + p.n_elem * p.n_loc]
            self.executor.map_range(
                p.n_elem, lambda a, b, p=p, view=view: stiffness_chunk(u, p.dofs, p.G, p.D, a, b, view)
            )
            off += p.n_elem * p.n_loc
        self.executor.map_range(
            self.n_dofs, lambda a, b: gather_chunk(self.indptr, self.indices, self.buf, out, a, b)
        )
        return out

    __call__ = apply


def face_gll_points(rule, face):
    """Reference coordinates and tensor weights of the GLL nodes on a local face."""
    ref = tensor_points(rule)[face_local_nodes(rule, face)]
    w = rule.weights
    return ref, (w[:, None] * w[None, :]).ravel()


def assemble_abc(mesh, dofmap, c_elem, tags=(FaceTag.ABC, FaceTag.PML_OUTER)):
    """Diagonal of the first-order absorbing boundary form  int_F c p_t v dsigma."""
    C = np.zeros(dofmap.n_dofs)
    sel = mesh.faces_with_tag(*tags)
    if len(sel) == 0:
        return C
    vals, ids = [], []
    for fi in sel:
        e, f = mesh.faces[fi]
        g = dofmap.group_of(e)
        ref, w = face_gll_points(g.rule, f)
        _, sj = face_frame(mesh.corners([e])[0], f, ref)
        vals.append(c_elem[e] * w * sj)
        ids.append(dofmap.element_dofs(e)[face_local_nodes(g.rule, f)])
    ids = np.concatenate(ids)
    order = np.argsort(ids, kind="stable")
    np.add.at(C, ids[order], np.concatenate(vals)[order])
    return C


def apply_abc(C, pdot):
    return C * pdot


def element_speeds(mesh, materials):
    """Per-element sound speed from a material table of (c, rho) rows."""
    table = np.asarray(materials, dtype=float).reshape(-1, 2)
    if np.any(mesh.material >= len(table)) or np.any(mesh.material < 0):
        raise MeshError("element references an undefined material")
    return table[mesh.material, 0], table[mesh.material, 1]


class PointEvaluator:
    """Interpolates nodal fields at fixed physical points."""

    def __init__(self, mesh, dofmap, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        cen = mesh.element_centroids()
        tree = cKDTree(cen)
        c = mesh.corners(np.arange(mesh.n_elements))
        reach = float(np.max(np.linalg.norm(c - cen[:, None, :], axis=-1))) * (1 + 1e-9)
        self.dofs, self.weights, self.elements = [], [], []
        for x in points:
            for e in sorted(tree.query_ball_point(x, reach)):
                res = map_inverse(c[e], x)
                if res.inside:
                    g = dofmap.group_of(e)
                    phi, _ = tensor_basis(g.rule, np.clip(res.xhat, -1, 1)[None])
                    self.dofs.append(dofmap.element_dofs(e))
                    self.weights.append(phi[0])
                    self.elements.append(e)
                    break
            else:
                raise MeshError(f"point {tuple(x)} lies outside the mesh")

    def __call__(self, u):
        return np.array([w @ u[d] for d, w in zip(self.dofs, self.weights)])
