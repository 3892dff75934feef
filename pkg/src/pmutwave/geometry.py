"""Trilinear hexahedron maps, their Jacobians and Newton inverses.

Corner order follows the VTK hexahedron convention: the bottom quad
(zeta = -1) counter-clockwise seen from +z, then the top quad::

    0 (-,-,-)  1 (+,-,-)  2 (+,+,-)  3 (-,+,-)
    4 (-,-,+)  5 (+,-,+)  6 (+,+,+)  7 (-,+,+)

Local face ``f`` is ``xhat[f // 2] = -1`` for even ``f`` and ``+1`` for odd.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit

CORNER_SIGNS = np.array(
    [
        [-1, -1, -1],
        [1, -1, -1],
        [1, 1, -1],
        [-1, 1, -1],
        [-1, -1, 1],
        [1, -1, 1],
        [1, 1, 1],
        [-1, 1, 1],
    ],
    dtype=float,
)

# corners of each local face, counter-clockwise seen from outside
FACE_CORNERS = np.array(
    [
        [0, 4, 7, 3],
        [1, 2, 6, 5],
        [0, 1, 5, 4],
        [3, 7, 6, 2],
        [0, 3, 2, 1],
        [4, 5, 6, 7],
    ],
    dtype=np.int64,
)

FACE_AXIS = np.array([0, 0, 1, 1, 2, 2])
FACE_SIDE = np.array([-1.0, 1.0, -1.0, 1.0, -1.0, 1.0])

# default Newton settings for point location
NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50
INSIDE_SLACK = 1e-8


def shape_functions(xhat):
    """Trilinear shape functions and reference gradients.

    Parameters
    ----------
    xhat : array_like, shape (..., 3)

    Returns
    -------
    N : ndarray, shape (..., 8)
    dN : ndarray, shape (..., 8, 3)
    """
    xhat = np.asarray(xhat, dtype=float)
    f = 1.0 + xhat[..., None, :] * CORNER_SIGNS  # (..., 8, 3)
    N = f.prod(axis=-1) / 8.0
    dN = np.empty(f.shape)
    dN[..., 0] = CORNER_SIGNS[:, 0] * f[..., 1] * f[..., 2] / 8.0
    dN[..., 1] = CORNER_SIGNS[:, 1] * f[..., 0] * f[..., 2] / 8.0
    dN[..., 2] = CORNER_SIGNS[:, 2] * f[..., 0] * f[..., 1] / 8.0
    return N, dN


def map_forward(corners, xhat):
    """Evaluate X_K(xhat) for corners of shape (..., 8, 3).

    ``xhat`` broadcasts against the leading axes of ``corners``:
    ``corners`` (8, 3) with ``xhat`` (P, 3) gives (P, 3);
    ``corners`` (E, 8, 3) with ``xhat`` (P, 3) gives (E, P, 3).
    """
    corners = np.asarray(corners, dtype=float)
    N, _ = shape_functions(xhat)
    if corners.ndim == 2:
        return N @ corners
    return np.einsum("pc,eci->epi", np.atleast_2d(N), corners)


def jacobian(corners, xhat):
    """Jacobian J[i, j] = d x_i / d xhat_j, same broadcasting as map_forward."""
    corners = np.asarray(corners, dtype=float)
    _, dN = shape_functions(xhat)
    if corners.ndim == 2:
        return np.einsum("...cj,ci->...ij", dN, corners)
    dN = dN.reshape(-1, 8, 3)
    return np.einsum("pcj,eci->epij", dN, corners)


def jacobian_det(corners, xhat):
    return np.linalg.det(jacobian(corners, xhat))


@njit(cache=True)
def _eval_map(c, xh, X, J):
    for i in range(3):
        X[i] = 0.0
        for j in range(3):
            J[i, j] = 0.0
    for k in range(8):
        s0 = -1.0 if (k == 0 or k == 3 or k == 4 or k == 7) else 1.0
        s1 = -1.0 if (k == 0 or k == 1 or k == 4 or k == 5) else 1.0
        s2 = -1.0 if k < 4 else 1.0
        f0 = 1.0 + s0 * xh[0]
        f1 = 1.0 + s1 * xh[1]
        f2 = 1.0 + s2 * xh[2]
        n = f0 * f1 * f2 * 0.125
        d0 = s0 * f1 * f2 * 0.125
        d1 = s1 * f0 * f2 * 0.125
        d2 = s2 * f0 * f1 * 0.125
        for i in range(3):
            X[i] += n * c[k, i]
            J[i, 0] += d0 * c[k, i]
            J[i, 1] += d1 * c[k, i]
            J[i, 2] += d2 * c[k, i]


@njit(cache=True)
def _solve3(J, r, out):
    a, b, cc = J[0, 0], J[0, 1], J[0, 2]
    d, e, f = J[1, 0], J[1, 1], J[1, 2]
    g, h, k = J[2, 0], J[2, 1], J[2, 2]
    A = e * k - f * h
    B = -(d * k - f * g)
    C = d * h - e * g
    det = a * A + b * B + cc * C
    if det == 0.0:
        return False
    inv = 1.0 / det
    out[0] = (A * r[0] + (cc * h - b * k) * r[1] + (b * f - cc * e) * r[2]) * inv
    out[1] = (B * r[0] + (a * k - cc * g) * r[1] + (cc * d - a * f) * r[2]) * inv
    out[2] = (C * r[0] + (b * g - a * h) * r[1] + (a * e - b * d) * r[2]) * inv
    return True


@njit(cache=True)
def _newton_inverse(c, x, tol, max_iter, xh):
    """Damped Newton for X_K(xh) = x. Returns True on convergence."""
    X = np.empty(3)
    J = np.empty((3, 3))
    r = np.empty(3)
    dx = np.empty(3)
    trial = np.empty(3)
    for i in range(3):
        xh[i] = 0.0
    _eval_map(c, xh, X, J)
    for i in range(3):
        r[i] = X[i] - x[i]
    rn = np.sqrt(r[0] ** 2 + r[1] ** 2 + r[2] ** 2)
    for _ in range(max_iter):
        if not _solve3(J, r, dx):
            return False
        lam = 1.0
        while True:
            for i in range(3):
                trial[i] = xh[i] - lam * dx[i]
            _eval_map(c, trial, X, J)
            rt = np.sqrt(
                (X[0] - x[0]) ** 2 + (X[1] - x[1]) ** 2 + (X[2] - x[2]) ** 2
            )
            if rt <= rn or lam < 1.0 / 64.0:
                break
            lam *= 0.5
        step = 0.0
        for i in range(3):
            step = max(step, abs(lam * dx[i]))
            xh[i] = trial[i]
            r[i] = X[i] - x[i]
        rn = rt
        if max(abs(xh[0]), abs(xh[1]), abs(xh[2])) > 1e3:
            return False
        if step < tol:
            return True
    return False


@njit(cache=True)
def _inverse_many(corners, points, tol, max_iter, xhat, ok):
    xh = np.empty(3)
    for p in range(points.shape[0]):
        ok[p] = _newton_inverse(corners[p], points[p], tol, max_iter, xh)
        for i in range(3):
            xhat[p, i] = xh[i]


class InverseResult(NamedTuple):
    xhat: np.ndarray
    converged: bool | np.ndarray
    inside: bool | np.ndarray


def map_inverse(corners, x, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER, slack=INSIDE_SLACK):
    """Reference coordinates of physical point(s) ``x`` in element(s) ``corners``.

    ``corners`` (8, 3) with ``x`` (3,) returns scalars flags; ``corners``
    (P, 8, 3) with ``x`` (P, 3) is evaluated pairwise. A point whose Newton
    iteration fails is reported as not converged and not inside.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    corners = np.asarray(corners, dtype=float)
    x = np.asarray(x, dtype=float)
    single = corners.ndim == 2
    C = np.ascontiguousarray(corners.reshape(-1, 8, 3))
    P = np.ascontiguousarray(np.broadcast_to(x.reshape(-1, 3), (C.shape[0], 3)))
    xhat = np.empty((C.shape[0], 3))
    ok = np.empty(C.shape[0], dtype=np.bool_)
    _inverse_many(C, P, float(tol), int(max_iter), xhat, ok)
    inside = ok & np.all(np.abs(xhat) <= 1.0 + slack, axis=1)
    if single:
        return InverseResult(xhat[0], bool(ok[0]), bool(inside[0]))
    return InverseResult(xhat, ok, inside)


def face_frame(corners, face, xhat):
    """Outward unit normal and surface Jacobian on a local face.

    Returns ``normal`` (..., 3) and ``surf_jac`` (...) for points ``xhat``
    lying on ``face``; ``surf_jac`` is the area element relative to the
    reference face measure.
    """
    J = jacobian(corners, xhat)
    axis = FACE_AXIS[face]
    det = np.linalg.det(J)
    # cofactor column = det * J^{-T} e_axis
    cof = det[..., None] * np.swapaxes(np.linalg.inv(J), -1, -2)[..., :, axis]
    area = np.linalg.norm(cof, axis=-1)
    normal = FACE_SIDE[face] * np.sign(det)[..., None] * cof / area[..., None]
    return normal, area


def face_points(face, ref2d):
    """Lift 2D reference points (P, 2) onto local face ``face`` of [-1,1]^3."""
    ref2d = np.asarray(ref2d, dtype=float)
    axis = FACE_AXIS[face]
    out = np.empty((ref2d.shape[0], 3))
    others = [a for a in range(3) if a != axis]
    out[:, axis] = FACE_SIDE[face]
    out[:, others[0]] = ref2d[:, 0]
    out[:, others[1]] = ref2d[:, 1]
    return out


@dataclass(frozen=True)
class TrilinearMap:
    """The map from [-1,1]^3 onto one hexahedron."""

    corners: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.corners, dtype=float)
        if c.shape != (8, 3):
            raise ValueError(f"expected 8x3 corners, got {c.shape}")
        object.__setattr__(self, "corners", c)

    def forward(self, xhat):
        return map_forward(self.corners, xhat)

    def jacobian(self, xhat):
        return jacobian(self.corners, xhat)

    def det(self, xhat):
        return jacobian_det(self.corners, xhat)

    def inverse(self, x, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER, slack=INSIDE_SLACK):
        return map_inverse(self.corners, x, tol, max_iter, slack)

    @property
    def diameter(self):
        d = self.corners[:, None, :] - self.corners[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())

    def is_valid(self, samples=3):
        g = np.linspace(-1.0, 1.0, samples)
        pts = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
        return bool(np.all(self.det(pts) > 0.0))
