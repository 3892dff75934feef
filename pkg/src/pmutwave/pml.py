"""Perfectly matched layer: damping profiles, coefficients, auxiliary fields.

The layer equations are

    p_tt + alpha p_t + beta p = div(c^2 grad p) + div(Phi) - gamma psi
    Phi_t = Z1 Phi + c^2 Z2 grad p + c^2 Z3 grad psi
    psi_t = p

with all coefficients diagonal and collocated at GLL nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .mesh import Region
from .parallel import Executor
from .sem import (
    _ref_div_t,
    _ref_grad,
    element_geometry,
    gather_chunk,
    gather_plan,
    gradient_chunk,
    weak_div_chunk,
)


def zeta_tilde(c, ell, R):
    """Peak damping (c / ell) log(1 / R)."""
    if not (0.0 < R < 1.0):
        raise ValueError(f"reflection coefficient must lie in (0, 1), got {R}")
    if c <= 0 or np.any(np.asarray(ell) <= 0):
        raise ValueError("c and layer thickness must be positive")
    return c / np.asarray(ell, dtype=float) * np.log(1.0 / R)


@dataclass(frozen=True)
class PmlProfile:
    """Per-axis layer geometry: the damping starts at ``|x_i - center_i| = half[i]``."""

    center: np.ndarray
    half: np.ndarray
    thickness: np.ndarray
    strength: np.ndarray  # zeta tilde per axis [1/s]

    @classmethod
    def from_box(cls, lo, hi, thickness, c, R=1e-4):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        ell = np.broadcast_to(np.asarray(thickness, float), (3,)).copy()
        return cls((lo + hi) / 2, (hi - lo) / 2, ell, zeta_tilde(c, ell, R))


def damping_value(profile, axis, x):
    """zeta_i(x_i): zero inside, smooth C1 ramp to zeta tilde across the layer."""
    d = np.abs(np.asarray(x, dtype=float) - profile.center[axis]) - profile.half[axis]
    s = np.clip(d / profile.thickness[axis], 0.0, 1.0)
    return profile.strength[axis] * (s - np.sin(2 * np.pi * s) / (2 * np.pi))


@dataclass
class PmlCoefficients:
    zeta: np.ndarray  # (N, 3)
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    Z1: np.ndarray  # diagonals, (N, 3)
    Z2: np.ndarray
    Z3: np.ndarray

    @classmethod
    def from_zeta(cls, zeta):
        z = np.asarray(zeta, dtype=float).reshape(-1, 3)
        z1, z2, z3 = z[:, 0], z[:, 1], z[:, 2]
        alpha = z1 + z2 + z3
        beta = z1 * z2 + z2 * z3 + z3 * z1
        gamma = z1 * z2 * z3
        Z1 = -z
        Z2 = alpha[:, None] - 2.0 * z
        Z3 = np.stack([z2 * z3, z3 * z1, z1 * z2], axis=1)
        return cls(z, alpha, beta, gamma, Z1, Z2, Z3)


def build_coefficients(profile, points):
    """Coefficients at the given node coordinates (N, 3)."""
    points = np.atleast_2d(points)
    zeta = np.stack([damping_value(profile, a, points[:, a]) for a in range(3)], axis=1)
    return PmlCoefficients.from_zeta(zeta)


def update_aux(Phi, psi, p, grad_p, grad_psi, coeffs, dt, c2=1.0,
               p_new=None, grad_p_new=None, grad_psi_new=None):
    """One step of the auxiliary equations.

    psi uses the trapezoidal rule with ``p_new`` (defaults to ``p``).
    Phi uses the diagonal trapezoidal rule; when the new-time gradients are
    not supplied the source is frozen at the old time level.
    """
    p_new = p if p_new is None else p_new
    psi_new = psi + 0.5 * dt * (p + p_new)
    c2 = np.asarray(c2, dtype=float)
    c2 = c2[:, None] if c2.ndim else c2
    F_old = c2 * (coeffs.Z2 * grad_p + coeffs.Z3 * grad_psi)
    if grad_p_new is None:
        F_new = F_old
    else:
        F_new = c2 * (coeffs.Z2 * grad_p_new + coeffs.Z3 * grad_psi_new)
    h = 0.5 * dt * coeffs.Z1
    Phi_new = ((1.0 + h) * Phi + 0.5 * dt * (F_old + F_new)) / (1.0 - h)
    return Phi_new, psi_new


@njit(nogil=True, cache=True)
def _advance_chunk(p, psi, gdofs, ldofs, JinvT_w, Jinv_w, wdet, D, c2, Z1, Z2, Z3,
                   Phi, F, dt, e0, e1, Phi_new, F_new, buf):
    # fused: source at the new level, trapezoidal Phi update, weak divergence
    n = D.shape[0]
    nl = n * n * n
    up = np.empty(nl)
    us = np.empty(nl)
    gp = np.empty((3, nl))
    gs = np.empty((3, nl))
    f = np.empty((3, nl))
    y = np.empty(nl)
    for e in range(e0, e1):
        for l in range(nl):
            up[l] = p[gdofs[e, l]]
            us[l] = psi[ldofs[e, l]]
        _ref_grad(up, D, n, gp)
        _ref_grad(us, D, n, gs)
        for l in range(nl):
            i = e * nl + l
            inv = 1.0 / wdet[e, l]
            for a in range(3):
                sp = 0.0
                ss = 0.0
                for b in range(3):
                    sp += JinvT_w[e, l, a, b] * gp[b, l]
                    ss += JinvT_w[e, l, a, b] * gs[b, l]
                fa = c2[i] * (Z2[i, a] * sp + Z3[i, a] * ss) * inv
                F_new[i, a] = fa
                h = 0.5 * dt * Z1[i, a]
                Phi_new[i, a] = ((1.0 + h) * Phi[i, a] + 0.5 * dt * (F[i, a] + fa)) / (1.0 - h)
            for a in range(3):
                s = 0.0
                for b in range(3):
                    s += Jinv_w[e, l, a, b] * Phi_new[i, b]
                f[a, l] = s
        _ref_div_t(f, D, n, y)
        for l in range(nl):
            buf[e * nl + l] = y[l]


class PmlLayer:
    """PML operators on the elements of the PML region.

    ``psi`` and the scalar coefficients live on the (continuous) DOFs touched
    by PML elements. ``Phi`` and its source are stored per element at the GLL
    nodes, so gradients are exact element-wise derivatives and no nodal
    averaging enters the weak divergence.
    """

    def __init__(self, mesh, dofmap, profile, c_elem, executor=None):
        self.executor = executor or Executor(1)
        pml = np.nonzero(mesh.region == Region.PML)[0]
        self.n_elem = len(pml)
        if self.n_elem == 0:
            self.dofs = np.zeros(0, dtype=np.int64)
            self.n_local = 0
            return
        groups = {dofmap.group_of_element[e] for e in pml}
        if len(groups) != 1:
            raise ValueError("PML elements must share one DOF group")
        g = dofmap.groups[groups.pop()]
        rule = g.rule
        gdofs = np.ascontiguousarray(g.dofs[dofmap.local_of_element[pml]])
        self.dofs, local = np.unique(gdofs, return_inverse=True)
        self.gdofs = gdofs
        self.ldofs = np.ascontiguousarray(local.reshape(gdofs.shape).astype(np.int64))
        self.nl = rule.n**3
        self.n_local = self.n_elem * self.nl
        self.eidx = np.arange(self.n_local, dtype=np.int64).reshape(self.n_elem, self.nl)
        J, wdet = element_geometry(mesh, pml, rule)
        Jinv = np.linalg.inv(J)
        self.JinvT_w = np.ascontiguousarray(np.swapaxes(Jinv, -1, -2) * wdet[..., None, None])
        self.Jinv_w = np.ascontiguousarray(Jinv * wdet[..., None, None])
        self.wdet = wdet.ravel()
        self._wdet2 = np.ascontiguousarray(wdet)
        self.D = np.ascontiguousarray(rule.D)
        n = len(self.dofs)
        self.indptr, self.indices = gather_plan([self.ldofs], n)
        self.mass = np.empty(n)
        gather_chunk(self.indptr, self.indices, self.wdet, self.mass, 0, n)
        self.c2 = np.repeat(np.asarray(c_elem, float)[pml] ** 2, self.nl)
        self.coeffs = build_coefficients(profile, dofmap.coords[self.dofs])
        self.ecoeffs = build_coefficients(profile, dofmap.coords[gdofs.ravel()])
        self._gbuf = np.empty(3 * self.n_local)
        self._dbuf = np.empty(self.n_local)

    @property
    def active(self):
        return self.n_elem > 0

    def gradient(self, u, local=False):
        """Element-wise gradient at the GLL nodes of each PML element, (n_local, 3).

        ``u`` is a global DOF vector, or a vector on the PML DOFs if ``local``.
        """
        u = np.ascontiguousarray(u, dtype=float)
        dofs = self.ldofs if local else self.gdofs
        self.executor.map_range(
            self.n_elem,
            lambda a, b: gradient_chunk(u, dofs, self.JinvT_w, self.D, a, b, self._gbuf),
        )
        return self._gbuf.reshape(-1, 3) / self.wdet[:, None]

    def source(self, p, psi):
        """c^2 (Z2 grad p + Z3 grad psi) at element nodes; ``psi`` on PML DOFs."""
        co = self.ecoeffs
        return self.c2[:, None] * (co.Z2 * self.gradient(p) + co.Z3 * self.gradient(psi, True))

    def advance(self, p, psi_new, Phi, F, dt):
        """Source at the new level, updated ``Phi`` and its weak divergence.

        Returns ``(Phi_new, F_new, div)`` with ``div`` on the PML DOFs.
        """
        co = self.ecoeffs
        p = np.ascontiguousarray(p, dtype=float)
        psi_new = np.ascontiguousarray(psi_new, dtype=float)
        Phi_new = np.empty_like(Phi)
        F_new = np.empty_like(F)
        self.executor.map_range(
            self.n_elem,
            lambda a, b: _advance_chunk(
                p, psi_new, self.gdofs, self.ldofs, self.JinvT_w, self.Jinv_w, self._wdet2,
                self.D, self.c2, co.Z1, co.Z2, co.Z3, Phi, F, dt, a, b, Phi_new, F_new,
                self._dbuf,
            ),
        )
        out = np.empty(len(self.dofs))
        self.executor.map_range(
            len(self.dofs),
            lambda a, b: gather_chunk(self.indptr, self.indices, self._dbuf, out, a, b),
        )
        return Phi_new, F_new, out

    def weak_div(self, Phi):
        """Vector of int Phi . grad phi_i over PML elements, on PML DOFs."""
        Phi = np.ascontiguousarray(Phi, dtype=float)
        self.executor.map_range(
            self.n_elem,
            lambda a, b: weak_div_chunk(Phi, self.eidx, self.Jinv_w, self.D, a, b, self._dbuf),
        )
        out = np.empty(len(self.dofs))
        self.executor.map_range(
            len(self.dofs),
            lambda a, b: gather_chunk(self.indptr, self.indices, self._dbuf, out, a, b),
        )
        return out
