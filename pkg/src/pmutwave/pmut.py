"""Reduced-order PMUT membranes and their coupling to the acoustic field.

Each membrane k carries modal coordinates q_m obeying

    q_m'' = -omega_m^2 q_m + int_{gamma_k} p (U_m . n) dsigma + eta_m phi

and pushes on the fluid with f_i = -kappa sum_m q_m'' int U_m . n phi_i.
Both integrals use one table c_{m, j} = int phi_j (U_m . n) dsigma.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import i0, i1, j0, j1

from .geometry import face_frame, map_forward
from .mesh import MeshError
from .sem import face_gll_points, face_local_nodes

ENVELOPE_ORDER = 10
_TINY = 1e-300


# --- drive signals ----------------------------------------------------------


def _alpha(tau, Td, n=ENVELOPE_ORDER):
    """(1 - 2 b^(2n+1) / (1 + b^(2n)))^-2 with b = 2 tau / Td - 1; inf where singular."""
    b = 2.0 * np.asarray(tau, dtype=float) / Td - 1.0
    den = 1.0 - 2.0 * b ** (2 * n + 1) / (1.0 + b ** (2 * n))
    with np.errstate(divide="ignore"):
        return np.where(np.abs(den) < _TINY, np.inf, 1.0 / np.where(den == 0, 1.0, den) ** 2)


def envelope_g(t, Td, n=ENVELOPE_ORDER):
    """Smooth on/off burst envelope on [0, Td]; zero outside."""
    t = np.asarray(t, dtype=float)
    a = np.where(t < Td / 2, _alpha(Td - t, Td, n), _alpha(t, Td, n))
    with np.errstate(over="ignore"):
        g = np.exp(1.0 - a)
    return np.where((t >= 0) & (t <= Td), g, 0.0)


def envelope_h(t, Td, n=ENVELOPE_ORDER, clamp=False):
    """Ramp envelope exp(1 - alpha(Td - t)) on [0, Td]; reaches e^0.75 at Td.

    ``clamp`` caps the value at 1.
    """
    t = np.asarray(t, dtype=float)
    with np.errstate(over="ignore"):
        h = np.exp(1.0 - _alpha(Td - t, Td, n))
    if clamp:
        h = np.minimum(h, 1.0)
    return np.where((t >= 0) & (t <= Td), h, 0.0)


@dataclass(frozen=True)
class VoltageSignal:
    amplitude: float
    frequency: float
    duration: float
    envelope: str = "g"
    switch_time: float = np.inf  # TX up to here, open-circuit RX afterwards
    clamp: bool = False

    def __post_init__(self):
        if self.envelope not in ("g", "h"):
            raise ValueError(f"unknown envelope {self.envelope!r}")
        if self.duration <= 0 or self.frequency <= 0:
            raise ValueError("duration and frequency must be positive")
        if self.switch_time < self.duration:
            raise ValueError("switch time must not precede the end of the burst")

    def tx(self, t):
        if self.envelope == "g":
            env = envelope_g(t, self.duration)
        else:
            env = envelope_h(t, self.duration, clamp=self.clamp)
        return self.amplitude * np.sin(2 * np.pi * self.frequency * np.asarray(t)) * env


# --- mode shapes --------------------------------------------------------------


def clamped_plate_roots(count):
    """First ``count`` positive roots of J0 I1 + I0 J1 = 0."""
    f = lambda x: j0(x) * i1(x) + i0(x) * j1(x)
    roots, x, step = [], 0.5, 0.05
    while len(roots) < count:
        if f(x) * f(x + step) < 0:
            roots.append(brentq(f, x, x + step, xtol=1e-14))
        x += step
    return np.array(roots)


@dataclass(frozen=True)
class RadialProfile:
    """Normal displacement U . n as a function of rho = r / r_p; zero for rho > 1."""

    lam: float = np.nan
    scale: float = 1.0
    rho: np.ndarray | None = None
    values: np.ndarray | None = None

    def __call__(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self.rho is not None:
            v = np.interp(rho, self.rho, self.values)
        else:
            x = self.lam * np.clip(rho, 0.0, 1.0)
            v = self.scale * (j0(x) - j0(self.lam) / i0(self.lam) * i0(x))
        return np.where(rho <= 1.0, v, 0.0)


def default_clamped_plate_modes(radius, count):
    """Axisymmetric clamped-plate profiles normalised to max |U . n| = 1.

    ``radius`` is accepted for symmetry with tabulated data; profiles are
    expressed in rho = r / radius.
    """
    if not 1 <= count <= 6:
        raise ValueError("mode count must be between 1 and 6")
    if radius <= 0:
        raise ValueError("radius must be positive")
    out = []
    grid = np.linspace(0.0, 1.0, 4001)
    for lam in clamped_plate_roots(count):
        raw = RadialProfile(lam, 1.0)(grid)
        k = np.argmax(np.abs(raw))
        out.append(RadialProfile(float(lam), 1.0 / raw[k]))
    return out


@dataclass
class ModeShape:
    profile: RadialProfile
    omega: float
    eta: float


@dataclass
class PmutMembrane:
    index: int
    center: np.ndarray
    radius: float
    modes: list
    capacitance: float
    kappa: float
    q: np.ndarray = field(default=None)
    qd: np.ndarray = field(default=None)
    qdd: np.ndarray = field(default=None)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        m = len(self.modes)
        for name in ("q", "qd", "qdd"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(m))

    @property
    def omega(self):
        return np.array([m.omega for m in self.modes])

    @property
    def eta(self):
        return np.array([m.eta for m in self.modes])


def voltage(membrane, signal, t, q=None):
    """TX burst up to the switch time, open-circuit (1/C) sum eta q afterwards."""
    if t <= signal.switch_time:
        return float(signal.tx(t))
    if membrane.capacitance <= 0:
        raise ValueError(f"membrane {membrane.index}: capacitance must be positive in RX mode")
    q = membrane.q if q is None else q
    return float(np.dot(membrane.eta, q) / membrane.capacitance)


# --- coupling -----------------------------------------------------------------


@dataclass
class CouplingRow:
    dofs: np.ndarray  # (n_k,) sorted DOF ids on gamma_k
    values: np.ndarray  # (N_m, n_k)

    def pressure_term(self, p):
        return self.values @ p[self.dofs]


def build_coupling_table(mesh, membranes, dofmap):
    """Rows c_{m, j} = int_{gamma_k} phi_j (U_m . n) dsigma by GLL face quadrature."""
    table = []
    for mem in membranes:
        faces = mesh.membrane_faces(mem.index)
        if len(faces) == 0:
            raise MeshError(f"membrane {mem.index} has no tagged faces")
        ids, vals = [], []
        for fi in faces:
            e, f = mesh.faces[fi]
            g = dofmap.group_of(e)
            ref, w = face_gll_points(g.rule, f)
            c = mesh.corners([e])[0]
            n, sj = face_frame(c, f, ref)
            d = map_forward(c, ref) - mem.center
            d -= np.sum(d * n, axis=1)[:, None] * n
            rho = np.linalg.norm(d, axis=1) / mem.radius
            U = np.stack([m.profile(rho) for m in mem.modes])
            ids.append(dofmap.element_dofs(e)[face_local_nodes(g.rule, f)])
            vals.append(U * (w * sj)[None, :])
        ids = np.concatenate(ids)
        vals = np.concatenate(vals, axis=1)
        dofs, inv = np.unique(ids, return_inverse=True)
        acc = np.zeros((len(mem.modes), len(dofs)))
        order = np.argsort(inv, kind="stable")
        for m in range(len(mem.modes)):
            np.add.at(acc[m], inv[order], vals[m, order])
        table.append(CouplingRow(dofs, acc))
    return table


def modal_acceleration(membrane, p, phi, row, q=None):
    """-omega^2 q + c . p + eta phi; ``q`` defaults to the membrane's own state."""
    q = membrane.q if q is None else q
    return -membrane.omega**2 * q + row.pressure_term(p) + membrane.eta * phi


def acoustic_forcing(membranes, qdd, table, n_dofs):
    """f = -kappa sum_{k, m} qdd_{k, m} c_{m, .} for per-membrane arrays ``qdd``."""
    f = np.zeros(n_dofs)
    for mem, a, row in zip(membranes, qdd, table):
        f[row.dofs] -= mem.kappa * (a @ row.values)
    return f


# --- modal data file ----------------------------------------------------------

MODES_HEADER = "PMUTMODES 1"


def read_modal_data(path):
    """Parse a modal data file.

    Format::

        PMUTMODES 1
        membrane <k> <C>
        mode <omega> <eta> analytic <m>
        mode <omega> <eta> samples <n>
        <rho> <U.n>          (n lines)

    Returns {k: (C, [ModeShape, ...])}.
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    pos = 0

    def fail(msg):
        raise ValueError(f"{path}:{pos}: {msg}")

    def nxt():
        nonlocal pos
        while pos < len(lines):
            pos += 1
            s = lines[pos - 1].split("#", 1)[0].strip()
            if s:
                return s.split()
        return None

    head = nxt()
    if head is None or " ".join(head) != MODES_HEADER:
        fail(f"expected header {MODES_HEADER!r}")
    out, cur = {}, None
    analytic = default_clamped_plate_modes(1.0, 6)
    while (tok := nxt()) is not None:
        try:
            if tok[0] == "membrane":
                k, C = int(tok[1]), float(tok[2])
                cur = out.setdefault(k, (C, []))
            elif tok[0] == "mode":
                if cur is None:
                    fail("mode before membrane")
                omega, eta = float(tok[1]), float(tok[2])
                if tok[3] == "analytic":
                    m = int(tok[4])
                    if not 1 <= m <= 6:
                        fail("analytic mode index must be 1..6")
                    prof = analytic[m - 1]
                elif tok[3] == "samples":
                    n = int(tok[4])
                    pts = []
                    for _ in range(n):
                        row = nxt()
                        if row is None or len(row) != 2:
                            fail("expected 'rho value' sample")
                        pts.append((float(row[0]), float(row[1])))
                    pts = np.array(pts)
                    if np.any(np.diff(pts[:, 0]) <= 0):
                        fail("sample radii must increase")
                    prof = RadialProfile(rho=pts[:, 0], values=pts[:, 1])
                else:
                    fail(f"unknown mode kind {tok[3]!r}")
                cur[1].append(ModeShape(prof, omega, eta))
            else:
                fail(f"unexpected keyword {tok[0]!r}")
        except (IndexError, ValueError) as exc:
            if str(exc).startswith(str(path)):
                raise
            fail(str(exc) or "malformed line")
    return out
