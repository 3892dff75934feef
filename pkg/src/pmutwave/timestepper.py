"""Explicit Newmark (gamma = 1/2, beta = 0) for the coupled PMUT/acoustic/PML system.

One step, in order:

1. membrane predictor for q, q'
2. membrane solve  q'' = -omega^2 q + c . p^n + eta phi^n
3. membrane corrector
4. acoustic predictor for p, p'
5. PML auxiliaries psi, Phi advanced with the predicted pressure
6. acoustic solve  M p'' = f(q'') - K p - C p' - (PML terms)
7. acoustic corrector
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dg import InterfaceOperator, match_faces
from .mesh import ABSORBING_TAGS
from .parallel import Executor
from .pml import PmlLayer
from .pmut import acoustic_forcing, build_coupling_table, modal_acceleration, voltage
from .sem import StiffnessOperator, assemble_abc, assemble_mass, build_dofmap

log = logging.getLogger(__name__)

NAN_CHECK_EVERY = 100
PHASES = ("volume", "interface", "pml", "pmut", "exchange")


class NumericalError(RuntimeError):
    pass


class Timer:
    def __init__(self):
        self.totals = dict.fromkeys(PHASES, 0.0)

    def add(self, phase, t0):
        now = time.perf_counter()
        self.totals[phase] += now - t0
        return now


@dataclass
class Operators:
    mesh: object
    dofmap: object
    M: np.ndarray
    stiffness: StiffnessOperator
    interface: InterfaceOperator | None
    C: np.ndarray
    pml: PmlLayer | None
    membranes: list
    coupling: list
    c_elem: np.ndarray
    executor: Executor
    table: object = None
    timer: Timer = field(default_factory=Timer)

    @property
    def n_dofs(self):
        return self.dofmap.n_dofs

    def K(self, u):
        t0 = time.perf_counter()
        y = self.stiffness(u)
        t0 = self.timer.add("volume", t0)
        if self.interface is not None:
            self.interface.apply(u, y)
            self.timer.add("interface", t0)
        return y


def build_operators(mesh, r_in, r_out=None, c_elem=None, alpha=10.0, pml_profile=None,
                    membranes=(), workers=1, absorbing_tags=ABSORBING_TAGS):
    """Assemble everything the time loop needs for ``mesh``."""
    ex = Executor(workers)
    dm = build_dofmap(mesh, r_in, r_out)
    c_elem = np.ones(mesh.n_elements) if c_elem is None else np.asarray(c_elem, float)
    M = assemble_mass(mesh, dm)
    K = StiffnessOperator(mesh, dm, c_elem, ex)
    table = match_faces(mesh, dm.groups[0].degree)
    iface = InterfaceOperator(mesh, dm, table, c_elem, alpha, ex) if len(table) else None
    C = assemble_abc(mesh, dm, c_elem, absorbing_tags)
    pml = None
    if pml_profile is not None:
        pml = PmlLayer(mesh, dm, pml_profile, c_elem, ex)
        pml = pml if pml.active else None
    coupling = build_coupling_table(mesh, list(membranes), dm) if len(membranes) else []
    return Operators(mesh, dm, M, K, iface, C, pml, list(membranes), coupling, c_elem, ex, table)


# --- stability ------------------------------------------------------------------


def estimate_stable_dt(ops, safety=0.5, max_iter=50, tol=1e-6, seed=0, return_lambda=False):
    """safety * 2 / sqrt(lambda_max(M^-1 K)) by power iteration.

    Iteration stops at ``max_iter`` or once the Rayleigh quotient changes by
    less than ``tol`` relatively. If the last relative change exceeds 1e-2
    the estimate is deemed unconverged and the heuristic
    ``safety * h_min / (c_max r^2)`` is used instead, with a warning.
    """
    rng = np.random.default_rng(seed)
    sq = np.sqrt(ops.M)
    x = rng.standard_normal(ops.n_dofs)
    x /= np.linalg.norm(x)
    lam, change = 0.0, np.inf
    for _ in range(max_iter):
        y = ops.K(x / sq) / sq  # symmetric form M^-1/2 K M^-1/2
        new = float(x @ y)
        change = abs(new - lam) / max(abs(new), 1e-300)
        lam = new
        nrm = np.linalg.norm(y)
        if nrm == 0.0:
            break
        x = y / nrm
        if change < tol:
            break
    if not np.isfinite(lam) or lam <= 0 or change > 1e-2:
        h = float(ops.mesh.min_edge_lengths().min())
        r = max(g.degree for g in ops.dofmap.groups)
        dt = safety * h / (float(np.max(ops.c_elem)) * r**2)
        warnings.warn("power iteration did not converge; using the h / (c r^2) heuristic")
        return (dt, lam) if return_lambda else dt
    dt = safety * 2.0 / np.sqrt(lam)
    return (dt, lam) if return_lambda else dt


# --- state ------------------------------------------------------------------------


@dataclass
class SolverState:
    p: np.ndarray
    pd: np.ndarray
    pdd: np.ndarray
    q: list
    qd: list
    qdd: list
    Phi: np.ndarray  # (n_local, 3) per PML element node
    psi: np.ndarray
    F: np.ndarray  # Phi source at the current time level
    n: int = 0

    def copy(self):
        c = lambda v: [a.copy() for a in v]
        return SolverState(self.p.copy(), self.pd.copy(), self.pdd.copy(), c(self.q), c(self.qd),
                           c(self.qdd), self.Phi.copy(), self.psi.copy(), self.F.copy(), self.n)


def _pml_rhs(ops, rhs, pd, p, div_Phi, psi):
    d = ops.pml.dofs
    co = ops.pml.coeffs
    rhs[d] -= div_Phi + ops.M[d] * (co.alpha * pd[d] + co.beta * p[d] + co.gamma * psi)


def initial_state(ops, p0=None, pd0=None):
    """State at t = 0 with an acceleration consistent with the initial fields."""
    N = ops.n_dofs
    p = np.zeros(N) if p0 is None else np.array(p0, dtype=float)
    pd = np.zeros(N) if pd0 is None else np.array(pd0, dtype=float)
    nm = [len(m.modes) for m in ops.membranes]
    z = lambda: [np.zeros(n) for n in nm]
    npml = len(ops.pml.dofs) if ops.pml is not None else 0
    nloc = ops.pml.n_local if ops.pml is not None else 0
    Phi, psi = np.zeros((nloc, 3)), np.zeros(npml)
    if not p.any() and not pd.any():
        return SolverState(p, pd, np.zeros(N), z(), z(), z(), Phi, psi, np.zeros((nloc, 3)))
    rhs = -ops.K(p) - ops.C * pd
    F = np.zeros((nloc, 3))
    if ops.pml is not None:
        _pml_rhs(ops, rhs, pd, p, ops.pml.weak_div(Phi), psi)
        F = ops.pml.source(p, psi)
    return SolverState(p, pd, rhs / ops.M, z(), z(), z(), Phi, psi, F)


# --- stepping -----------------------------------------------------------------------


def step(state, ops, signals, dt):
    """Advance ``state`` by one step; returns the new state (input untouched)."""
    tm = ops.timer
    t_n = state.n * dt
    t0 = time.perf_counter()
    q1, qd1, qdd1 = [], [], []
    for mem, sig, row, q, qd, qdd in zip(ops.membranes, signals, ops.coupling,
                                         state.q, state.qd, state.qdd):
        phi = voltage(mem, sig, t_n, q)
        qn = q + dt * qd + 0.5 * dt * dt * qdd
        qdp = qd + 0.5 * dt * qdd
        a = modal_acceleration(mem, state.p, phi, row, qn)
        q1.append(qn)
        qdd1.append(a)
        qd1.append(qdp + 0.5 * dt * a)
    t0 = tm.add("pmut", t0)

    p1 = state.p + dt * state.pd + 0.5 * dt * dt * state.pdd
    pdp = state.pd + 0.5 * dt * state.pdd

    Phi1, psi1, F1 = state.Phi, state.psi, state.F
    div = None
    if ops.pml is not None:
        pml = ops.pml
        psi1 = state.psi + 0.5 * dt * (state.p[pml.dofs] + p1[pml.dofs])
        Phi1, F1, div = pml.advance(p1, psi1, state.Phi, state.F, dt)
        t0 = tm.add("pml", t0)

    rhs = -ops.K(p1)
    t0 = time.perf_counter()
    if ops.membranes:
        rhs += acoustic_forcing(ops.membranes, qdd1, ops.coupling, ops.n_dofs)
    rhs -= ops.C * pdp
    t0 = tm.add("pmut", t0)
    if ops.pml is not None:
        _pml_rhs(ops, rhs, pdp, p1, div, psi1)
        tm.add("pml", t0)
    pdd1 = rhs / ops.M
    pd1 = pdp + 0.5 * dt * pdd1
    return SolverState(p1, pd1, pdd1, q1, qd1, qdd1, Phi1, psi1, F1, state.n + 1)


def check_finite(state):
    if not (np.all(np.isfinite(state.p)) and all(np.all(np.isfinite(q)) for q in state.q)):
        raise NumericalError(f"non-finite field at step {state.n}")


@dataclass
class RunResult:
    times: np.ndarray
    probes: np.ndarray  # (S + 1, n_probes)
    voltages: np.ndarray  # (S + 1, n_membranes)
    state: SolverState
    dt: float
    wall: float
    phases: dict
    lam_max: float = float("nan")

    def summary(self):
        S = len(self.times) - 1
        lines = [
            f"steps {S}",
            f"dt {self.dt:.17g}",
            f"lambda_max {self.lam_max:.17g}",
            f"wall_per_step {self.wall / max(S, 1):.6e}",
        ]
        lines += [f"time_{k} {v:.6e}" for k, v in self.phases.items()]
        return "\n".join(lines) + "\n"


def run(ops, signals, dt, n_steps, probe=None, state=None, callback=None):
    """Integrate ``n_steps`` steps recording probe values at every level."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    state = initial_state(ops) if state is None else state
    ops.timer = Timer()
    probe = probe or (lambda p: np.zeros(0))

    def volts(s):
        return [voltage(m, sig, s.n * dt, q) for m, sig, q in zip(ops.membranes, signals, s.q)]

    rec = [probe(state.p)]
    vrec = [volts(state)]
    t_start = time.perf_counter()
    for _ in range(n_steps):
        state = step(state, ops, signals, dt)
        if state.n % NAN_CHECK_EVERY == 0 or state.n == n_steps:
            check_finite(state)
        rec.append(probe(state.p))
        vrec.append(volts(state))
        if callback is not None:
            callback(state)
    wall = time.perf_counter() - t_start
    times = dt * np.arange(n_steps + 1)
    return RunResult(
        times,
        np.array(rec).reshape(n_steps + 1, -1),
        np.array(vrec).reshape(n_steps + 1, -1),
        state,
        dt,
        wall,
        dict(ops.timer.totals),
    )


def energy(ops, state):
    """Discrete energy 1/2 p'.M p' + 1/2 p.K p."""
    return 0.5 * state.pd @ (ops.M * state.pd) + 0.5 * state.p @ ops.K(state.p)
