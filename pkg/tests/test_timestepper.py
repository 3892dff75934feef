import numpy as np
import pytest
import scipy.linalg

from pmutwave.mesh import FaceTag
from pmutwave.pmut import ModeShape, PmutMembrane, RadialProfile, VoltageSignal
from pmutwave.timestepper import (
    NumericalError,
    build_operators,
    energy,
    estimate_stable_dt,
    initial_state,
    run,
    step,
)

from conftest import box_mesh, distort, two_layer

W = 2 * np.pi * 1e6
FLAT = RadialProfile(rho=np.array([0.0, 1.0]), values=np.array([1.0, 1.0]))


def _dense(ops):
    K = np.column_stack([ops.K(e) for e in np.eye(ops.n_dofs)])
    return K, scipy.linalg.eigh(K, np.diag(ops.M), eigvals_only=True)


def _membrane_ops(kappa=0.0):
    m = box_mesh(2, 2, 1, tag=FaceTag.NEUMANN)
    top = np.isclose(m.face_centroids()[:, 2], 1.0)
    m.face_tag[top] = FaceTag.PMUT
    m.face_membrane[top] = 0
    mem = PmutMembrane(0, (0.5, 0.5, 1.0), 10.0, [ModeShape(FLAT, W, 0.0)], 1e-12, kappa)
    return build_operators(m, 2, membranes=[mem])


def test_zero_state_stays_zero():
    ops = build_operators(two_layer(2, 2, fine_depth=0.5), 2)
    s = initial_state(ops)
    for _ in range(5):
        s = step(s, ops, [], 1e-3)
    assert not s.p.any() and not s.pd.any() and s.n == 5


def _shm_error(dt, n):
    ops = _membrane_ops()
    sig = VoltageSignal(0.0, 1e6, 1e-6)
    s = initial_state(ops)
    s.q[0][:] = 1.0
    s.qdd[0][:] = -(W**2)
    err = 0.0
    for k in range(n):
        s = step(s, ops, [sig], dt)
        err = max(err, abs(s.q[0][0] - np.cos(W * (k + 1) * dt)))
    assert not s.p.any()
    return err


def test_decoupled_mode_tracks_cosine_second_order():
    e1 = _shm_error(1e-9, 1000)
    e2 = _shm_error(0.5e-9, 2000)
    assert e1 < 1e-4
    assert e1 / e2 == pytest.approx(4.0, rel=0.1)


def test_leapfrog_identity(rng):
    m = distort(two_layer(2, 2, fine_depth=0.5), 0.02)
    ops = build_operators(m, 2)
    assert not ops.C.any()
    dt = 0.5 * estimate_stable_dt(ops)
    s0 = initial_state(ops, rng.standard_normal(ops.n_dofs), rng.standard_normal(ops.n_dofs))
    s1 = step(s0, ops, [], dt)
    s2 = step(s1, ops, [], dt)
    lhs = s2.p - 2 * s1.p + s0.p
    rhs = -dt * dt * ops.K(s1.p) / ops.M
    assert np.abs(lhs - rhs).max() <= 1e-12 * np.abs(s1.p).max()


def test_stable_dt_matches_dense_eigensolve():
    m = box_mesh(4, 1, 1, hi=(4, 1, 1))
    ops = build_operators(m, 1)
    _, lam = _dense(ops)
    dt, lam_est = estimate_stable_dt(ops, safety=1.0, return_lambda=True)
    assert lam_est == pytest.approx(lam[-1], rel=1e-2)
    assert dt == pytest.approx(2 / np.sqrt(lam[-1]), rel=1e-2)


def test_stable_dt_scales_with_mesh_size():
    m = distort(box_mesh(3, 2, 2), 0.05)
    a = estimate_stable_dt(build_operators(m, 2))
    m.nodes = 2 * m.nodes
    b = estimate_stable_dt(build_operators(m, 2))
    assert b == pytest.approx(2 * a, rel=1e-3)


def test_above_stability_limit_blows_up(rng):
    m = box_mesh(2, 2, 2)
    ops = build_operators(m, 2)
    _, lam = _dense(ops)
    dt = 1.05 * 2 / np.sqrt(lam[-1])
    s = initial_state(ops, rng.standard_normal(ops.n_dofs))
    n0 = np.linalg.norm(s.p)
    grown = False
    for _ in range(2000):
        s = step(s, ops, [], dt)
        if np.linalg.norm(s.p) > 1e3 * n0:
            grown = True
            break
    assert grown


def test_energy_conserved_short_run():
    m = distort(box_mesh(3, 3, 3), 0.05)
    ops = build_operators(m, 2)
    X = ops.dofmap.coords
    s = initial_state(ops, np.cos(np.pi * X[:, 0]) * np.cos(np.pi * X[:, 1]))
    dt = estimate_stable_dt(ops, 0.5)
    e0 = energy(ops, s)
    es = []
    for _ in range(300):
        s = step(s, ops, [], dt)
        es.append(energy(ops, s))
    assert np.abs(np.array(es) / e0 - 1).max() < 1e-2


def test_nan_detection_reports_step():
    ops = build_operators(box_mesh(1, 1, 1), 1)
    s = initial_state(ops, np.ones(ops.n_dofs))
    s.p[0] = np.nan
    with pytest.raises(NumericalError, match="step"):
        run(ops, [], 1e-3, 100, state=s)


def test_run_zero_steps_and_shapes():
    ops = build_operators(box_mesh(1, 1, 1), 2)
    r = run(ops, [], 1e-3, 0, probe=lambda p: p[:2])
    assert r.times.tolist() == [0.0]
    assert r.probes.shape == (1, 2) and not r.probes.any()
    with pytest.raises(ValueError):
        run(ops, [], 0.0, 1)
    r = run(ops, [], 1e-3, 7, probe=lambda p: p[:1])
    assert len(r.times) == 8 and r.times[-1] == pytest.approx(7e-3, abs=1e-18)
    assert "steps 7" in r.summary()


def test_run_bitwise_across_workers(rng):
    m = distort(two_layer(3, 2, fine_depth=1 / 3), 0.02)
    p0 = None
    outs = []
    for w in (1, 3):
        ops = build_operators(m, 2, workers=w)
        ops.executor.chunk = 5
        if p0 is None:
            p0 = rng.standard_normal(ops.n_dofs)
            dt = estimate_stable_dt(ops)
        outs.append(run(ops, [], dt, 20, state=initial_state(ops, p0), probe=lambda p: p[::17]).probes)
        ops.executor.close()
    assert np.array_equal(outs[0], outs[1])


def test_membrane_drive_radiates():
    ops = _membrane_ops(kappa=1.0)
    ops.membranes[0].modes[0].eta = 1.0
    sig = VoltageSignal(1.0, 1e6, 1e-6)
    dt = min(estimate_stable_dt(ops), 1e-9)
    r = run(ops, [sig], dt, 200, probe=lambda p: p[:1])
    assert np.abs(r.state.p).max() > 0
    assert r.state.q[0][0] != 0
