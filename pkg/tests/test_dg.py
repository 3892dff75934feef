import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmutwave.dg import (
    InterfaceOperator,
    MatchError,
    average_scalar,
    average_vector,
    boundary_jump_scalar,
    jump_scalar,
    jump_vector,
    match_faces,
    match_faces_bruteforce,
    penalty_gamma,
)
from pmutwave.mesh import FaceTag, HexMesh, Region, concatenate
from pmutwave.parallel import Executor
from pmutwave.timestepper import build_operators

from conftest import box_mesh, distort, two_layer


def test_trace_operators():
    n = np.array([1.0, 0, 0])
    assert np.allclose(jump_scalar(1.0, 1.0, n), 0) and average_scalar(1.0, 1.0) == 1
    assert np.allclose(jump_scalar(2.0, 0.0, n), [2, 0, 0]) and average_scalar(2.0, 0.0) == 1
    assert jump_vector(n, n, n) == 0
    assert np.allclose(average_vector(n, -n), 0)
    assert np.allclose(boundary_jump_scalar(3.0, n), [3, 0, 0])


def test_penalty_gamma_values():
    assert penalty_gamma(2.0, 2.0, 2, 2, 0.1, 0.2, 10) == pytest.approx(10 * 4 * 4 / 0.1)
    cbar = 2 * 1481 * 1130 / 2611
    assert cbar == pytest.approx(1281.9, abs=0.05)
    assert penalty_gamma(1481, 1130, 1, 1, 1, 1, 1) == pytest.approx(cbar**2)
    assert penalty_gamma(1.0, 1.0, 2, 3, 1e-5, 4e-5, 10) == pytest.approx(9e6)


def test_two_by_two_fine_over_one_coarse():
    m = two_layer(n_coarse=1, ratio=2)
    t = match_faces(m, 2)
    n_fine = int(np.sum(m.region == Region.INNER))
    assert len(t) == 4 * 9
    # coarse elements follow the fine ones; the top coarse element owns everything
    assert set(t.coarse_elem.tolist()) == {n_fine}
    assert np.all(np.abs(t.xhat_minus) <= 1 + 1e-12)
    assert np.allclose(t.xhat_minus[:, 2], 1.0)


def test_region_and_tags_after_tagging():
    m = two_layer(n_coarse=2, ratio=2, depth=1.0)
    assert len(m.faces_with_tag(FaceTag.INTERFACE_FINE)) == 16
    assert len(m.faces_with_tag(FaceTag.INTERFACE_COARSE)) == 4
    assert np.sum(m.region == Region.DG_LAYER) == 4
    assert np.sum(m.region == Region.OUTER) == 4


def test_offset_planes_give_orphans():
    fine = box_mesh(2, 2, 1, (0, 0, 0), (1, 1, 1), Region.INNER)
    coarse = box_mesh(1, 1, 1, (0, 0, -1), (1, 1, -1e-3), Region.OUTER)
    m = concatenate([fine, coarse])
    m.faces = np.array([[0, 4], [1, 4], [2, 4], [3, 4], [4, 5]])
    m.face_tag = np.array([FaceTag.INTERFACE_FINE] * 4 + [FaceTag.INTERFACE_COARSE])
    m.face_membrane = np.full(5, -1)
    with pytest.raises(MatchError, match="orphan"):
        match_faces(m, 2)
    with pytest.raises(MatchError, match="orphan"):
        match_faces_bruteforce(m, 2)


def _random_interface(seed):
    rng = np.random.default_rng(seed)
    nc = int(rng.integers(1, 5))
    ratio = int(rng.choice([2, 3]))
    m = two_layer(nc, ratio, depth=2.0 / nc, width=rng.uniform(0.5, 2.0), fine_depth=0.5 / nc)
    amp = 0.1 * m.min_edge_lengths().min()
    return distort(m, amp, seed=seed), int(rng.integers(1, 4))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**6))
def test_pruned_matcher_equals_bruteforce(seed):
    m, r = _random_interface(seed)
    a = match_faces(m, r)
    b = match_faces_bruteforce(m, r)
    assert np.array_equal(a.fine_face, b.fine_face)
    assert np.array_equal(a.coarse_elem, b.coarse_elem)
    assert np.allclose(a.xhat_minus, b.xhat_minus, atol=1e-12)
    assert a.n_candidates <= b.n_candidates


def test_quadrature_weights_reproduce_face_area():
    m, r = _random_interface(7)
    t = match_faces(m, r)
    width = np.ptp(m.nodes[:, 0])
    total = sum(t.face_area(f) for f in np.unique(t.fine_face))
    assert total == pytest.approx(width**2, rel=1e-10)
    flat = two_layer(2, 2, width=1.0)
    tf = match_faces(flat, 3)
    for f in np.unique(tf.fine_face):
        assert tf.face_area(f) == pytest.approx(1 / 16, rel=1e-12)
    assert np.allclose(np.linalg.norm(t.normal, axis=1), 1)


def test_mapped_points_coincide():
    from pmutwave.geometry import map_forward

    m, r = _random_interface(3)
    t = match_faces(m, r)
    xp = np.array([map_forward(c, x) for c, x in zip(m.corners(t.fine_elem), t.xhat_plus)])
    xm = np.array([map_forward(c, x) for c, x in zip(m.corners(t.coarse_elem), t.xhat_minus)])
    assert np.abs(xp - t.xq).max() < 1e-12
    assert np.abs(xm - t.xq).max() < 1e-10


def test_dump_format(tmp_path):
    t = match_faces(two_layer(1, 2), 2)
    t.dump(tmp_path / "pairs.txt")
    rows = [l.split() for l in (tmp_path / "pairs.txt").read_text().splitlines()]
    assert len(rows) == len(t)
    assert all(len(r) == 6 for r in rows)
    assert sum(float(r[5]) for r in rows) == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("ratio, r_in, r_out", [(2, 2, 2), (2, 3, 2), (3, 2, 3)])
def test_full_operator_annihilates_constants(ratio, r_in, r_out):
    m = distort(two_layer(2, ratio, fine_depth=0.5), 0.02)
    ops = build_operators(m, r_in, r_out)
    p = np.ones(ops.n_dofs)
    Kp = ops.K(p)
    scale = ops.M.max() * penalty_gamma(1, 1, r_in, r_out, 1, 1, 10) / m.min_edge_lengths().min()
    assert np.linalg.norm(Kp) / np.linalg.norm(p) <= 1e-12 * scale


def test_full_operator_symmetric_psd(rng):
    m = distort(two_layer(2, 2, fine_depth=0.5), 0.02)
    for r in (2, 4):
        ops = build_operators(m, r, r, alpha=10)
        p, q = rng.standard_normal((2, ops.n_dofs))
        a, b = q @ ops.K(p), p @ ops.K(q)
        assert abs(a - b) <= 1e-12 * np.sqrt((p @ ops.K(p)) * (q @ ops.K(q)))
        ray = []
        for _ in range(100):
            v = rng.standard_normal(ops.n_dofs)
            ray.append(v @ ops.K(v) / (v @ v))
        assert min(ray) >= -1e-10


def test_conforming_interface_matches_single_region_energy():
    m = two_layer(2, 1, fine_depth=0.5)
    ops = build_operators(m, 2, 2)
    single = HexMesh(m.nodes, m.elements, Region.OUTER, 0)
    ref = build_operators(single, 2)
    f = lambda X: X[:, 0] ** 2 - X[:, 1] * X[:, 2] + 0.5 * X[:, 2] ** 2 + X[:, 0]
    a = f(ops.dofmap.coords) @ ops.K(f(ops.dofmap.coords))
    b = f(ref.dofmap.coords) @ ref.K(f(ref.dofmap.coords))
    assert a == pytest.approx(b, rel=1e-8)


def test_interface_apply_bitwise_independent_of_workers(rng):
    m = distort(two_layer(3, 2, fine_depth=1 / 3), 0.02)
    ops = build_operators(m, 2)
    c = np.ones(m.n_elements)
    u = rng.standard_normal(ops.n_dofs)
    a = InterfaceOperator(m, ops.dofmap, ops.table, c, 10, Executor(1)).apply(u, np.zeros(ops.n_dofs))
    with Executor(3, chunk=5) as ex:
        b = InterfaceOperator(m, ops.dofmap, ops.table, c, 10, ex).apply(u, np.zeros(ops.n_dofs))
    assert np.array_equal(a, b)
