import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmutwave.geometry import CORNER_SIGNS
from pmutwave.mesh import FaceTag, MeshError, Region
from pmutwave.parallel import Executor
from pmutwave.sem import (
    PointEvaluator,
    StiffnessOperator,
    apply_abc,
    assemble_abc,
    assemble_mass,
    build_dofmap,
    element_speeds,
    face_local_nodes,
    gll_rule,
    lagrange_basis,
    tensor_points,
)

from conftest import box_mesh, distort, two_layer


def test_gll_closed_forms():
    r1 = gll_rule(1)
    assert np.allclose(r1.nodes, [-1, 1]) and np.allclose(r1.weights, [1, 1])
    r2 = gll_rule(2)
    assert np.allclose(r2.nodes, [-1, 0, 1], atol=1e-15)
    assert np.allclose(r2.weights, [1 / 3, 4 / 3, 1 / 3], atol=1e-15)
    r4 = gll_rule(4)
    s = np.sqrt(3 / 7)
    assert np.allclose(r4.nodes, [-1, -s, 0, s, 1], atol=1e-15)
    assert np.allclose(r4.weights, [1 / 10, 49 / 90, 32 / 45, 49 / 90, 1 / 10], atol=1e-15)
    assert r2.weights @ r2.nodes**2 == pytest.approx(2 / 3, abs=1e-15)


@pytest.mark.parametrize("r", range(1, 9))
def test_gll_invariants_and_exactness(r):
    g = gll_rule(r)
    assert np.array_equal(g.nodes, -g.nodes[::-1])
    assert g.weights.sum() == pytest.approx(2.0, abs=1e-14)
    assert (g.weights > 0).all()
    assert np.abs(g.D @ np.ones(g.n)).max() < 1e-13
    for k in range(2 * r):
        exact = 0.0 if k % 2 else 2.0 / (k + 1)
        assert g.weights @ g.nodes**k == pytest.approx(exact, abs=1e-13)
    # D differentiates polynomials of degree r exactly
    for k in range(1, r + 1):
        assert np.allclose(g.D @ g.nodes**k, k * g.nodes ** (k - 1), atol=1e-11)


@pytest.mark.parametrize("r", [0, 9, 2.0, "2"])
def test_gll_rejects_unsupported_degree(r):
    with pytest.raises(ValueError):
        gll_rule(r)


def test_lagrange_basis_cardinal():
    g = gll_rule(5)
    L, dL = lagrange_basis(g.nodes, g.nodes)
    assert np.allclose(L, np.eye(g.n), atol=1e-14)
    assert np.allclose(dL, g.D, atol=1e-11)


def test_face_local_nodes_lie_on_face():
    g = gll_rule(3)
    ref = tensor_points(g)
    for f, (ax, side) in enumerate([(0, -1), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1)]):
        idx = face_local_nodes(g, f)
        assert len(idx) == g.n**2
        assert np.all(ref[idx, ax] == side)


def test_dof_count_structured():
    m = box_mesh(3, 2, 2)
    for r in (1, 2, 3):
        dm = build_dofmap(m, r)
        assert dm.n_dofs == (3 * r + 1) * (2 * r + 1) * (2 * r + 1)


def test_inner_and_outer_share_no_dofs():
    m = two_layer(2, 1)  # conforming geometry, still two regions
    dm = build_dofmap(m, 2, 2)
    inner = set(dm.groups[0].dofs.ravel())
    outer = set(dm.groups[1].dofs.ravel())
    assert not inner & outer
    assert dm.n_dofs == len(inner) + len(outer)


def _divergence_volume(corners):
    """Volume as (1/3) of the flux of x through the six bilinear faces."""
    g, w = np.polynomial.legendre.leggauss(3)
    U, V = np.meshgrid(g, g, indexing="ij")
    W = np.outer(w, w)
    vol = 0.0
    for a in range(3):
        b, c = [k for k in range(3) if k != a]
        orient = 1 if a != 1 else -1
        for s in (-1, 1):
            sel = CORNER_SIGNS[:, a] == s
            q = corners[sel]
            sb, sc = CORNER_SIGNS[sel][:, b], CORNER_SIGNS[sel][:, c]
            N = (1 + sb[:, None, None] * U) * (1 + sc[:, None, None] * V) / 4
            Nu = sb[:, None, None] * (1 + sc[:, None, None] * V) / 4
            Nv = (1 + sb[:, None, None] * U) * sc[:, None, None] / 4
            x = np.einsum("kuv,kd->uvd", N, q)
            xu = np.einsum("kuv,kd->uvd", Nu, q)
            xv = np.einsum("kuv,kd->uvd", Nv, q)
            flux = np.einsum("uvd,uvd->uv", x, np.cross(xu, xv))
            vol += s * orient * np.sum(W * flux) / 3
    return vol


@pytest.mark.parametrize("r", [1, 2, 4])
def test_mass_unit_cube_and_pair(r):
    assert assemble_mass(box_mesh(1, 1, 1), build_dofmap(box_mesh(1, 1, 1), r)).sum() == pytest.approx(1, abs=1e-14)
    m2 = box_mesh(2, 1, 1, hi=(2, 1, 1))
    assert assemble_mass(m2, build_dofmap(m2, r)).sum() == pytest.approx(2, abs=1e-14)


@pytest.mark.parametrize("r", [2, 3])
def test_mass_distorted_matches_divergence_volume(r):
    m = distort(box_mesh(3, 3, 2), 0.05, seed=4)
    M = assemble_mass(m, build_dofmap(m, r))
    vol = sum(_divergence_volume(m.corners([e])[0]) for e in range(m.n_elements))
    assert (M > 0).all()
    assert M.sum() == pytest.approx(vol, rel=1e-10)
    assert vol == pytest.approx(3 * 3 * 2 / 18, rel=1e-12)  # boundary box is preserved


def test_mass_rejects_inverted_element():
    m = box_mesh(1, 1, 1)
    m.elements = m.elements[:, [4, 5, 6, 7, 0, 1, 2, 3]]
    with pytest.raises(MeshError, match="Jacobian"):
        assemble_mass(m, build_dofmap(m, 2))


def _stiffness(m, r, c=1.0, executor=None):
    dm = build_dofmap(m, r)
    return dm, StiffnessOperator(m, dm, np.full(m.n_elements, c), executor)


def test_stiffness_annihilates_constants():
    m = distort(box_mesh(3, 2, 2), 0.05)
    dm, K = _stiffness(m, 3)
    M = assemble_mass(m, dm)
    p = np.full(dm.n_dofs, 2.5)
    assert np.linalg.norm(K(p)) <= 1e-12 * np.linalg.norm(p) * M.max()


@pytest.mark.parametrize("r", [1, 2, 3])
def test_stiffness_dirichlet_energy_of_coordinate(r):
    m = box_mesh(1, 1, 1)
    dm, K = _stiffness(m, r)
    x = dm.coords[:, 0]
    assert x @ K(x) == pytest.approx(1.0, abs=1e-13)
    _, K2 = _stiffness(m, r, c=3.0)
    assert x @ K2(x) == pytest.approx(9.0, abs=1e-12)


def test_stiffness_symmetric_psd(rng):
    m = distort(box_mesh(3, 3, 2), 0.05, seed=2)
    dm, K = _stiffness(m, 3)
    p, q = rng.standard_normal((2, dm.n_dofs))
    a, b = q @ K(p), p @ K(q)
    assert abs(a - b) <= 1e-12 * max(abs(a), 1.0) * 10
    for _ in range(20):
        v = rng.standard_normal(dm.n_dofs)
        assert v @ K(v) / (v @ v) >= -1e-12


def test_stiffness_bitwise_independent_of_workers(rng):
    m = distort(box_mesh(4, 4, 3), 0.05)
    dm = build_dofmap(m, 2)
    c = np.ones(m.n_elements)
    u = rng.standard_normal(dm.n_dofs)
    ref = StiffnessOperator(m, dm, c, Executor(1)).apply(u)
    with Executor(4, chunk=7) as ex:
        out = StiffnessOperator(m, dm, c, ex).apply(u)
    assert np.array_equal(ref, out)


def test_abc_face_area_and_zero_cases():
    m = box_mesh(2, 2, 1, tag=FaceTag.NEUMANN)
    dm = build_dofmap(m, 3)
    assert not assemble_abc(m, dm, np.ones(4)).any()
    m.face_tag[np.isclose(m.face_centroids()[:, 2], 0.0)] = FaceTag.ABC
    C = assemble_abc(m, dm, np.full(4, 1481.0))
    assert apply_abc(C, np.ones(dm.n_dofs)).sum() == pytest.approx(1481.0, rel=1e-13)
    assert not apply_abc(C, np.zeros(dm.n_dofs)).any()
    # nonzero only on the tagged plane
    assert np.allclose(dm.coords[C != 0, 2], 0.0)


def test_element_speeds_table():
    m = box_mesh(2, 1, 1)
    m.material[1] = 1
    c, rho = element_speeds(m, [(1481, 1000), (1130, 1200)])
    assert c.tolist() == [1481, 1130] and rho.tolist() == [1000, 1200]
    with pytest.raises(MeshError):
        element_speeds(m, [(1481, 1000)])


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.99, 0.99), st.floats(-0.99, 0.99), st.floats(-0.99, 0.99))
def test_point_evaluator_reproduces_polynomials(x, y, z):
    m = distort(box_mesh(2, 2, 2, lo=(-1, -1, -1)), 0.04)
    dm = build_dofmap(m, 3)
    X = dm.coords
    # trilinear map distorts only in x, y; a polynomial in z of degree 3 stays exact
    f = lambda P: 1 + P[..., 2] ** 3 - 2 * P[..., 2]
    ev = PointEvaluator(m, dm, [[x, y, z]])
    assert ev(f(X))[0] == pytest.approx(f(np.array([x, y, z])), abs=1e-12)


def test_point_evaluator_outside_raises():
    m = box_mesh(1, 1, 1)
    with pytest.raises(MeshError, match="outside"):
        PointEvaluator(m, build_dofmap(m, 2), [[2.0, 0.5, 0.5]])
