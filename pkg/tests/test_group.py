import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bundlediff import group
from bundlediff.errors import ChartOverflow
from oracles import casimir_su2

angles = st.floats(-3.0, 3.0)


@given(angles, angles, st.integers(-3, 3))
def test_u1_homomorphism(a, b, lam):
    g = group.U1()
    ir = g.irrep(lam)
    ab = g.compose(np.array([a]), np.array([b]))
    lhs = np.asarray(ir.matrix(np.array([a]))) @ np.asarray(ir.matrix(np.array([b])))
    assert np.allclose(lhs, np.asarray(ir.matrix(ab)), atol=1e-12)


@given(st.lists(st.floats(-1.5, 1.5), min_size=3, max_size=3),
       st.lists(st.floats(-1.5, 1.5), min_size=3, max_size=3))
def test_su2_homomorphism_spin1(a, b):
    g = group.SU2()
    ir = g.irrep(1)
    a, b = np.array(a), np.array(b)
    ab = g.compose(a, b)
    lhs = np.asarray(ir.matrix(a)) @ np.asarray(ir.matrix(b))
    assert np.max(np.abs(lhs - np.asarray(ir.matrix(ab)))) < 1e-12


@pytest.mark.parametrize("spin", [0.5, 1, 1.5])
def test_su2_irreps_unitary_and_casimir(spin, rng):
    g = group.SU2()
    ir = g.irrep(spin)
    J = np.asarray(ir.generators)
    assert np.allclose(J + np.conj(np.transpose(J, (0, 2, 1))), 0, atol=1e-14)
    C = sum(j @ j for j in J)
    # anti-Hermitian generators: sum J_a J_a = -(textbook Casimir)
    assert np.allclose(C, -casimir_su2(spin), atol=1e-12)
    D = np.asarray(ir.matrix(rng.uniform(-1, 1, 3)))
    assert np.allclose(D @ D.conj().T, np.eye(ir.dim), atol=1e-12)


def test_su2_commutators_match_structure_constants():
    g = group.SU2()
    J = np.asarray(g.irrep(1).generators)
    c = np.asarray(g.structure_constants)
    for m in range(3):
        for n in range(3):
            comm = J[m] @ J[n] - J[n] @ J[m]
            assert np.allclose(comm, -np.einsum("s,sij->ij", c[:, m, n], J), atol=1e-12)
    assert g.jacobi_residual() < 1e-14


@pytest.mark.parametrize("lam", [0, 1, 2])
def test_u1_quadrature_schur_orthogonality(lam):
    g = group.U1()
    nodes, w = g.haar_quadrature(16)
    assert np.isclose(w.sum(), 1.0)
    for mu in range(-2, 3):
        val = np.sum(w * np.exp(1j * (lam - mu) * nodes[:, 0]))
        assert np.isclose(val, 1.0 if mu == lam else 0.0, atol=1e-13)


def test_su2_quadrature_orthogonality():
    g = group.SU2()
    nodes, w = g.haar_quadrature(8)
    D = np.asarray(g.irrep(0.5).matrix(nodes))
    # int D_ij conj(D_kl) = delta_ik delta_jl / dim
    M = np.einsum("n,nij,nkl->ijkl", w, D, np.conj(D))
    ref = np.einsum("ik,jl->ijkl", np.eye(2), np.eye(2)) / 2
    assert np.allclose(M, ref, atol=1e-12)
    D1 = np.asarray(g.irrep(1).matrix(nodes))
    assert np.allclose(np.einsum("n,nij,nkl->ijkl", w, D1, np.conj(D)), 0, atol=1e-12)


def test_dual_generators():
    ir = group.SU2().irrep(0.5)
    d = ir.dual()
    assert np.allclose(np.asarray(d.generators), -np.transpose(np.asarray(ir.generators), (0, 2, 1)))
    a = np.array([0.3, -0.2, 0.7])
    assert np.allclose(np.asarray(d.matrix(a)), np.conj(np.asarray(ir.matrix(a))), atol=1e-12)


def test_su2_chart_overflow():
    g = group.SU2()
    with pytest.raises(ChartOverflow):
        g.check_chart(np.array([10.0, 0.0, 0.0]))


def test_u1_normalize_wraps():
    g = group.U1()
    assert np.allclose(g.normalize(np.array([[np.pi + 0.1]])), [[-np.pi + 0.1]])


def test_get_group():
    assert group.get_group("U1").name == group.U1().name
