import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bundlediff import geometry, models
from bundlediff.errors import NotPositiveDefinite
from oracles import hopf_oracle

coord = st.floats(-1.5, 1.5)
# a few fixed models so that property tests reuse compiled kernels
HOPF_TILTED = [models.Hopf(gauge_tilt=t) for t in (0.0, -0.4, 0.35)]
WARPED_TILTED = models.Warped(gauge_tilt=0.2)


@pytest.mark.parametrize("radius", [1.0, 1.7])
def test_hopf_scalars_match_riemann_oracle(radius, rng):
    R_S3, R_base, F2 = hopf_oracle()
    m = models.Hopf(radius=radius)
    c, Q = m.random_sigma_points(30, rng)
    rep = geometry.geometry_report(m, Q, c)
    # the oracle's chart variables are those of chart 0; the metric is identical in chart 1
    u, v = Q[:, 0], Q[:, 1]
    assert np.allclose(rep["R_P"], -R_S3(u, v, radius), atol=1e-8)
    assert np.allclose(rep["HR"], -R_base(u, v, radius), atol=1e-8)
    assert np.allclose(rep["F2"], F2(u, v, radius), atol=1e-8)
    assert np.allclose(rep["Jtilde"], rep["R_P"] - rep["HR"] - rep["F2"] / 4, atol=1e-10)


def test_hopf_tensors_closed_form():
    m = models.Hopf()
    Q = np.array([0.4, -0.3, 0.0])
    rep = geometry.geometry_report(m, Q, 0)
    rho2 = 0.25
    assert np.allclose(rep.gamma, [[1.0]])
    assert np.allclose(rep["h"][:2, :2], (1 + rho2) ** 2 * np.eye(2))
    # curvature of the connection (-v, u)/(1+rho^2) is 2/(1+rho^2)^2 du^dv
    F = np.asarray(rep.curvF)
    assert abs(abs(F.reshape(-1)[np.argmax(np.abs(F))]) - 2 / (1 + rho2) ** 2) < 1e-12
    assert np.allclose(rep.jI, 0, atol=1e-14) and np.allclose(rep.jII, 0, atol=1e-14)


@given(coord, coord, st.sampled_from(HOPF_TILTED))
def test_projector_identities_property(x, y, m):
    Q = np.asarray(m.project(np.array([x, y, 0.0]), 0)[0])
    rep = geometry.geometry_report(m, Q, 0, level="first")
    assert max(geometry.projector_residuals(rep).values()) < 1e-10


@given(coord, coord, st.floats(-3, 3))
def test_metric_block_contract_property(x, y, a):
    m = WARPED_TILTED
    Q = np.asarray(m.project(np.array([x, y, 0.0]), 0)[0])
    mb = geometry.metric_block(m, Q, np.array([a]))
    assert mb["pseudo_inverse_residual"] < 1e-10
    assert mb["det_factorization"]["rel_diff"] < 1e-10


@pytest.mark.parametrize("name", ["flat", "warped", "hopf"])
def test_fd_matches_analytic(name, rng):
    m = models.make_model(name, gauge_tilt=0.3)
    c, Q = m.random_sigma_points(10, rng)
    a = geometry.geometry_report(m, Q, c, "analytic")
    f = geometry.geometry_report(m, Q, c, "fd")
    for key in ("christoffel_H", "jI", "jII", "curvF", "secff"):
        assert np.allclose(a[key], f[key], atol=1e-6), key
    for key in ("R_P", "HR", "Jtilde"):
        assert np.allclose(a[key], f[key], atol=1e-4), key


def test_scalars_are_gauge_independent(rng):
    # same base point, different gauge surfaces: intrinsic scalars agree
    x = rng.uniform(-1, 1, size=(10, 2))
    vals = []
    for tilt in (0.0, 0.5):
        m = models.Warped(gauge_tilt=tilt)
        Q = np.asarray(m.project(np.concatenate([x, np.zeros((10, 1))], 1), 0)[0])
        rep = geometry.geometry_report(m, Q, 0)
        vals.append(np.array([rep[k] for k in ("HR", "F2", "R_G", "jnorm2", "Jtilde")]))
    assert np.allclose(vals[0], vals[1], atol=1e-9)


def test_warped_jtilde_closed_form(rng):
    m = models.Warped(eps=0.3)
    c, Q = m.random_sigma_points(50, rng)
    rep = geometry.geometry_report(m, Q, c)
    assert np.allclose(rep["Jtilde"], np.asarray(m.jtilde_exact(Q[:, :2])), atol=1e-9)


def test_flat_is_flat(rng):
    m = models.FlatTrivial()
    c, Q = m.random_sigma_points(20, rng)
    rep = geometry.geometry_report(m, Q, c)
    for k in ("R_P", "HR", "R_G", "F2", "jnorm2", "Jtilde"):
        assert np.max(np.abs(rep[k])) < 1e-12


@given(st.lists(st.floats(-2, 2), min_size=9, max_size=9))
def test_small_inv_matches_numpy(vals):
    A = np.array(vals).reshape(3, 3)
    A = A @ A.T + 0.5 * np.eye(3)
    assert np.allclose(np.asarray(geometry.small_inv(A)) @ A, np.eye(3), atol=1e-9)


def test_metric_sqrt_reconstructs(rng):
    B = rng.normal(size=(3, 3))
    G = B @ B.T + np.eye(3)
    S = geometry.metric_sqrt(G)
    assert np.max(np.abs(S @ S.T - np.linalg.inv(G))) < 1e-12
    assert np.allclose(S, np.tril(S))
    with pytest.raises(NotPositiveDefinite):
        geometry.metric_sqrt(-np.eye(3))


def test_off_surface_point_rejected():
    m = models.Hopf(gauge_tilt=0.2)
    with pytest.raises(ValueError):
        geometry.geometry_report(m, np.array([0.3, 0.2, 1.0]), 0)


def test_report_lookup():
    rep = geometry.geometry_report(models.Hopf(), np.zeros(3), 0)
    assert rep["Lambda"] is rep.Lambda
    assert np.isscalar(float(rep["Jtilde"]))
    with pytest.raises(KeyError):
        rep["nonexistent"]
