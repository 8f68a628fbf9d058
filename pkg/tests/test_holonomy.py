import jax
import jax.numpy as jnp
import numpy as np
import pytest

from bundlediff import geometry, group, holonomy as hol, models, sde
from bundlediff.errors import ConfigError, MatrixOverflow, SingularOrbitMetric


def _rand_AB(rng, d=2, n=3):
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    B = rng.normal(size=(n, d, d)) + 1j * rng.normal(size=(n, d, d))
    return jnp.asarray(A), jnp.asarray(B)


def test_multiplier_modes(rng):
    A, B = _rand_AB(rng)
    dW = jnp.asarray(rng.normal(size=3))
    dt = 1e-4
    sq = np.sqrt(dt)
    e = np.asarray(hol.multiplier(A, B, dt, dW * sq, "euler"))
    x = np.asarray(hol.multiplier(A, B, dt, dW * sq, "expm"))
    p = np.asarray(hol.multiplier(A, B, dt, dW * sq, "euler_plain"))
    BB = np.einsum("mij,mjk->ik", B, B)
    assert np.allclose(e - p, 0.5 * BB * dt)
    # expm and Euler differ at order dt^{3/2} plus the dW^2 - dt fluctuation
    BdW = np.einsum("m,mij->ij", np.asarray(dW) * sq, B)
    assert np.max(np.abs(x - e - 0.5 * (BdW @ BdW - BB * dt))) < 50 * dt ** 1.5


def test_multiplier_without_noise_is_euler_step(rng):
    A, B = _rand_AB(rng)
    m = np.asarray(hol.multiplier(A, 0 * B, 0.01, jnp.zeros(3), "euler"))
    assert np.allclose(m, np.eye(2) + 0.01 * np.asarray(A))


def test_kernel_variant_validation():
    assert hol.KernelVariant("F1").process == "sigma_full"
    assert hol.KernelVariant("F3").process == "sigma_reduced"
    assert not hol.KernelVariant("F1").uses_jtilde
    with pytest.raises(ConfigError):
        hol.KernelVariant("F4")
    with pytest.raises(ConfigError):
        hol.KernelVariant("F1", mode="rk4")


def test_regauge_multiplies_transposed_representation():
    acc = hol.HolonomyAccumulator(models.Hopf(), group.U1().irrep(2), hol.KernelVariant("F2"))
    st = acc.init(4)
    beta = jnp.asarray([[0.3], [-0.1], [1.0], [2.0]])
    out = jax.vmap(acc.regauge)(st, beta)
    assert np.allclose(out["M"][:, 0, 0], np.exp(2j * np.asarray(beta[:, 0])))


def test_track_log_agrees_with_product():
    m = models.Hopf()
    ir = group.U1().irrep(1)
    acc = hol.HolonomyAccumulator(m, ir, hol.KernelVariant("F3"), track_log=True)
    ens = sde.simulate_paths(m, sde.SimConfig(n_paths=64, n_steps=50, t_b=1.5, seed=4,
                                              variant="sigma_reduced"), accumulator=acc)
    M = ens.acc["M"][:, 0, 0]
    assert ens.n_chart_switches >= 0
    assert np.allclose(np.exp(ens.acc["logM"]), M, rtol=1e-10)


def test_jtilde_auto_uses_declared_constant():
    acc = hol.HolonomyAccumulator(models.Hopf(), group.U1().irrep(1), hol.KernelVariant("F2"))
    assert acc.jtilde_const == 0.0 and acc.level == "first"
    acc = hol.HolonomyAccumulator(models.Warped(), group.U1().irrep(1), hol.KernelVariant("F2"))
    assert acc.jtilde_const is None and acc.level == "full"
    acc = hol.HolonomyAccumulator(models.Hopf(), group.U1().irrep(1), hol.KernelVariant("F2"),
                                  jtilde="geometry")
    assert acc.level == "full"
    with pytest.raises(ConfigError):
        hol.HolonomyAccumulator(models.Hopf(), group.U1().irrep(1), hol.KernelVariant("F2"),
                                jtilde="magic")


def test_holonomy_step_single_path():
    m = models.Warped(potential_quadratic=0.3)
    ir = group.U1().irrep(1)
    q = np.asarray(m.project(jnp.asarray([0.4, -0.2, 0.0]), 0)[0])
    rep = geometry.geometry_report(m, q, 0)
    st = hol.PathState.start(0.0, q, ir)
    v = hol.KernelVariant("F2")
    dW = np.array([0.01, -0.02, 0.005])
    s1 = hol.holonomy_step(v, st, rep, ir, 0.01, dW, model=m)
    assert s1.t == pytest.approx(0.01)
    rate = 0.3 * -np.sum(np.sin(q[:2]) ** 2) - float(rep["Jtilde"]) / 8
    assert s1.logW == pytest.approx(rate * 0.01)
    s2 = hol.holonomy_step(v, s1, rep, ir, 0.01, -dW, model=m)
    assert s2.M.shape == (1, 1)


def test_overflow_and_prefactor_errors():
    with pytest.raises(MatrixOverflow):
        hol.check_overflow(np.full((2, 1, 1), 1e13))
    with pytest.raises(MatrixOverflow):
        hol.check_overflow(np.array([[[np.nan]]]))
    assert hol.jacobian_prefactor(2.0, 32.0) == pytest.approx(2.0)
    with pytest.raises(SingularOrbitMetric):
        hol.jacobian_prefactor(0.0, 1.0)


def test_orbit_det_warped():
    m = models.Warped(eps=0.3)
    Q = np.array([[0.3, 0.2, 0.0], [1.0, -1.0, 0.0]])
    f = np.array([float(m.fiber_length(jnp.asarray(q[:2]))) for q in Q])
    assert np.allclose(hol.orbit_det(m, 0, Q), f**2)
