import jax.numpy as jnp
import numpy as np
import pytest

from bundlediff import models, sde
from bundlediff.errors import ConfigError


def _height(m, ens):
    z = np.asarray(m.embed(jnp.asarray(ens.chart), jnp.asarray(ens.Q)))
    return np.abs(z[:, 0]) ** 2 - np.abs(z[:, 1]) ** 2, z


def test_flat_endpoint_gaussian_law():
    m = models.FlatTrivial(box=200.0)
    cfg = sde.SimConfig(n_paths=100_000, n_steps=4, t_b=0.8, mu2=1.5, variant="original", seed=3)
    ens = sde.simulate_paths(m, cfg)
    x = ens.Q[:, :2]
    se = x.std(0) / np.sqrt(len(x))
    assert np.all(np.abs(x.mean(0)) < 3 * se)
    cov = np.cov(x.T)
    # standard error of a sample variance is var * sqrt(2/n)
    target = 1.5 * 0.8
    assert np.all(np.abs(np.diag(cov) - target) < 3 * target * np.sqrt(2 / len(x)))
    assert abs(cov[0, 1]) < 3 * target / np.sqrt(len(x))


def test_hopf_total_space_harmonic_decay():
    # z1 is a degree-1 harmonic on S^3: E[z1(eta_t)] = exp(-3 t / 2) z1(eta_0)
    m = models.Hopf()
    cfg = sde.SimConfig(n_paths=20_000, n_steps=100, t_b=0.5, variant="original", seed=4,
                        q_start=(0.3, -0.2, 0.4))
    ens = sde.simulate_paths(m, cfg)
    z = np.asarray(m.embed(jnp.asarray(ens.chart), jnp.asarray(ens.Q)))[:, 0]
    z0 = np.asarray(m.embed(0, jnp.asarray(cfg.q_start)))[0]
    se = np.abs(z.std()) / np.sqrt(len(z))
    assert abs(z.mean() - np.exp(-0.75) * z0) < 3 * se + 0.01


@pytest.mark.parametrize("variant", ["sigma_full", "sigma_reduced"])
def test_hopf_base_height_decay(variant):
    # the S^2 height is an l = 1 harmonic of the base sphere of radius 1/2
    m = models.Hopf()
    cfg = sde.SimConfig(n_paths=20_000, n_steps=100, t_b=0.25, variant=variant, seed=5,
                        q_start=(0.5, 0.1, 0.0))
    ens = sde.simulate_paths(m, cfg)
    hgt, _ = _height(m, ens)
    h0 = (1 - 0.26) / 1.26
    se = hgt.std() / np.sqrt(len(hgt))
    assert abs(hgt.mean() - np.exp(-4 * 0.25) * h0) < 3 * se + 0.01
    assert ens.max_constraint < 1e-10


def test_paths_independent_of_batch_size():
    m = models.Hopf()
    small = sde.simulate_paths(m, sde.SimConfig(n_paths=50, n_steps=10, seed=9))
    big = sde.simulate_paths(m, sde.SimConfig(n_paths=120, n_steps=10, seed=9))
    assert np.array_equal(small.Q, big.Q[:50])


def test_thread_count_does_not_change_results(monkeypatch):
    m = models.FlatTrivial()
    cfg = sde.SimConfig(n_paths=sde.CHUNK + 100, n_steps=3, seed=2, variant="original")
    monkeypatch.setenv("BUNDLEDIFF_THREADS", "1")
    a = sde.simulate_paths(m, cfg)
    monkeypatch.setenv("BUNDLEDIFF_THREADS", "3")
    b = sde.simulate_paths(m, cfg)
    assert np.array_equal(a.Q, b.Q)


def test_split_interval_is_exact():
    m = models.Hopf()
    cfg = sde.SimConfig(n_paths=40, n_steps=10, seed=1)
    whole = sde.simulate_paths(m, cfg)
    half = sde.simulate_paths(m, cfg, n_steps=5)
    rest = sde.simulate_paths(m, cfg, start_state=sde.ensemble_state(half), step_offset=5, n_steps=5)
    assert np.allclose(whole.Q, rest.Q, atol=1e-13)


def test_noise_stream_matches_batched_increments():
    ns = sde.NoiseStream(seed=5, path_index=7)
    a = ns.next(3, 0.01)
    b = ns.next(3, 0.01)
    batch0 = sde.increments(5, 0, np.arange(10), 3, 0.01)
    batch1 = sde.increments(5, 1, np.arange(10), 3, 0.01)
    assert np.allclose(a, batch0[7]) and np.allclose(b, batch1[7])
    assert not np.allclose(a, b)


def test_single_steps_consistent_with_kernel():
    m = models.Warped(gauge_tilt=0.2)
    cfg = sde.SimConfig(n_paths=3, n_steps=1, t_b=0.01, seed=8, q_start=(0.2, 0.3, 0.0))
    ens = sde.simulate_paths(m, cfg)
    c0, q0 = sde.start_point(m, cfg)
    dW = sde.increments(8, 0, np.arange(3), 3, 0.01)
    for i in range(3):
        c, q, _ = sde.step_sigma(m, q0, 0.01, np.asarray(dW[i]), chart=c0)
        assert np.allclose(q, ens.Q[i], atol=1e-12)


def test_step_group_and_original():
    m = models.Hopf()
    q = np.asarray(m.project(jnp.asarray([0.2, 0.1, 0.0]), 0)[0])
    a = sde.step_group(m, q, np.array([0.3]), 0.01, np.array([0.1, -0.2, 0.05]))
    assert a.shape == (1,) and np.all(np.isfinite(a))
    assert np.allclose(sde.step_group(m, q, np.array([0.3]), 0.0, np.zeros(3)), [0.3])
    c, q2 = sde.step_original(m, np.array([0.2, 0.1, 0.3]), 0.01, np.array([0.1, 0.0, -0.1]))
    assert q2.shape == (3,)
    with pytest.raises(ValueError):
        sde.step_original(m, q, -0.1, np.zeros(3))


def test_chart_switching_keeps_law():
    # a long run on Hopf must cross charts and still sit on S^3
    m = models.Hopf()
    ens = sde.simulate_paths(m, sde.SimConfig(n_paths=500, n_steps=200, t_b=2.0, seed=3,
                                             variant="original"))
    assert ens.n_chart_switches > 0
    z = np.asarray(m.embed(jnp.asarray(ens.chart), jnp.asarray(ens.Q)))
    assert np.allclose(np.linalg.norm(z, axis=1), 1.0)


@pytest.mark.parametrize("kw", [dict(t_b=0.0), dict(n_steps=0), dict(kappa=-1.0),
                                dict(variant="bogus"), dict(derivatives="spectral")])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        sde.SimConfig(**kw)
