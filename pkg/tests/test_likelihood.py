import json

import numpy as np
import pytest

from stochinterp import GaussianMixture, make_schedule
from stochinterp.errors import ConfigError, DegenerateWeight, MissingScore
from stochinterp.fields import gmm_field, gmm_fields
from stochinterp.likelihood import (config_hash, cross_entropy_ode, cross_entropy_sde_bound, density_feynman_kac,
                                    gaussian_kl, kl_bound, kl_bound_from_errors, log_density_ode, optimal_eps,
                                    perturbed_gaussian_kl)

G0 = GaussianMixture.create([1.0], [[0.0]], [[[1.0]]])
G1 = GaussianMixture.create([1.0], [[3.0]], [[[1.0]]])
S = make_schedule("linear", "bb:a=1")
M1 = GaussianMixture.create([0.5, 0.5], [[-1.0, 0.5], [1.5, 0.0]], [np.eye(2) * 0.4, [[0.5, 0.1], [0.1, 0.3]]])


def test_ode_log_density_both_directions():
    b = gmm_field(G0, G1, S, "b")
    x = np.array([[1.0], [3.2], [5.0]])
    fwd = log_density_ode(b, G0, x, rtol=1e-9, atol=1e-11)
    assert np.allclose(fwd.log_density, G1.log_pdf(x), atol=1e-7)
    back = log_density_ode(b, G1, x, direction="backward", rtol=1e-9, atol=1e-11)
    assert np.allclose(back.log_density, G0.log_pdf(x), atol=1e-7)
    rk = log_density_ode(b, G0, x, method="rk4", steps=200)
    assert np.allclose(rk.log_density, G1.log_pdf(x), atol=1e-6)
    with pytest.raises(ConfigError):
        log_density_ode(b, G0, x, direction="up")


def test_ode_log_density_2d_mixture():
    base = GaussianMixture.standard_normal(2)
    b = gmm_field(base, M1, S, "b")
    x = M1.sample(10, seed=1)
    r = log_density_ode(b, base, x, rtol=1e-8, atol=1e-10)
    assert np.allclose(r.log_density, M1.log_pdf(x), atol=1e-5)


@pytest.mark.parametrize("direction", ["forward", "backward"])
def test_feynman_kac_gaussian(direction):
    b, s = gmm_fields(G0, G1, S, divergence=True)
    x = np.array([[2.0], [3.0]]) if direction == "forward" else np.array([[-0.5], [0.5]])
    base = G0 if direction == "forward" else G1
    want = (G1 if direction == "forward" else G0).log_pdf(x)
    r = density_feynman_kac(b, s, 1.0, base, x, n_paths=4000, steps=100, seed=2, direction=direction)
    assert np.all(np.abs(r.log_density - want) < 4 * r.std_error + 0.01)
    assert np.all(r.ess > 10)
    recs = r.records("abc")
    assert recs[0]["method"] == f"fk:{direction}" and recs[0]["config_hash"] == "abc"
    json.dumps(recs)


def test_feynman_kac_requirements():
    b, s = gmm_fields(G0, G1, S, divergence=True)
    x = np.array([[2.0]])
    with pytest.raises(MissingScore):
        density_feynman_kac(b, None, 1.0, G0, x)
    with pytest.raises(ConfigError):
        density_feynman_kac(b, s, 0.0, G0, x)
    with pytest.raises(DegenerateWeight):
        density_feynman_kac(b, s, 1.0, G0, x, n_paths=50, steps=20, min_ess=1e6)


def test_cross_entropy_ode_and_jensen_bound():
    b, s = gmm_fields(G0, G1, S, divergence=True)
    xs = G1.sample(400, seed=3)
    h = 0.5 * np.log(2 * np.pi * np.e)  # entropy of N(3, 1)
    v, se = cross_entropy_ode(b, G0, xs)
    assert abs(v - h) < 4 * se
    bound = cross_entropy_sde_bound(b, s, 1.0, G0, xs[:100], n_paths=20, steps=60, seed=4, log_mean=True)
    assert bound.bound >= h - 4 * bound.std_error
    assert bound.log_mean <= bound.bound
    zero = cross_entropy_sde_bound(b, s, 0.0, G0, xs[:50])
    assert not zero.log_mean_biased


def test_gaussian_kl_against_direct_formula():
    rng = np.random.default_rng(0)
    A, B = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    Cp, Cq = A @ A.T + np.eye(3), B @ B.T + np.eye(3)
    mp, mq = rng.standard_normal(3), rng.standard_normal(3)
    Qi = np.linalg.inv(Cq)
    want = 0.5 * (np.trace(Qi @ Cp) + (mq - mp) @ Qi @ (mq - mp) - 3 + np.log(np.linalg.det(Cq) / np.linalg.det(Cp)))
    assert gaussian_kl(mp, Cp, mq, Cq) == pytest.approx(want, rel=1e-12)
    assert gaussian_kl(mp, Cp, mp, Cp) == pytest.approx(0.0, abs=1e-12)


def test_kl_bound_algebra():
    assert kl_bound_from_errors(0.04, 0.01, 2.0) == pytest.approx(0.04 / 4 + 2 * 0.01 / 2)
    assert kl_bound(1.02, 1.0, 0.505, 0.5, 2.0) == pytest.approx(kl_bound_from_errors(0.04, 0.01, 2.0))
    assert kl_bound_from_errors(0.1, 0.1, 0.0) == np.inf
    assert kl_bound_from_errors(0.0, 0.0, 0.0) == 0.0
    eps = np.linspace(0.01, 10, 100_000)
    vals = [kl_bound_from_errors(0.02, 0.08, e) for e in eps]
    assert eps[int(np.argmin(vals))] == pytest.approx(optimal_eps(0.01, 0.04), abs=1e-3)
    assert optimal_eps(0.01, 0.0) == np.inf
    with pytest.warns(RuntimeWarning):
        assert np.isnan(optimal_eps(0.0, 0.0))
    with pytest.warns(RuntimeWarning):
        kl_bound(0.9, 1.0, 0.5, 0.4, 1.0)


def test_perturbed_gaussian_case_quick():
    for eps in (0.5, 2.0):
        r = perturbed_gaussian_kl([-1.0], [[0.5]], [2.0], [[1.5]], S, eps, [0.2], [0.1])
        assert 0 < r.exact_kl <= r.bound
        assert r.fpe_identity == pytest.approx(r.exact_kl, abs=1e-6)


def test_config_hash_is_order_independent():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_ode_logp_hutchinson_option():
    base = GaussianMixture.standard_normal(2)
    b = gmm_field(base, M1, S, "b")
    x = np.repeat([[0.3, 0.2]], 400, axis=0)
    exact = log_density_ode(b, base, x[:1], rtol=1e-8, atol=1e-10).log_density[0]
    hut = log_density_ode(b, base, x, rtol=1e-8, atol=1e-10, divergence="hutchinson", probes=8)
    assert hut.method.endswith("hutchinson")
    # identical points with different probe rows: noisy but centred on the exact value
    lp = hut.log_density
    assert lp.std() > 0
    assert abs(lp.mean() - exact) < 4 * lp.std() / np.sqrt(lp.size) + 1e-6
    with pytest.raises(ConfigError):
        log_density_ode(b, base, x, divergence="nope")


def test_stochastic_estimators_with_hutchinson():
    base = GaussianMixture.standard_normal(2)
    b, s = gmm_fields(base, M1, S, ("b", "s"))
    x = M1.sample(20, seed=5)
    exact = cross_entropy_sde_bound(b, s, 1.0, base, x, n_paths=50, steps=50, seed=2)
    hut = cross_entropy_sde_bound(b, s, 1.0, base, x, n_paths=50, steps=50, seed=2, divergence="hutchinson")
    # same paths, only the trace differs; the bound is linear in it
    assert abs(hut.bound - exact.bound) < 4 * max(exact.std_error, hut.std_error)
    with pytest.warns(RuntimeWarning, match="biased"):
        r = density_feynman_kac(b, s, 1.0, base, x[:2], n_paths=200, steps=50, divergence="hutchinson",
                                min_ess=1)
    assert r.method.endswith("hutchinson-biased")
