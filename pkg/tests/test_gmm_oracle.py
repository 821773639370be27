import numpy as np
import pytest
from scipy.stats import multivariate_normal

from stochinterp import GaussianMixture, make_schedule
from stochinterp import gmm_oracle as go
from stochinterp.schedules import time_reversed
from stochinterp.experiments import ORACLE_SCHEDULES, oracle_pde_check

G0 = GaussianMixture.standard_normal(2)
G1 = GaussianMixture.create([1.0], [[3.0, -1.0]], [[[1.0, 0.3], [0.3, 0.5]]])
M0 = GaussianMixture.create([0.4, 0.6], [[-1.0], [1.0]], [[[0.25]], [[0.25]]])
M1 = GaussianMixture.create([0.3, 0.4, 0.3], [[-2.0], [0.0], [2.0]], [[[0.25]], [[0.25]], [[0.25]]])


def test_frozen_gaussian_pair_values():
    # frozen from the joint-Gaussian regression formulas at t = 0.3, x = (0.4, -0.2)
    f = go.evaluate(G0, G1, make_schedule("linear", "bb:a=1"), 0.3, np.array([[0.4, -0.2]]))
    assert f.log_density[0] == pytest.approx(-1.7396510951040274, abs=1e-12)
    assert np.allclose(f.score[0], [0.63828955, -0.15736083], atol=1e-8)
    assert np.allclose(f.velocity[0], [3.14182038, -1.11252235], atol=1e-8)
    assert np.allclose(f.etaz[0], [-0.29250102, 0.07211179], atol=1e-8)
    assert np.allclose(f.eta0[0], [-0.44680268, 0.11015258], atol=1e-8)
    assert np.allclose(f.eta1[0], [2.82267561, -1.03384193], atol=1e-8)


def test_frozen_mixture_values():
    # frozen from per-component posterior weights computed with scipy at t = 0.6, x = 0.25
    f = go.evaluate(M0, M1, make_schedule("trig", "quad"), 0.6, np.array([[0.25]]))
    assert f.log_density[0] == pytest.approx(-1.4732589216459726, abs=1e-12)
    assert f.velocity[0, 0] == pytest.approx(-0.23502826030461027, abs=1e-12)
    assert f.score[0, 0] == pytest.approx(0.46599468843512176, abs=1e-12)


def test_density_matches_scipy_gaussian():
    s = make_schedule("trig", "bb:a=1")
    x = np.random.default_rng(1).standard_normal((20, 2)) + [1, 0]
    t = 0.45
    a, b, g = (float(f(np.array(t))) for f in (s.alpha, s.beta, s.gamma))
    cov = a * a * np.eye(2) + b * b * G1.covs[0] + g * g * np.eye(2)
    want = multivariate_normal(b * G1.means[0], cov).logpdf(x)
    assert np.allclose(go.log_density(G0, G1, s, t, x), want, atol=1e-12)


@pytest.mark.parametrize("name,gamma", ORACLE_SCHEDULES)
def test_pde_residuals_and_identities(name, gamma):
    r = oracle_pde_check(M0, M1, make_schedule(name, gamma), n_points=60, seed=2)
    assert r["te"] <= 1e-5 * r["max_rho"]
    assert all(v <= 1e-5 * r["max_rho"] for v in r["fpe"].values())
    assert r["score"] <= 1e-6
    assert r["decomposition"] <= 1e-10


def test_constraint_on_conditional_means():
    s = make_schedule("encdec", "sin2")
    t = np.array([0.2, 0.5, 0.8])
    x = np.array([[0.3], [-1.0], [1.7]])
    f = go.evaluate(M0, M1, s, t, x)
    recon = s.alpha(t)[:, None] * f.eta0 + s.beta(t)[:, None] * f.eta1 + s.gamma(t)[:, None] * f.etaz
    assert np.allclose(recon, x, atol=1e-12)


def test_one_sided_denoiser_uses_alpha():
    s = make_schedule("linear")
    t, x = 0.4, np.array([[0.5, 0.5]])
    f = go.evaluate(None, G1, s, t, x)
    assert np.allclose(f.etaz, -(1 - t) * f.score)
    assert np.allclose((1 - t) * f.etaz + t * f.eta1, x)


def test_endpoint_limits_are_finite():
    s = make_schedule("linear", "bb:a=1")
    x = np.array([[0.1], [1.2]])
    for t in (0.0, 1.0):
        f = go.evaluate(M0, M1, s, t, x)
        assert np.all(np.isfinite(f.velocity)) and np.all(np.isfinite(f.score))
    assert np.allclose(go.log_density(M0, M1, s, 1.0, x), M1.log_pdf(x))
    assert np.allclose(go.log_density(M0, M1, s, 0.0, x), M0.log_pdf(x))


def test_mixture_helpers(tmp_path):
    m = GaussianMixture.random(3, 2, seed=4, sigma=2.0)
    assert m.weights.sum() == pytest.approx(1.0)
    p = tmp_path / "m.json"
    m.to_json(p)
    back = GaussianMixture.from_json(p)
    assert np.allclose(back.means, m.means) and np.allclose(back.covs, m.covs)
    x = m.sample(200_000, seed=1)
    assert np.allclose(x.mean(0), m.mean(), atol=0.03)
    assert np.allclose(np.cov(x.T), m.covariance(), rtol=0.03, atol=0.03)
    h = 1e-6
    y = x[:3]
    fd = np.stack([(m.log_pdf(y + h * e) - m.log_pdf(y - h * e)) / (2 * h) for e in np.eye(2)], 1)
    assert np.allclose(m.score(y), fd, atol=1e-6)


def test_linear_sde_moments_end_at_target():
    s = make_schedule("linear", "bb:a=1")
    for eps in (0.0, 1.0, lambda t: 0.5 + t):
        M, C = go.linear_sde_moments(G0.means[0], G0.covs[0], s, eps, np.linspace(0, 1, 401),
                                     mean1=G1.means[0], cov1=G1.covs[0])
        assert np.allclose(M[-1], G1.means[0], atol=1e-6)
        assert np.allclose(C[-1], G1.covs[0], atol=1e-6)


def test_point_mass_drift_finite_on_closed_interval():
    x = np.linspace(-3, 3, 7)[:, None]
    for t in (0.0, 0.5, 1.0):
        u = go.point_mass_drift_ud(np.array([0.5]), M1, 1.0, t, x)
        assert np.all(np.isfinite(u))


@pytest.mark.parametrize("name,gamma", [("linear", "bb:a=1"), ("trig", "quad"), ("encdec", "sin2"),
                                        ("linear", "sigmoid:f=20")])
def test_swap_endpoints_with_reversed_schedule(name, gamma):
    s = make_schedule(name, gamma)
    r = time_reversed(s)
    x = np.linspace(-3, 3, 25)[:, None]
    for t in (0.1, 0.37, 0.5, 0.9):
        a = go.evaluate(M0, M1, s, t, x)
        b = go.evaluate(M1, M0, r, 1.0 - t, x)
        assert np.allclose(a.log_density, b.log_density, atol=1e-10, rtol=0)
        assert np.allclose(a.score, b.score, atol=1e-10)
        # the velocity flips sign under t -> 1 - t
        assert np.allclose(a.velocity, -b.velocity, atol=1e-9)
