import numpy as np

from stochinterp import GaussianMixture, make_schedule
from stochinterp import gmm_oracle as go
from stochinterp.fields import (DriftField, combine, fd_divergence, gmm_field, gmm_fields, gmm_forward_drift,
                                learned_field, learned_fields, one_sided_velocity_from_denoiser, scaled,
                                sbdm_velocity, score_from_denoiser, time_clipped, velocity_from_v_and_denoiser,
                                velocity_from_v_and_score)
from stochinterp.regression import FeatureMap, FeatureModel, Objective

M0 = GaussianMixture.create([0.4, 0.6], [[-1.0, 0.0], [1.0, 0.5]], [np.eye(2) * 0.3, np.eye(2) * 0.5])
M1 = GaussianMixture.create([0.5, 0.5], [[2.0, 1.0], [-2.0, 0.0]], [np.eye(2) * 0.4, [[0.6, 0.1], [0.1, 0.3]]])
S = make_schedule("trig", "bb:a=1")
X = np.random.default_rng(0).standard_normal((25, 2))
T = np.random.default_rng(1).uniform(0.05, 0.95, 25)


def test_shared_cache_fields_match_direct_evaluation():
    b, s, ez, v = gmm_fields(M0, M1, S, ("b", "s", "etaz", "v"), divergence=True)
    f = go.evaluate(M0, M1, S, T, X)
    for fld, want in [(b, f.velocity), (s, f.score), (ez, f.etaz), (v, f.v)]:
        assert np.allclose(fld(T, X), want, atol=1e-13)
    assert np.allclose(b.divergence(T, X), f.div_b, atol=1e-12)
    assert np.allclose(s.divergence(T, X), f.div_s, atol=1e-12)
    assert np.allclose(b.divergence(T, X), fd_divergence(b.fn, T, X), atol=1e-5)


def test_cache_is_not_stale_for_new_points():
    b, = gmm_fields(M0, M1, S, ("b",))
    first = b(0.3, X)
    y = X + 0.1
    assert np.allclose(b(0.3, y), go.velocity_b(M0, M1, S, 0.3, y))
    assert np.allclose(b(0.3, X), first)


def test_score_and_velocity_assembly_routes():
    f = go.evaluate(M0, M1, S, T, X)
    ez, v, s = gmm_fields(M0, M1, S, ("etaz", "v", "s"))
    assert np.allclose(score_from_denoiser(ez, S)(T, X), f.score, atol=1e-10)
    assert np.allclose(velocity_from_v_and_score(v, s, S)(T, X), f.velocity, atol=1e-10)
    assert np.allclose(velocity_from_v_and_denoiser(v, ez, S)(T, X), f.velocity, atol=1e-10)


def test_forward_drift_and_combinators():
    eps = 0.7
    bf = gmm_forward_drift(M0, M1, S, eps)
    f = go.evaluate(M0, M1, S, T, X)
    assert np.allclose(bf(T, X), f.velocity + eps * f.score)
    b, s = gmm_fields(M0, M1, S, divergence=True)
    c = combine(b, s, lambda t: 2 * t)
    assert np.allclose(c(T, X), f.velocity + 2 * T[:, None] * f.score)
    assert np.allclose(c.divergence(T, X), f.div_b + 2 * T * f.div_s)
    assert np.allclose(scaled(s, -1.0)(T, X), -f.score)


def test_one_sided_velocity_from_denoiser():
    one = make_schedule("linear")
    ez = gmm_field(None, M1, one, "etaz")
    u = one_sided_velocity_from_denoiser(ez, one, M1.mean())
    for t in (0.0, 0.3, 0.9):
        assert np.allclose(u(t, X), go.velocity_b(None, M1, one, t, X), atol=1e-8)


def test_sbdm_velocity_finite_at_one():
    sb = make_schedule("sbdm-vp")
    s, e1 = gmm_fields(None, M1, sb, ("s", "eta1"))
    u = sbdm_velocity(s, e1)
    assert np.all(np.isfinite(u(1.0, X)))
    assert np.allclose(u(0.5, X), go.velocity_b(None, M1, sb, 0.5, X), atol=1e-10)


def test_learned_fields_share_features():
    fm = FeatureMap.random_fourier(2, 30, 1.0, seed=2, include_linear=True)
    rng = np.random.default_rng(3)
    m1 = FeatureModel(fm, rng.standard_normal((2, fm.n_features)), 0.0, Objective.B)
    m2 = FeatureModel(fm, rng.standard_normal((2, fm.n_features)), 0.0, Objective.ETA_Z)
    f1, f2 = learned_fields(m1, m2)
    assert np.allclose(f1(T, X), m1(T, X)) and np.allclose(f2(T, X), m2(T, X))
    assert np.allclose(f2(T, X + 1), m2(T, X + 1))
    lf = learned_field(m1)
    assert np.allclose(lf.divergence(T, X), fd_divergence(lf.fn, T, X), atol=1e-6)


def test_time_clipped():
    one = make_schedule("linear")
    s = score_from_denoiser(gmm_field(None, M1, one, "etaz"), one)
    c = time_clipped(s, 1e-3, 1 - 1e-3)
    assert np.all(np.isfinite(c(1.0, X)))
    assert np.allclose(c(1.0, X), s(1 - 1e-3, X))
    assert np.allclose(c(0.4, X), s(0.4, X))


def test_hutchinson_unbiased_and_fixed_per_row():
    from stochinterp.fields import hutchinson_divergence, rademacher_probes
    A = np.array([[1.0, 2.0, 0.0], [0.5, -3.0, 1.0], [0.0, 0.3, 0.7]])
    fn = lambda t, x: x @ A.T
    x = np.random.default_rng(0).normal(size=(4000, 3))
    est = hutchinson_divergence(fn, 0.5, x, probes=8)
    # each row is unbiased for tr A; the spread over rows is the probe noise
    assert abs(est.mean() - np.trace(A)) < 4 * est.std() / np.sqrt(est.size)
    assert est.std() > 0
    p1 = rademacher_probes(10, 3, 8, seed=1)
    p2 = rademacher_probes(20, 3, 8, seed=1)
    assert np.array_equal(p1, p2[:, :10])
    assert set(np.unique(p1)) == {-1.0, 1.0}


def test_hutchinson_exact_for_diagonal_field():
    from stochinterp.fields import with_hutchinson
    f = DriftField(lambda t, x: -2.0 * x, None, "b", "lin")
    h = with_hutchinson(f, probes=3)
    x = np.ones((5, 2))
    assert np.allclose(h.divergence(0.1, x), -4.0, atol=1e-8)
    assert "hutchinson" in h.name
