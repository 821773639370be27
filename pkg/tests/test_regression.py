import numpy as np
import pytest

from stochinterp import GaussianMixture, make_schedule
from stochinterp import gmm_oracle as go
from stochinterp.errors import ConfigError, IllConditioned, SingularGamma
from stochinterp.interpolant import Coupling, draw_batch
from stochinterp.regression import (FeatureMap, FeatureModel, Objective, as_objective, empirical_loss, fit,
                                    fit_many, fit_score_matching, fit_sgd, load_model, median_bandwidth,
                                    regression_target, save_model, training_window)

G0 = GaussianMixture.create([1.0], [[-1.0]], [[[0.5]]])
G1 = GaussianMixture.create([1.0], [[2.0]], [[[1.5]]])
S = make_schedule("linear", "bb:a=1")


def _draws(n, seed=0, lo=1e-4, hi=1 - 1e-4, antithetic=True):
    return draw_batch(S, Coupling.independent(G0, G1), n, antithetic=antithetic, seed=seed, t_lo=lo, t_hi=hi)


def _fd_div(model, t, x, h=1e-5):
    out = np.zeros(x.shape[0])
    for i in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[i] = h
        out += (model(t, x + e)[:, i] - model(t, x - e)[:, i]) / (2 * h)
    return out


@pytest.mark.parametrize("kind", ["rff", "rbf"])
def test_divergence_matches_finite_differences(kind):
    d = 3
    if kind == "rff":
        fm = FeatureMap.random_fourier(d, 64, 1.3, tau_scale=2.0, seed=1, include_linear=True)
    else:
        fm = FeatureMap.rbf_grid(d, 3, -1.0, 1.0, 0.8, tau_scale=1.5, include_linear=True)
    W = np.random.default_rng(2).standard_normal((d, fm.n_features))
    model = FeatureModel(fm, W, 0.0, Objective.B)
    rng = np.random.default_rng(3)
    t, x = rng.uniform(0, 1, 20), rng.standard_normal((20, d))
    assert np.allclose(model.divergence(t, x), _fd_div(model, t, x), atol=1e-6)


@pytest.mark.parametrize("kind", ["rff", "rbf"])
def test_mean_x_gradient_matches_finite_differences(kind):
    d = 2
    fm = (FeatureMap.random_fourier(d, 16, 1.0, seed=4, include_linear=True) if kind == "rff"
          else FeatureMap.rbf_grid(d, 3, -1.0, 1.0, 0.7, include_linear=True))
    rng = np.random.default_rng(5)
    t, x = rng.uniform(0, 1, 30), rng.standard_normal((30, d))
    h = 1e-6
    fd = np.stack([((fm.features(t, x + h * e) - fm.features(t, x - h * e)) / (2 * h)).mean(0) for e in np.eye(d)])
    assert np.allclose(fm.mean_x_gradient(t, x), fd, atol=1e-7)


def test_ridge_solution_matches_normal_equations():
    dr = _draws(4000)
    fm = FeatureMap.random_fourier(1, 40, 1.0, seed=6, include_linear=True)
    lam = 1e-3
    m = fit("EtaZ", dr, S, fm, lam)
    P = fm.features(dr.t, dr.xt)
    n = len(dr)
    W = np.linalg.solve(P.T @ P / n + lam * np.eye(P.shape[1]), P.T @ dr.z / n).T
    assert np.allclose(m.weights, W, rtol=1e-8, atol=1e-10)


def test_fit_many_equals_separate_fits():
    dr = _draws(6000, seed=1, lo=0.0, hi=1.0)
    fm = FeatureMap.random_fourier(1, 30, 1.0, seed=7, include_linear=True)
    many = fit_many(["EtaZ", "Eta0", "Eta1"], dr, S, fm, 1e-4)
    for o in (Objective.ETA_Z, Objective.ETA_0, Objective.ETA_1):
        assert np.allclose(many[o].weights, fit(o, dr, S, fm, 1e-4).weights, atol=1e-10)


def test_learned_fields_approach_the_oracle():
    dr = _draws(100_000, seed=2)
    fm = FeatureMap.random_fourier(1, 200, 0.8, tau_scale=3.0, seed=8, include_linear=True)
    m = fit_many(["B", "EtaZ"], dr, S, fm, 1e-6)
    ev = _draws(5000, seed=9, antithetic=False)
    f = go.evaluate(G0, G1, S, ev.t, ev.xt)
    err_b = np.sqrt(np.mean((m[Objective.B](ev.t, ev.xt) - f.velocity) ** 2))
    err_e = np.sqrt(np.mean((m[Objective.ETA_Z](ev.t, ev.xt) - f.etaz) ** 2))
    assert err_b < 0.1 and err_e < 0.05


def test_loss_at_the_oracle_is_minus_half_the_norm():
    dr = _draws(50_000, seed=3)
    f = go.evaluate(G0, G1, S, dr.t, dr.xt)
    rep = empirical_loss("B", lambda t, x: go.velocity_b(G0, G1, S, t, x), dr, S)
    assert rep.empirical_value == pytest.approx(-0.5 * np.mean(np.sum(f.velocity ** 2, 1)), abs=4 * rep.std_error)
    worse = empirical_loss("B", lambda t, x: go.velocity_b(G0, G1, S, t, x) + 0.3, dr, S)
    assert worse.empirical_value > rep.empirical_value


def test_score_matching_and_regression_agree():
    dr = _draws(60_000, seed=4, lo=0.05, hi=0.95)
    fm = FeatureMap.random_fourier(1, 100, 0.8, tau_scale=2.0, seed=9, include_linear=True)
    reg = fit("S", dr, S, fm, 1e-5)
    sm = fit_score_matching(dr, S, fm, 1e-5)
    ev = _draws(4000, seed=10, lo=0.05, hi=0.95, antithetic=False)
    s_true = go.score_s(G0, G1, S, ev.t, ev.xt)
    for m in (reg, sm):
        assert np.sqrt(np.mean((m(ev.t, ev.xt) - s_true) ** 2)) < 0.1


def test_sgd_decreases_the_loss():
    dr = _draws(4000, seed=5, lo=0.0, hi=1.0)
    fm = FeatureMap.random_fourier(1, 20, 1.0, seed=1, include_linear=True)
    m = fit_sgd("EtaZ", dr, S, fm, lr=0.05, steps=300)
    zero = FeatureModel(fm, np.zeros_like(m.weights), 0.0, Objective.ETA_Z)
    assert empirical_loss("EtaZ", m, dr, S).empirical_value < empirical_loss("EtaZ", zero, dr, S).empirical_value


def test_targets_and_windows():
    assert training_window("EtaZ", S) == (0.0, 1.0)
    assert training_window("S", S) == (1e-4, 1 - 1e-4)
    assert training_window("B", S) == (1e-4, 1 - 1e-4)
    assert training_window("B", make_schedule("linear", "quad")) == (0.0, 1.0)
    with pytest.raises(SingularGamma):
        regression_target("B", draw_batch(S, Coupling.independent(G0, G1), 10, time_mode=0.0), S)
    with pytest.raises(ConfigError):
        regression_target("S", _draws(10, antithetic=False), S)
    dr = _draws(10)
    assert np.array_equal(regression_target("Eta1", dr, S), dr.x1)
    with pytest.raises(ConfigError):
        as_objective("W")


def test_ill_conditioned_gram_raises():
    dr = _draws(2, lo=0.5, hi=0.5)
    fm = FeatureMap.random_fourier(1, 50, 1.0, seed=0)
    with pytest.raises(IllConditioned):
        fit("EtaZ", dr, S, fm, 0.0)


@pytest.mark.parametrize("kind", ["rff", "rbf"])
def test_model_round_trip(tmp_path, kind):
    fm = (FeatureMap.random_fourier(2, 12, 0.5, tau_scale=2.0, seed=11, include_linear=True) if kind == "rff"
          else FeatureMap.rbf_grid(2, 3, -1.0, 1.0, 0.5))
    W = np.random.default_rng(0).standard_normal((2, fm.n_features))
    m = FeatureModel(fm, W, 1e-3, Objective.V, {"note": "x"})
    save_model(tmp_path / "m.bin", m)
    back = load_model(tmp_path / "m.bin")
    x = np.random.default_rng(1).standard_normal((5, 2))
    assert back.target_tag is Objective.V and back.meta == {"note": "x"}
    assert np.array_equal(back(0.3, x), m(0.3, x))
    (tmp_path / "bad.bin").write_bytes(b"nope")
    with pytest.raises(ConfigError):
        load_model(tmp_path / "bad.bin")


def test_median_bandwidth_scale():
    x = np.random.default_rng(0).standard_normal((1000, 2)) * 3.0
    # median distance between iid N(0, 9 I_2) points is 3 sqrt(2 ln 4)
    assert median_bandwidth(x) == pytest.approx(3 * np.sqrt(2 * np.log(4)), rel=0.05)
