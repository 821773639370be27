import csv

import numpy as np
import pytest
from scipy.stats import gaussian_kde, norm

from stochinterp.errors import ConfigError, ZeroDensity
from stochinterp.likelihood import gaussian_kl
from stochinterp.metrics import (LOG_FLOOR, KdeModel, checkerboard_cell_counts, checkerboard_logp,
                                 checkerboard_sampler, grid_2d, kde_kl, kde_mass_2d, kl_control_variate,
                                 logdensity_error_stats, project, write_grid_csv)


def test_kde_1d_matches_scipy():
    x = np.random.default_rng(0).standard_normal(500) * 1.7 + 0.3
    kde = KdeModel.fit(x)
    q = np.linspace(-5, 5, 41)
    assert np.allclose(kde.log_pdf(q[:, None]), np.log(gaussian_kde(x)(q)), atol=1e-10)


def test_kde_2d_matches_product_kernel_sum():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((300, 2)) * [1.0, 0.4]
    kde = KdeModel.fit(x)
    h = 300 ** (-1 / 6) * x.std(0, ddof=1)
    q = rng.standard_normal((15, 2))
    want = np.log(np.mean(norm.pdf((q[:, None, 0] - x[None, :, 0]) / h[0]) / h[0]
                          * norm.pdf((q[:, None, 1] - x[None, :, 1]) / h[1]) / h[1], axis=1))
    assert np.allclose(kde(q), want, atol=1e-10)


def test_kde_chunking_is_exact(monkeypatch):
    import stochinterp.metrics as m
    x = np.random.default_rng(2).standard_normal((400, 2))
    q = np.random.default_rng(3).standard_normal((90, 2))
    full = KdeModel.fit(x).log_pdf(q)
    monkeypatch.setattr(m, "KDE_BLOCK", 1000)
    assert np.allclose(KdeModel.fit(x).log_pdf(q), full, atol=1e-12)


def test_kde_normalization():
    x = np.random.default_rng(4).standard_normal((2000, 2)) * 0.6
    assert kde_mass_2d(KdeModel.fit(x), -5, 5, n=300) == pytest.approx(1.0, abs=1e-3)
    assert kde_mass_2d(KdeModel.fit(x[:, 0]), -5, 5) == pytest.approx(1.0, abs=1e-4)


def test_kde_errors():
    with pytest.raises(ConfigError):
        KdeModel.fit(np.zeros((1, 2)))
    with pytest.raises(ConfigError):
        KdeModel.fit(np.zeros((10, 2)))
    with pytest.raises(ConfigError):
        KdeModel.fit(np.random.default_rng(0).standard_normal((10, 2))).log_pdf(np.zeros((1, 3)))


def test_control_variate_kl_matches_gaussian_kl():
    p, q = norm(0.0, 1.0), norm(0.5, 1.2)
    x = np.random.default_rng(5).standard_normal((200_000, 1))
    est = kl_control_variate(lambda y: p.logpdf(y[:, 0]), lambda y: q.logpdf(y[:, 0]), x)
    want = gaussian_kl([0.0], [[1.0]], [0.5], [[1.44]])
    assert abs(est.value - want) < 4 * est.stderr
    assert est.n == 200_000


def test_control_variate_summands_are_nonnegative():
    x = np.random.default_rng(6).standard_normal((1000, 1))
    est = kl_control_variate(lambda y: norm.logpdf(y[:, 0]), lambda y: norm.logpdf(y[:, 0], 3.0), x[:5])
    assert est.value >= 0
    same = kl_control_variate(lambda y: norm.logpdf(y[:, 0]), lambda y: norm.logpdf(y[:, 0]), x)
    assert same.value == 0.0


def test_strict_mode_raises_on_zero_density():
    x = np.array([[0.0], [10.0]])
    floor = lambda y: np.where(y[:, 0] > 5, -1e4, 0.0)
    with pytest.raises(ZeroDensity):
        kl_control_variate(lambda y: np.zeros(len(y)), floor, x, strict=True)
    assert np.isfinite(kl_control_variate(lambda y: np.zeros(len(y)), floor, x).value)


def test_kde_kl_small_for_same_law_and_projection():
    rng = np.random.default_rng(7)
    a, b, e = (rng.standard_normal((4000, 3)) for _ in range(3))
    assert abs(kde_kl(a, b, e).value) < 0.02
    shifted = kde_kl(a, b + [1.0, 0.0, 0.0], e).value
    assert shifted == pytest.approx(0.5, abs=0.12)
    assert project(a, (0, 2)).shape == (4000, 2)
    assert project(a[:, :1], (0, 1)).shape == (4000, 1)


def test_checkerboard():
    x = checkerboard_sampler(40_000, seed=1)
    assert x.min() >= -2 and x.max() < 2
    assert np.all(checkerboard_logp(x) == -np.log(8.0))
    counts = checkerboard_cell_counts(x)
    black = (np.add.outer(np.arange(4), np.arange(4)) % 2) == 0
    assert np.all(counts[~black] == 0)
    assert np.all(np.abs(counts[black] - 5000) < 5 * np.sqrt(5000))
    assert checkerboard_logp(np.array([[0.5, -0.5], [3.0, 0.0]])).tolist() == [LOG_FLOOR, LOG_FLOOR]
    assert np.array_equal(checkerboard_sampler(10, seed=1), x[:10])


def test_logdensity_error_stats():
    pts = np.zeros((4, 1))
    mean, var = logdensity_error_stats(np.array([1.0, -1.0, 2.0, 0.0]), np.zeros(4), pts)
    assert mean == pytest.approx(1.0) and var == pytest.approx(0.5)


def test_grid_csv(tmp_path):
    g, pts = grid_2d(-1, 1, 3)
    assert pts.shape == (9, 2) and list(g) == [-1.0, 0.0, 1.0]
    write_grid_csv(tmp_path / "g" / "v.csv", pts, np.arange(9.0))
    rows = list(csv.reader(open(tmp_path / "g" / "v.csv")))
    assert rows[0] == ["x", "y", "value"] and float(rows[-1][2]) == 8.0
