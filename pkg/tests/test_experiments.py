import pytest

from stochinterp.experiments import (WORKERS_ENV, KLCurveConfig, gmm_kl_curve, gmm_oracle_check, parallel_map,
                                     worker_count)


def _square(v):
    return v * v


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert worker_count() == 3
    monkeypatch.delenv(WORKERS_ENV)
    assert worker_count() >= 1


@pytest.mark.parametrize("workers", ["1", "2"])
def test_parallel_map_preserves_order(monkeypatch, workers):
    monkeypatch.setenv(WORKERS_ENV, workers)
    assert parallel_map(_square, range(6)) == [0, 1, 4, 9, 16, 25]


def test_small_oracle_check():
    checks = gmm_oracle_check(n_mixtures=3, n_points=30, seed=5)
    assert [c.d for c in checks] == [1, 2, 3]
    for c in checks:
        assert c.te_residual <= 1e-5 * c.max_rho
        assert max(c.fpe_residual.values()) <= 1e-5 * c.max_rho
        assert c.score_error <= 1e-6 and c.decomposition_error <= 1e-10


def test_kl_curve_pairs_serial_and_parallel_agree(monkeypatch):
    cfg = KLCurveConfig(d=2, n_modes=2, n_train=4000, features=64, n_samples=300, steps=20, eps_grid=(0.0, 1.0))
    monkeypatch.setenv(WORKERS_ENV, "1")
    serial = gmm_kl_curve(cfg)
    monkeypatch.setenv(WORKERS_ENV, "2")
    par = gmm_kl_curve(cfg)
    assert [r["pair"] for r in serial] == ["b,s", "b,s", "b,eta", "b,eta", "v,s", "v,s", "v,eta", "v,eta"]
    assert [r["kl"] for r in serial] == [r["kl"] for r in par]
    assert all(r["kl"] >= 0 for r in serial)
