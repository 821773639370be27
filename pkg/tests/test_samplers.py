import numpy as np
import pytest

from stochinterp import GaussianMixture, make_schedule
from stochinterp.errors import ConfigError, DivideByZeroBeta, MissingScore
from stochinterp.fields import gmm_field, gmm_fields
from stochinterp.samplers import (EpsSchedule, denoiser_iterate, final_denoise, integrate_ode, integrate_sde,
                                  sample_point_mass, sde_run, sure_jump)

G0 = GaussianMixture.create([1.0], [[-1.0]], [[[0.5]]])
G1 = GaussianMixture.create([1.0], [[2.0]], [[[1.5]]])
S = make_schedule("linear", "bb:a=1")


@pytest.mark.parametrize("method", ["em", "heun"])
def test_ou_moments(method):
    # dX = -X dt + sqrt(2) dW from x = 2: mean 2 e^-1, variance 1 - e^-2 at t = 1
    n = 100_000
    _, states, _ = sde_run(lambda t, x: -x, lambda t: 1.0, np.full((n, 1), 2.0), 0.0, 1.0, 200, method, 3,
                           np.arange(n, dtype=np.uint64))
    x = states[-1][:, 0]
    var = 1 - np.exp(-2)
    assert abs(x.mean() - 2 * np.exp(-1)) < 3 * np.sqrt(var / n) + 0.005
    assert abs(x.var() - var) < 0.015


def test_sde_paths_do_not_depend_on_batching():
    b, s = gmm_fields(G0, G1, S)
    x = G0.sample(50, seed=1)
    whole = integrate_sde(b, s, 0.7, x, steps=30, seed=4).endpoint
    part = integrate_sde(b, s, 0.7, x[20:], steps=30, seed=4, stream_ids=np.arange(20, 50)).endpoint
    assert np.array_equal(whole[20:], part)


def test_forward_and_backward_sde_transport_between_gaussians():
    b, s = gmm_fields(G0, G1, S)
    n = 40_000
    fwd = integrate_sde(b, s, 1.0, G0.sample(n, seed=1), steps=400, seed=2).endpoint[:, 0]
    assert abs(fwd.mean() - 2.0) < 4 * np.sqrt(1.5 / n) + 0.01
    assert abs(fwd.var() - 1.5) < 0.05
    bwd = integrate_sde(b, s, 1.0, G1.sample(n, seed=3), direction="backward", steps=400, seed=4)
    x = bwd.endpoint[:, 0]
    assert bwd.times[0] == 1.0 and bwd.times[-1] == 0.0
    assert abs(x.mean() + 1.0) < 4 * np.sqrt(0.5 / n) + 0.01
    assert abs(x.var() - 0.5) < 0.03


def test_ode_transport_is_exact_up_to_solver_error():
    b = gmm_field(G0, G1, S, "b")
    z = np.linspace(-2, 2, 9)[:, None]
    x0 = -1.0 + np.sqrt(0.5) * z
    x1 = integrate_ode(b, x0, method="dopri", rtol=1e-9, atol=1e-11).endpoint
    # 1D monotone transport map between the Gaussians
    assert np.allclose(x1, 2.0 + np.sqrt(1.5) * z, atol=1e-6)


def test_missing_score_and_bad_direction():
    b = gmm_field(G0, G1, S, "b")
    with pytest.raises(MissingScore):
        integrate_sde(b, None, 0.5, np.zeros((2, 1)))
    with pytest.raises(ConfigError):
        integrate_sde(b, b, 0.5, np.zeros((2, 1)), direction="sideways")
    with pytest.raises(ConfigError):
        sde_run(lambda t, x: x, lambda t: 1.0, np.zeros((2, 1)), 0, 1, 5, "milstein", 0, np.arange(2))


def test_eps_schedules():
    assert EpsSchedule.parse(0.5)(0.3) == 0.5
    r = EpsSchedule.parse("ramp:2,0.1,0.8")
    assert [r(t) for t in (0.0, 0.05, 0.5, 0.9, 1.0)] == pytest.approx([0.0, 1.0, 2.0, 1.0, 0.0])
    one = make_schedule("linear")
    a = EpsSchedule.parse("alpha:2", one)
    assert a(0.25) == pytest.approx(1.5)
    assert EpsSchedule.parse("0").is_zero
    for bad in ("-1", "ramp:1,0.9,0.2", "fast"):
        with pytest.raises(ConfigError):
            EpsSchedule.parse(bad, one)
    with pytest.raises(ConfigError):
        EpsSchedule.parse("alpha:1")


def test_sure_jump_and_final_denoise():
    one = make_schedule("linear")
    tgt = GaussianMixture.create([1.0], [[1.5, -0.5]], [[[0.6, 0.2], [0.2, 0.4]]])
    ez, e1 = gmm_fields(None, tgt, one, ("etaz", "eta1"))
    x = np.array([[0.3, 0.1], [1.0, -1.0]])
    assert np.allclose(sure_jump(x, 0.6, 0.6, ez, one), x)
    assert np.allclose(final_denoise(x, 0.6, one, eta_z=ez), e1(0.6, x))
    assert np.allclose(final_denoise(x, 0.6, one, eta1=e1), e1(0.6, x))
    with pytest.raises(ConfigError):
        final_denoise(x, 0.0, one, eta_z=ez)
    with pytest.raises(ConfigError):
        final_denoise(x, 0.5, S)
    with pytest.raises(DivideByZeroBeta):
        sure_jump(x, 0.0, 0.5, ez, one)
    with pytest.raises(ConfigError):
        denoiser_iterate(ez, S, x, 4)


def test_point_mass_sampler_argument_checks():
    with pytest.raises(ConfigError):
        sample_point_mass(np.zeros(1), G1, 0.0, 10)
    x = sample_point_mass(np.zeros(1), G1, 1.0, 20_000, steps=200, seed=1)
    assert abs(x.mean() - 2.0) < 0.05 and abs(x.var() - 1.5) < 0.1
