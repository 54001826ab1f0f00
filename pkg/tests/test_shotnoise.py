import math

import numpy as np
import pytest
from scipy.special import sici

from excursion_clt import (GridSpec, MarkDistribution, Response, ShotNoiseModel, SimulationError,
                           UnsupportedCaseError, check_bounded_density, derive_seed, simulate_shot_noise)
from excursion_clt.shotnoise import (ShotNoisePairEvaluator, _char_exponent, marginal_samples,
                                     shot_noise_from_points, tail_probabilities)
from excursion_clt.quadrature import DEFAULT_QUAD

UNIT = ShotNoiseModel(1.0)   # unit marks, exp(-r) response, d = 2


def test_campbell_closed_forms():
    assert UNIT.mean() == pytest.approx(2 * math.pi, rel=1e-14)
    assert UNIT.variance() == pytest.approx(math.pi / 2, rel=1e-14)
    m = ShotNoiseModel(2.0, MarkDistribution("exponential", mean_=3.0), Response("exp_decay", 1.0, 2.0), dim=1)
    # 2 * 3 * int exp(-2|t|) dt = 6 ; 2 * 18 * int exp(-4|t|) dt = 18
    assert m.mean() == pytest.approx(6.0)
    assert m.variance() == pytest.approx(18.0)


def test_mark_moments():
    ln = MarkDistribution("lognormal", mu=0.2, sigma=0.5)
    x = ln.sample(np.random.default_rng(0), 400_000)
    assert x.mean() == pytest.approx(ln.mean(), rel=5e-3)
    assert (x ** 2).mean() == pytest.approx(ln.second_moment(), rel=2e-2)
    with pytest.raises(ValueError):
        MarkDistribution("constant", value=-1.0)


def test_buffer_meets_tolerance():
    r = UNIT.required_buffer(1e-6)
    assert UNIT.truncation_error(r) == pytest.approx(1e-6, rel=1e-6)
    assert UNIT.truncation_error(r * 0.9) > 1e-6
    with pytest.raises(SimulationError, match="required buffer"):
        simulate_shot_noise(ShotNoiseModel(1.0, buffer=2.0), GridSpec.square(4), 0)


def test_non_integrable_response():
    heavy = ShotNoiseModel(1.0, response=Response("capped_power", 1.0, 1.5), dim=2)
    with pytest.raises(SimulationError, match="not integrable"):
        heavy.required_buffer()


def test_empty_process():
    m = ShotNoiseModel(1e-9, dim=2, buffer=1.0)
    f = simulate_shot_noise(m, GridSpec(2, (1.0, 1.0), 0.5), 0, tol=1.0)
    assert f.model["germs"] == 0
    assert np.all(f.values == 0.0)


def test_single_forced_point():
    g = GridSpec(2, (6.0, 6.0), 0.5, (-3.0, -3.0))
    vals = shot_noise_from_points(UNIT, g, [[0.0, 0.0]], [2.0], radius=100.0)
    r = np.linalg.norm(g.points(), axis=-1)
    assert np.allclose(vals, 2 * np.exp(-r), rtol=1e-15, atol=0)


def test_lattice_sum_matches_brute_force():
    rng = np.random.default_rng(4)
    for dim, sides in ((1, (7.0,)), (2, (5.0, 4.0)), (3, (3.0, 2.5, 2.0))):
        m = ShotNoiseModel(1.0, response=Response("capped_power", 1.5, 4.0), dim=dim)
        g = GridSpec(dim, sides, 0.5)
        pts = rng.uniform(-3, 8, (25, dim))
        mk = rng.uniform(0, 2, 25)
        got = shot_noise_from_points(m, g, pts, mk, radius=3.0)
        d = np.linalg.norm(g.points()[..., None, :] - pts, axis=-1)
        ref = (mk * np.where(d <= 3.0, m.response(d), 0.0)).sum(-1)
        assert np.allclose(got, ref, atol=1e-13, rtol=0)


def test_campbell_moments_over_replications():
    g = GridSpec.square(5)
    x = np.array([simulate_shot_noise(UNIT, g, derive_seed(31, i)).values[2, 2] for i in range(200)])
    se_mean = x.std(ddof=1) / math.sqrt(len(x))
    assert abs(x.mean() - 2 * math.pi) <= 3 * se_mean
    dev2 = (x - 2 * math.pi) ** 2
    assert abs(dev2.mean() - math.pi / 2) <= 3 * dev2.std(ddof=1) / math.sqrt(len(x))


def test_marginal_sampler_moments():
    x = marginal_samples(UNIT, 100_000, 5)
    assert abs(x.mean() - 2 * math.pi) < 3 * math.sqrt(math.pi / 2 / len(x))
    assert x.var() == pytest.approx(math.pi / 2, rel=0.03)
    p, se = tail_probabilities(UNIT, (2 * math.pi,), 100_000, 5)
    assert 0.3 < p[0] < 0.7 and se[0] == pytest.approx(math.sqrt(p[0] * (1 - p[0]) / 1e5))


def test_simulation_deterministic():
    g = GridSpec.square(16)
    a = simulate_shot_noise(UNIT, g, 8)
    assert np.array_equal(a.values, simulate_shot_noise(UNIT, g, 8).values)
    assert not np.array_equal(a.values, simulate_shot_noise(UNIT, g, 9).values)


def test_char_exponent_closed_form():
    # d = 1, phi = exp(-|t|): 2 * int_0^1 (cos(s y) - 1) / y dy = 2 (Ci(s) - gamma - ln s)
    m = ShotNoiseModel(1.0, dim=1)
    for s in (0.5, 3.0, 20.0):
        ref = 2 * (sici(s)[1] - np.euler_gamma - math.log(s))
        assert _char_exponent(m, s, DEFAULT_QUAD) == pytest.approx(ref, abs=1e-8)


def test_bounded_density_cases():
    assert check_bounded_density(ShotNoiseModel(1.0, dim=1)) is True
    assert check_bounded_density(ShotNoiseModel(1.0, response=Response("capped_power", 1.0, 3.0), dim=1)) is True
    assert check_bounded_density(ShotNoiseModel(0.0, dim=1)) is False
    # |psi(s)| ~ s**(-2 lambda): not integrable for lambda <= 1/2
    assert check_bounded_density(ShotNoiseModel(0.3, dim=1)) is False
    with pytest.raises(UnsupportedCaseError):
        check_bounded_density(ShotNoiseModel(1.0, MarkDistribution("exponential"), dim=1))


def test_pair_evaluator_limits():
    u = (5.5, 6.5)
    ev = ShotNoisePairEvaluator(UNIT, u, n_samples=20_000, seed=3)
    b = ev.batches(np.array([[0.0, 0.0], [60.0, 0.0]]))
    est, se = b.mean(0), b.std(0, ddof=1) / math.sqrt(len(b))
    p, _ = tail_probabilities(UNIT, u, 200_000, 1)
    lag0 = np.array([[p[0] - p[0] ** 2, p[1] - p[0] * p[1]], [p[1] - p[0] * p[1], p[1] - p[1] ** 2]])
    assert np.all(np.abs(est[0] - lag0) <= 4 * se[0] + 5e-3)
    assert np.all(np.abs(est[1]) <= 4 * se[1] + 1e-3)
