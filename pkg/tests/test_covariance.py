import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from excursion_clt import CovarianceModel, check_decay, decay_report, theta_coefficient

MODELS = [
    CovarianceModel("spherical", scale=10.0, dim=2),
    CovarianceModel("spherical", variance=2.5, scale=3.0, dim=3),
    CovarianceModel("exponential", scale=1.0, dim=1),
    CovarianceModel("exponential", variance=0.5, scale=2.0, dim=2),
    CovarianceModel("powered_exponential", scale=1.5, dim=2, exponent=1.5),
    CovarianceModel("white_noise", dim=2),
]


def test_spherical_values(spherical):
    assert spherical.evaluate([0.0, 0.0]) == 1.0
    assert spherical.evaluate([10.0, 0.0]) == 0.0
    assert spherical.evaluate([3.0, 4.0]) == pytest.approx(0.3125, abs=1e-15)
    assert spherical.correlation([20.0, 0.0]) == 0.0


def test_exponential_correlation():
    m = CovarianceModel("exponential", scale=1.0, dim=2)
    assert m.correlation([1.0, 0.0]) == pytest.approx(math.exp(-1), rel=1e-15)
    assert m.correlation([0.0, 0.0]) == 1.0


def test_variance_scales_covariance_not_correlation():
    m = CovarianceModel("exponential", variance=4.0, scale=2.0, dim=1)
    assert m.evaluate(2.0) == pytest.approx(4 * math.exp(-1))
    assert m.correlation(2.0) == pytest.approx(math.exp(-1))


def test_rejects_bad_parameters():
    with pytest.raises(ValueError):
        CovarianceModel("gaussian_bump")
    with pytest.raises(ValueError):
        CovarianceModel("spherical", variance=0.0)
    with pytest.raises(ValueError):
        CovarianceModel("powered_exponential", exponent=2.5)
    with pytest.raises(ValueError):
        CovarianceModel("spherical", dim=4)
    with pytest.raises(ValueError):
        CovarianceModel("spherical", dim=2).evaluate([1.0, 2.0, 3.0])


@pytest.mark.parametrize("model", MODELS, ids=lambda m: f"{m.kind}-d{m.dim}")
def test_pointwise_invariants(model):
    rng = np.random.default_rng(11)
    t = rng.normal(scale=5.0, size=(10_000, model.dim))
    v = model.evaluate(t)
    r0 = model.evaluate(np.zeros(model.dim))
    assert np.all(np.abs(v) <= r0)
    assert np.array_equal(v, model.evaluate(-t))
    c = model.correlation(t)
    assert np.all((c >= -1) & (c <= 1))


@settings(max_examples=200, deadline=None)
@given(st.floats(10.0, 1e6), st.floats(0, 2 * math.pi))
def test_spherical_vanishes_outside_support(r, angle):
    m = CovarianceModel("spherical", scale=10.0, dim=2)
    x = [r * math.cos(angle), r * math.sin(angle)]
    # rounding can put the point a hair inside the support
    val = m.evaluate(x)
    assert 0.0 <= val < 1e-12
    if r > 10.0 + 1e-9:
        assert val == 0.0


def test_scalar_and_vector_forms_agree():
    for m in MODELS:
        f = m.scalar_correlation()
        for r in (0.0, 0.3, 1.0, 2.7, 9.99, 12.0):
            assert f(r) == pytest.approx(float(m.radial_correlation(r)), abs=1e-15)


def test_theta_examples():
    assert theta_coefficient(CovarianceModel("spherical", scale=10.0, dim=2), 10.0) == 0.0
    d1 = CovarianceModel("exponential", scale=1.0, dim=1)
    assert theta_coefficient(d1, 1.0) == pytest.approx(4 * math.exp(-1), rel=1e-10)


def test_theta_against_square_oracle():
    # [DERIVED] mpmath: 2 * (total integral - integral over the centred square)
    exp2 = CovarianceModel("exponential", scale=1.0, dim=2)
    assert theta_coefficient(exp2, 1.0) == pytest.approx(8.68637551617521422, rel=1e-9)
    sph = CovarianceModel("spherical", scale=10.0, dim=2)
    assert theta_coefficient(sph, 5.0) == pytest.approx(32.6033038021796992, rel=1e-9)


@pytest.mark.parametrize("model", [MODELS[0], MODELS[2], MODELS[3]], ids=["sph2", "exp1", "exp2"])
def test_theta_non_increasing(model):
    rs = np.linspace(0.25, 1.2 * model.practical_range, 20)
    th = [theta_coefficient(model, r) for r in rs]
    assert all(b <= a + 1e-9 for a, b in zip(th, th[1:]))


def test_decay_reports():
    rep = check_decay(CovarianceModel("spherical", scale=10.0, dim=2))
    assert rep.alpha_estimate == math.inf and rep.satisfies_condition_A and rep.satisfies_condition_B
    rep = check_decay(CovarianceModel("exponential", dim=3))
    assert rep.satisfies_condition_A and rep.satisfies_condition_B
    rep = decay_report(2.0, 1)
    assert not rep.satisfies_condition_A and rep.satisfies_condition_B
    assert (rep.threshold_A, rep.threshold_B) == (3, 1)


def test_white_noise_flagged_discontinuous():
    assert not CovarianceModel("white_noise").continuous
    assert CovarianceModel("spherical").continuous
