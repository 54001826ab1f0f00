import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from excursion_clt import (CovarianceModel, CovMatrix, DegenerateMatrixError, GaussianMarginal,
                           gaussian_indicator_cov, gaussian_tail, inv_sqrt, qa_indicator_bound,
                           sigma_matrix_gaussian, sigma_matrix_generic)
from excursion_clt.fullquad import sigma_entry_cartesian
from excursion_clt.theory import (GaussianPairEvaluator, indicator_cov_table, sigma2_gaussian,
                                  sigma2_mean_level, sigma_entry_gaussian)

from conftest import REFERENCE_SIGMA, THRESHOLDS

STD = GaussianMarginal()


def test_gaussian_tail_values():
    assert gaussian_tail(0.0) == 0.5
    assert gaussian_tail(40.0) < 1e-300
    # [DERIVED] mpmath ncdf at 25 digits
    assert gaussian_tail(1.0) == pytest.approx(0.158655253931457051, rel=1e-14)
    assert gaussian_tail(3.0) == pytest.approx(0.00134989803163009453, rel=1e-13)
    assert gaussian_tail(8.0) == pytest.approx(6.22096057427178412e-16, rel=1e-12)


def test_indicator_cov_closed_cases():
    assert gaussian_indicator_cov(STD, 0.3, -0.2, 0.0) == 0.0
    assert gaussian_indicator_cov(STD, 0.0, 0.0, 0.5) == pytest.approx(1 / 12, abs=1e-13)
    assert gaussian_indicator_cov(STD, 0.0, 0.0, 1.0) == pytest.approx(0.25, abs=1e-15)
    z, w = 0.4, -0.7
    pz, pw = gaussian_tail(z), gaussian_tail(w)
    assert gaussian_indicator_cov(STD, z, w, 1.0) == pytest.approx(gaussian_tail(max(z, w)) - pz * pw, abs=1e-15)
    assert gaussian_indicator_cov(STD, z, w, -1.0) == pytest.approx(max(0.0, pz + pw - 1) - pz * pw, abs=1e-15)


@pytest.mark.parametrize("z, w, rho, expected", [
    # [DERIVED] mpmath: integral of phi(x) * Psi((w - rho x)/sqrt(1 - rho^2)) over x >= z, minus Psi(z)Psi(w)
    (0.3, -1.2, 0.7, 0.0410197842963842018),
    (1.5, 1.5, 0.95, 0.0460910026542669462),
    (-0.4, 0.8, -0.6, -0.0727798645651237048),
    (2.0, -2.0, -0.999, -0.0212695384369755318),
])
def test_indicator_cov_against_mpmath(z, w, rho, expected):
    assert gaussian_indicator_cov(STD, z, w, rho) == pytest.approx(expected, abs=1e-12)


def test_indicator_cov_nonstandard_marginal():
    m = GaussianMarginal(mean=2.0, std=3.0)
    assert gaussian_indicator_cov(m, 2.9, -1.6, 0.7) == pytest.approx(
        gaussian_indicator_cov(STD, 0.3, -1.2, 0.7), abs=1e-15)


def test_indicator_cov_rejects_bad_rho():
    with pytest.raises(ValueError):
        gaussian_indicator_cov(STD, 0.0, 0.0, 1.2)


def test_table_matches_adaptive():
    rho = np.linspace(-1, 1, 41)
    tab = indicator_cov_table(rho, 0.3, -0.8)
    ref = [gaussian_indicator_cov(STD, 0.3, -0.8, r) for r in rho]
    assert np.allclose(tab, ref, atol=1e-12, rtol=0)


@settings(max_examples=60, deadline=None)
@given(st.floats(-3, 3), st.floats(-1, 1), st.floats(-1, 1))
def test_monotone_in_rho(u, r1, r2):
    lo, hi = sorted((r1, r2))
    assert gaussian_indicator_cov(STD, u, u, lo) <= gaussian_indicator_cov(STD, u, u, hi) + 1e-14


@settings(max_examples=60, deadline=None)
@given(st.floats(-4, 4), st.floats(-4, 4), st.floats(-1, 1))
def test_indicator_cov_bounds(u, v, rho):
    c = gaussian_indicator_cov(STD, u, v, rho)
    assert abs(c) <= abs(rho) / 4 + 1e-14
    assert abs(c) <= qa_indicator_bound(1 / math.sqrt(2 * math.pi), rho) + 1e-14


def test_qa_bound_values():
    assert qa_indicator_bound(1.0, 0.0) == 0.0
    assert qa_indicator_bound(1.0, 1.0) == pytest.approx(3 * 2 ** (2 / 3))
    assert qa_indicator_bound(1.0, 1.0) == pytest.approx(4.7622, abs=1e-4)
    with pytest.raises(ValueError):
        qa_indicator_bound(0.0, 0.1)


def test_sigma2_reference_values(spherical):
    assert sigma2_gaussian(STD, spherical, 0.0) == pytest.approx(10.5564, abs=1e-3)
    assert sigma2_gaussian(STD, spherical, 1.0) == pytest.approx(4.6432, abs=1e-3)
    assert sigma2_gaussian(STD, spherical, -1.0) == pytest.approx(4.6432, abs=1e-3)


@pytest.mark.parametrize("model", [
    CovarianceModel("spherical", scale=10.0, dim=2),
    CovarianceModel("exponential", scale=2.0, dim=3),
    CovarianceModel("powered_exponential", scale=1.0, dim=1, exponent=1.5),
], ids=["sph2", "exp3", "pow1"])
def test_mean_level_consistency(model):
    assert sigma2_mean_level(model) == pytest.approx(sigma2_gaussian(STD, model, 0.0), abs=1e-8)


def test_mean_level_closed_form_d1_exponential():
    # [DERIVED] (2/2pi) int_0^inf arcsin(exp(-v/b)) dv = (b/pi) * (pi/2) ln 2
    for b in (0.5, 2.0):
        m = CovarianceModel("exponential", scale=b, dim=1)
        assert sigma2_mean_level(m) == pytest.approx(0.5 * b * math.log(2), rel=1e-9)


def test_sigma_matrix_reference_values(sigma_spherical):
    assert np.allclose(sigma_spherical.entries, REFERENCE_SIGMA, atol=1e-3, rtol=0)
    assert np.array_equal(sigma_spherical.entries, sigma_spherical.entries.T)
    assert np.linalg.eigvalsh(sigma_spherical.entries).min() > 0


def test_sigma_matrix_order_one_reduces(spherical):
    s = sigma_matrix_gaussian(STD, spherical, (0.5,))
    assert s.entries[0, 0] == sigma2_gaussian(STD, spherical, 0.5)


def test_table_layout(sigma_spherical):
    lines = sigma_spherical.table().splitlines()
    assert [len(l.split()) for l in lines] == [1, 2, 3]
    assert lines[1].split() == ["5.9938", "10.5565"]


def test_generic_matches_gaussian(spherical, sigma_spherical):
    gen = sigma_matrix_generic(GaussianPairEvaluator(spherical, THRESHOLDS), spherical, THRESHOLDS)
    assert np.allclose(gen.entries, sigma_spherical.entries, atol=1e-6, rtol=0)


def test_generic_zero_evaluator(spherical):
    zero = lambda t: np.zeros((len(np.atleast_2d(t)), 2, 2))
    out = sigma_matrix_generic(zero, spherical, (0.0, 1.0))
    assert np.array_equal(out.entries, np.zeros((2, 2)))


def test_radial_matches_cartesian_quick():
    m = CovarianceModel("exponential", scale=2.0, dim=2)
    a = sigma_entry_gaussian(STD, m, 0.5, -0.3)
    b = sigma_entry_cartesian(STD, m, 0.5, -0.3)
    assert a == pytest.approx(b, rel=1e-8)


def test_inv_sqrt_examples(sigma_spherical):
    assert np.allclose(inv_sqrt(np.eye(3)), np.eye(3), atol=1e-15)
    assert np.allclose(inv_sqrt(np.diag([4.0, 9.0])), np.diag([0.5, 1 / 3]), atol=1e-15)
    m = inv_sqrt(sigma_spherical)
    assert np.abs(m @ sigma_spherical.entries @ m - np.eye(3)).max() < 1e-8


def test_inv_sqrt_degenerate():
    with pytest.raises(DegenerateMatrixError):
        inv_sqrt(np.ones((2, 2)))
    with pytest.raises(DegenerateMatrixError):
        inv_sqrt(np.zeros((1, 1)))


def test_covmatrix_checks_and_json(sigma_spherical):
    with pytest.raises(ValueError):
        CovMatrix(np.array([[1.0, 0.5], [0.4, 1.0]]))
    with pytest.raises(DegenerateMatrixError):
        CovMatrix(np.array([[1.0, 2.0], [2.0, 1.0]]))
    back = CovMatrix.from_dict(json.loads(sigma_spherical.to_json()))
    assert np.array_equal(back.entries, sigma_spherical.entries)
    assert back.thresholds == THRESHOLDS
