import pytest

from excursion_clt import CovarianceModel, GaussianMarginal, sigma_matrix_gaussian

# Limiting covariance for the spherical range-10 model at thresholds (-1, 0, 1)
# to 4 decimals (reference values for this configuration).
REFERENCE_SIGMA = [
    [4.6432, 5.9938, 2.7962],
    [5.9938, 10.5564, 5.9938],
    [2.7962, 5.9938, 4.6432],
]
THRESHOLDS = (-1.0, 0.0, 1.0)


@pytest.fixture(scope="session")
def spherical():
    return CovarianceModel("spherical", variance=1.0, scale=10.0, dim=2)


@pytest.fixture(scope="session")
def sigma_spherical(spherical):
    return sigma_matrix_gaussian(GaussianMarginal.from_model(spherical), spherical, THRESHOLDS)
