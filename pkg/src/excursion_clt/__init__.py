"""Central limit theorems for excursion-set volumes of weakly dependent random fields."""

from .covariance import CovarianceModel, check_decay, decay_report, theta_coefficient
from .errors import (ConfigError, DegenerateMatrixError, DomainError, MonteCarloBudgetError,
                     QuadratureError, SimulationError, UnsupportedCaseError)
from .estimation import estimate_sigma, expected_subwindow_estimate, make_tiling
from .excursion import ThresholdVector, centered_statistic, excursion_vector, excursion_volume
from .harness import ExperimentConfig, mean_error_matrix, normality_diagnostics, run_experiment
from .quadrature import DEFAULT_QUAD, QuadratureSpec
from .shotnoise import MarkDistribution, Response, ShotNoiseModel, check_bounded_density, simulate_shot_noise
from .simulation import GridField, GridSpec, derive_seed, read_field, simulate_gaussian, write_field
from .theory import (CovMatrix, GaussianMarginal, gaussian_indicator_cov, gaussian_tail, inv_sqrt,
                     qa_indicator_bound, sigma_matrix_gaussian, sigma_matrix_generic)

__version__ = "0.1.0"
