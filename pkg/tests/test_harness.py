import csv
import json
import math

import numpy as np
import pytest
from scipy import stats

from excursion_clt import (CovarianceModel, GridSpec, ShotNoiseModel, gaussian_tail, inv_sqrt,
                           mean_error_matrix, normality_diagnostics, run_experiment, sigma_matrix_generic)
from excursion_clt.harness import ExperimentConfig, run_growth_study, validate_vh_sequence, write_report
from excursion_clt.shotnoise import ShotNoisePairEvaluator, marginal_samples

U3 = (-1.0, 0.0, 1.0)


def test_config_invariants(spherical):
    g = GridSpec.square(32)
    with pytest.raises(ValueError):
        ExperimentConfig(spherical, g, U3, replications=1)
    with pytest.raises(ValueError):
        ExperimentConfig(spherical, g, U3, normalization="self_normalized")
    with pytest.raises(ValueError):
        ExperimentConfig(spherical, g, (1.0, 0.0))
    with pytest.raises(ValueError):
        ExperimentConfig(spherical, GridSpec(1, (32.0,)), U3)


def test_diagnostics_calibration():
    z = np.random.default_rng(20240101).standard_normal((10_000, 3))
    d = normality_diagnostics(z)
    assert np.all(d.ks_pvalue > 0.01)
    # golden values of this calibration run
    assert d.ks_pvalue == pytest.approx([stats.kstest(z[:, k], "norm").pvalue for k in range(3)], rel=1e-12)
    assert np.all(np.abs(d.qq_relative_deviation) < 0.05)
    assert d.qq_theoretical == pytest.approx(stats.chi2.ppf(np.arange(1, 10) / 10, 3))


def test_diagnostics_degenerate_and_scalar():
    c = 0.3
    d = normality_diagnostics(np.full((50, 1), c))
    assert d.ks_statistic[0] == pytest.approx(max(stats.norm.cdf(c), 1 - stats.norm.cdf(c)), rel=1e-12)
    assert d.ks_pvalue[0] < 1e-10
    x = np.random.default_rng(1).standard_normal(40)
    assert normality_diagnostics(x).ks_pvalue[0] == pytest.approx(stats.kstest(x, "norm").pvalue)
    with pytest.raises(ValueError, match="at least 20"):
        normality_diagnostics(np.zeros((19, 2)))


def test_mean_error_matrix(sigma_spherical):
    ref = sigma_spherical
    assert np.array_equal(mean_error_matrix([ref, ref], ref), np.zeros((3, 3)))
    assert np.allclose(mean_error_matrix([1.01 * ref.entries], ref), 1.0, atol=1e-12)
    me = mean_error_matrix([np.eye(2)], np.array([[1.0, 0.0], [0.0, 2.0]]))
    assert np.isnan(me[0, 1]) and me[1, 1] == -50.0
    with pytest.raises(ValueError):
        mean_error_matrix([np.eye(2)], ref)


def test_whitening_identity(sigma_spherical):
    m = inv_sqrt(sigma_spherical)
    assert np.abs(m @ sigma_spherical.entries @ m - np.eye(3)).max() < 1e-8
    t = np.random.default_rng(3).multivariate_normal(np.zeros(3), sigma_spherical.entries, 20_000)
    c = np.cov(t @ m, rowvar=False)
    assert np.abs(c - np.eye(3)).max() < 4 * math.sqrt(2 / 20_000) * 1.5


def test_smoke_white_noise():
    cfg = ExperimentConfig(CovarianceModel("white_noise"), GridSpec.square(32), (0.0,), replications=2,
                           seed=1, subwindow_edge=8, normalization="self_normalized")
    rep = run_experiment(cfg)
    frac = rep.volumes[:, 0] / cfg.grid.volume
    assert np.all(np.abs(frac - 0.5) < 0.1)
    assert rep.excluded_theory == [0, 1]       # the limit matrix vanishes for white noise
    assert rep.whitened_self.shape == (2, 1)


def test_deterministic_and_worker_independent(tmp_path, spherical):
    kw = dict(replications=6, seed=99, subwindow_edge=16)
    a = run_experiment(ExperimentConfig(spherical, GridSpec.square(64), U3, **kw))
    b = run_experiment(ExperimentConfig(spherical, GridSpec.square(64), U3, workers=3, **kw))
    for x, y in ((a.volumes, b.volumes), (a.whitened_theory, b.whitened_theory), (a.sigma_hat, b.sigma_hat)):
        assert np.array_equal(x, y)
    pa, pb = write_report(a, tmp_path / "a"), write_report(b, tmp_path / "b")
    for key in ("report", "replications", "qq", "histogram"):
        assert pa[key].read_bytes() == pb[key].read_bytes()


def test_report_contents(tmp_path, spherical):
    rep = run_experiment(ExperimentConfig(spherical, GridSpec.square(96), U3, replications=25, seed=4,
                                          subwindow_edge=16))
    assert np.array_equal(rep.sample_cov, rep.sample_cov.T)
    assert np.linalg.eigvalsh(rep.sample_cov).min() > -1e-12
    assert np.all(np.isfinite(rep.mean_error))
    paths = write_report(rep, tmp_path)
    data = json.loads(paths["report"].read_text())
    assert data["replications"] == 25 and len(data["seeds"]) == 25
    assert set(data["diagnostics"]) == {"theoretical_sigma", "self_normalized"}
    rows = list(csv.DictReader(paths["replications"].open()))
    assert len(rows) == 25 and "Z_theory_2" in rows[0] and "sigma_hat_02" in rows[0]
    hist = list(csv.DictReader(paths["histogram"].open()))
    assert len(hist) == 3 * 30
    assert float(hist[15]["normal_density"]) == pytest.approx(stats.norm.pdf(float(hist[15]["bin_left"]) + 4 / 30), rel=1e-12)


def test_tail_fraction_consistency(spherical):
    rep = run_experiment(ExperimentConfig(spherical, GridSpec.square(128), U3, replications=40, seed=8))
    frac = rep.volumes / (128.0 ** 2)
    se = frac.std(axis=0, ddof=1) / math.sqrt(40)
    assert np.all(np.abs(frac.mean(axis=0) - gaussian_tail(np.array(U3))) <= 3 * se)


def test_self_normalized_variance():
    # tiles of 6.4 ranges keep the estimator bias small; tolerance 3 sqrt(2 / M)
    m = CovarianceModel("spherical", scale=10.0, dim=2)
    rep = run_experiment(ExperimentConfig(m, GridSpec.square(512), U3, replications=100, seed=17,
                                          subwindow_edge=64, normalization="self_normalized", workers=4))
    z = rep.whitened_self
    assert not rep.excluded_self
    assert np.all(np.abs(z.var(axis=0, ddof=1) - 1) <= 3 * math.sqrt(2 / 100))


def test_sigma_hat_concentrates_with_window(spherical):
    def iqr(n):
        rep = run_experiment(ExperimentConfig(spherical, GridSpec.square(n), U3, replications=40, seed=n,
                                              subwindow_edge=15))
        q = np.percentile(rep.sigma_hat, [25, 75], axis=0)
        return q[1] - q[0]
    assert np.all(iqr(256) < iqr(128))


def test_growth_validation(spherical):
    grids = [GridSpec.square(n) for n in (32, 48)]
    validate_vh_sequence(grids)
    with pytest.raises(ValueError, match="strictly increase"):
        validate_vh_sequence([GridSpec(2, (32.0, 32.0)), GridSpec(2, (64.0, 32.0))])
    with pytest.raises(ValueError):
        validate_vh_sequence(grids[:1])
    reps = run_growth_study(ExperimentConfig(spherical, grids[0], U3, replications=3, seed=2), grids)
    assert [r.config["grid"]["sides"][0] for r in reps] == [32.0, 48.0]


def test_shot_noise_sigma_matches_empirical_variance():
    # d = 1, unit marks, exp(-|t|), threshold at the marginal median
    sn = ShotNoiseModel(1.0, dim=1)
    med = float(np.median(marginal_samples(sn, 200_000, 2)))
    ev = ShotNoisePairEvaluator(sn, (med,), 20_000, seed=11)
    sigma = sigma_matrix_generic(ev, sn, (med,), tolerance=math.inf)
    assert sigma.entries[0, 0] > 0
    rep = run_experiment(ExperimentConfig(sn, GridSpec(1, (400.0,), 0.5), (med,), replications=200, seed=3,
                                          sigma=sigma, tail_samples=200_000))
    emp = rep.sample_cov[0, 0]
    se = math.hypot(emp * math.sqrt(2 / 199), sigma.meta["standard_error"][0][0])
    assert abs(emp - sigma.entries[0, 0]) <= 3 * se
