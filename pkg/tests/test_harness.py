import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_array_equal

from src.core import harness
from src.core.harness import (
    CSV_COLUMNS,
    DIAGNOSTIC_CHECKS,
    GRADIENT_TOLERANCE,
    RateReport,
    RegressionDataset,
    approx_rate_experiment,
    empirical_risk,
    estimate_sup,
    estimation_architecture,
    estimation_rate_experiment,
    fit_slope,
    gen_data,
    l2_error,
    run_gradient_check,
    verify_compilation,
)
from src.utils.config import TrainingSettings, load_config
from src.utils.errors import DomainError, TrainingError
from src.utils.function_library import get_function


def test_gen_data_is_deterministic():
    f = get_function("sin_product")
    first = gen_data(f, 3, 100, 0.1, 7)
    second = gen_data(f, 3, 100, 0.1, 7)
    assert_array_equal(first.inputs, second.inputs)
    assert_array_equal(first.targets, second.targets)
    assert first.function_name == "sin_product"
    assert not np.array_equal(gen_data(f, 3, 100, 0.1, 8).inputs, first.inputs)


def test_gen_data_noise():
    f = get_function("sin_first")
    clean = gen_data(f, 2, 50, 0.0, 1)
    assert_array_equal(clean.targets, f(clean.inputs))
    noisy = gen_data(f, 2, 20000, 0.5, 2)
    assert np.std(noisy.targets - f(noisy.inputs)) == pytest.approx(0.5, rel=0.05)
    assert np.all(np.abs(noisy.inputs) <= 1.0)


def test_gen_data_rejects_bad_arguments():
    f = get_function("zero")
    with pytest.raises(DomainError):
        gen_data(f, 2, 0, 0.1, 0)
    with pytest.raises(DomainError):
        gen_data(f, 2, 10, -0.1, 0)
    with pytest.raises(DomainError):
        RegressionDataset(np.array([[1.5, 0.0]]), np.zeros(1), 0.1, 0)
    with pytest.raises(DomainError):
        RegressionDataset(np.zeros((3, 2)), np.zeros(2), 0.1, 0)


def test_empirical_risk_examples():
    data = RegressionDataset(np.zeros((4, 2)), np.full(4, 2.0), 0.0, 0)
    assert empirical_risk(lambda x: np.zeros(x.shape[0]), data) == 4.0
    assert empirical_risk(lambda x: np.full(x.shape[0], 2.0), data) == 0.0


def test_l2_error_examples():
    f = get_function("first_coordinate")
    perfect = l2_error(f, f, 2, 100, 0)
    assert perfect.value == 0.0 and perfect.stderr == 0.0
    constant = l2_error(lambda x: np.zeros(x.shape[0]), get_function("constant"), 3, 100, 0)
    assert constant.value == pytest.approx(0.25)
    # E[x_1^2] = 1/3 under the uniform distribution on [-1, 1]
    estimate = l2_error(lambda x: np.zeros(x.shape[0]), f, 2, 20000, 1)
    assert abs(estimate.value - 1 / 3) <= 5 * estimate.stderr
    with pytest.raises(DomainError):
        l2_error(f, f, 2, 1, 0)


def test_estimate_sup():
    assert estimate_sup(get_function("sin_product"), 2, 101) == pytest.approx(1.0)
    assert estimate_sup(get_function("zero"), 3, 50) == 0.0


def test_fit_slope():
    values = np.array([1.0, 2.0, 4.0, 8.0])
    assert fit_slope(values, 3.0 / values) == pytest.approx(-1.0)
    assert fit_slope(values, values ** -0.5) == pytest.approx(-0.5)
    with pytest.raises(DomainError):
        fit_slope([1.0], [1.0])
    with pytest.raises(DomainError):
        fit_slope([1.0, 2.0], [1.0, 0.0])


def test_rate_report_frame_and_csv(tmp_path):
    report = RateReport("barron", "M", -0.75)
    report.rows = [
        {"sweep_var": 2, "seed": 0, "error": 0.4, "runtime_s": 0.1, "budget": None},
        {"sweep_var": 2, "seed": 1, "error": 0.2, "runtime_s": 0.1, "budget": None},
        {"sweep_var": 4, "seed": 0, "error": 0.1, "runtime_s": 0.2, "budget": None},
    ]
    assert report.sweep_values() == [2, 4]
    assert report.medians() == pytest.approx([0.3, 0.1])
    frame = report.to_frame()
    assert list(frame.columns[:4]) == CSV_COLUMNS
    path = tmp_path / "rates.csv"
    report.write_csv(path)
    loaded = pd.read_csv(path)
    assert list(loaded.columns) == CSV_COLUMNS
    assert len(loaded) == 3


def test_diagnostic_checks_do_not_gate():
    report = RateReport("barron", "M", -0.75, checks={name: False for name in DIAGNOSTIC_CHECKS})
    report.checks["compiled_matches_fnn"] = True
    assert report.passed
    report.checks["compiled_matches_fnn"] = False
    assert not report.passed


def test_barron_rate_experiment_small():
    report = approx_rate_experiment("barron", get_function("gaussian_bump"), 2, [2, 4], [0, 1],
                                    grid_points=11, candidate_budget=50)
    assert report.diagnostic
    assert [(r["sweep_var"], r["seed"]) for r in report.rows] == [(2, 0), (2, 1), (4, 0), (4, 1)]
    assert report.checks["compiled_matches_fnn"]
    assert "median_non_increasing" in report.checks
    assert report.predicted_exponent == pytest.approx(-1.0)


def test_barron_rate_experiment_thread_independent():
    kwargs = dict(grid_points=11, candidate_budget=30)
    serial = approx_rate_experiment("barron", get_function("cosine_ridge"), 2, [2, 3], [0, 1], **kwargs)
    parallel = approx_rate_experiment("barron", get_function("cosine_ridge"), 2, [2, 3], [0, 1], threads=2,
                                      **kwargs)
    assert [r["error"] for r in serial.rows] == [r["error"] for r in parallel.rows]


def test_holder_rate_experiment_single_budget():
    report = approx_rate_experiment("holder", get_function("sin_product"), 2, [9], [0, 1, 2], grid_points=21)
    assert len(report.rows) == 1
    assert report.checks["compiled_matches_fnn"]
    assert report.checks["within_budget"]
    assert report.slope is None
    assert report.predicted_exponent == pytest.approx(-1.0)


@pytest.mark.slow
def test_holder_rate_experiment_slope():
    report = approx_rate_experiment("holder", get_function("sin_product"), 2, [9, 25, 81], [0])
    assert report.passed, report.checks


def test_unknown_experiment_kind():
    with pytest.raises(DomainError):
        approx_rate_experiment("sobolev", get_function("zero"), 2, [4], [0])


def test_estimation_architecture():
    arch = estimation_architecture(7, 3, 4, 2, 1.0, 1.0)
    assert arch.M == 7 and arch.C0 == 3
    assert arch.depths == [3] * 7
    assert arch.channels[0] == [4, 4, 3]


def test_gradient_check_passes():
    assert run_gradient_check(seed=0) <= GRADIENT_TOLERANCE


def test_gradient_check_refuses_kinked_batches(monkeypatch):
    monkeypatch.setattr(harness, "KINK_MARGIN", 1e9)
    with pytest.raises(TrainingError):
        run_gradient_check(seed=0, attempts=3)


def test_estimation_of_zero_function_is_exact():
    training = TrainingSettings(steps=3, batch_size=8)
    report = estimation_rate_experiment(get_function("zero"), 2.0, 2, [16, 32], [0], training, sigma=0.0,
                                        probes=100, grid_points=11)
    assert [r["error"] for r in report.rows] == [0.0, 0.0]
    assert report.diagnostic
    assert report.checks["gradient_check"]
    assert report.slope is None


def test_estimation_experiment_runs():
    training = TrainingSettings(steps=5, batch_size=16)
    report = estimation_rate_experiment(get_function("sin_first"), 2.0, 2, [32, 64], [0, 1], training,
                                        probes=200, grid_points=11)
    assert len(report.rows) == 4
    assert all(np.isfinite(r["error"]) and r["error"] >= 0 for r in report.rows)
    assert report.predicted_exponent == pytest.approx(-2 / 3)
    assert "median_decreasing" in report.checks


@pytest.mark.slow
def test_estimation_trend_decreases():
    config = load_config()
    exp, data = config.experiments, config.data
    report = estimation_rate_experiment(get_function(exp.function), exp.beta, exp.dim, exp.sample_sizes, exp.seeds,
                                        config.training, sigma=data.noise_sigma, probes=data.probes,
                                        channels=exp.channels, K=exp.filter_size, grid_points=data.grid_points,
                                        threads=config.runtime.threads)
    assert report.sweep_values() == [2 ** k for k in range(8, 13)]
    assert len(report.rows) == 5 * len(exp.seeds)
    assert report.checks["gradient_check"]
    assert report.checks["median_decreasing"], report.medians()


def test_contract_sample_size_in_three_dimensions():
    # one Latin-hypercube stratum per 2e-5 along x_1 puts a sample next to x_1 = 1/2
    assert estimate_sup(get_function("sin_first"), 3, 10) == pytest.approx(1.0, abs=1e-6)
    assert estimate_sup(get_function("sin_first"), 3, 10, samples=10) < 1.0
    report = approx_rate_experiment("barron", get_function("cosine_ridge"), 3, [2], [0], grid_points=11,
                                    candidate_budget=20, sample_points=500)
    assert report.checks["compiled_matches_fnn"]


def test_verify_compilation_small():
    report = verify_compilation(instances=20, probes=50, seed=3)
    assert report.passed, report.certificate_violations
    assert report.max_deviation <= 1e-9
    threaded = verify_compilation(instances=20, probes=50, seed=3, threads=2)
    assert threaded.max_deviation == report.max_deviation


@pytest.mark.slow
def test_verify_compilation_full():
    report = verify_compilation()
    assert report.passed
    assert report.instances == 200
