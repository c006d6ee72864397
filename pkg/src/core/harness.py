"""
Regression data, risks and rate experiments.

P_X is uniform on [-1, 1]^D throughout. Experiments are pure functions of
their parameters and seeds; trials run on a thread pool and are sorted before
aggregation.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from src.core.approximators import (
    CONTRACT_SAMPLE_POINTS,
    TaylorOracle,
    barron_fnn,
    evaluation_grid,
    fit_barron_ridges,
    holder_fnn,
)
from src.core.cnn import clip_output, cnn_eval_batch
from src.core.compiler import compile_fnn_to_cnn
from src.core.complexity import ArchSummary, holder_gammas, rate_balance
from src.core.fnn import fnn_eval_batch, random_fnn
from src.core.training import TrainConfig, erm_train, gradient_check, min_preactivation, random_cnn
from src.utils.errors import CompilationError, DomainError, TrainingError

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["sweep_var", "seed", "error", "runtime_s"]
SLOPE_TOLERANCE = 0.5
GRADIENT_TOLERANCE = 1e-5
EXACTNESS_RTOL = 1e-9
# finite differences with h = 1e-5 must not cross a ReLU kink
KINK_MARGIN = 1e-3
# fitting grid per axis; the fitter holds grid x candidates atoms in memory
FIT_GRID_POINTS = 50
FIT_SAMPLE_POINTS = FIT_GRID_POINTS ** 2
# reported but not gated: the greedy ridge fitter is a heuristic
DIAGNOSTIC_CHECKS = frozenset({"median_non_increasing"})


@dataclass
class RegressionDataset:
    inputs: np.ndarray
    targets: np.ndarray
    sigma: float
    seed: int
    function_name: str = ""

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise DomainError("dataset needs at least one input row")
        if self.targets.shape != (self.inputs.shape[0],):
            raise DomainError(f"targets shape {self.targets.shape} does not match {self.inputs.shape[0]} inputs")
        if np.any(np.abs(self.inputs) > 1.0):
            raise DomainError("dataset inputs must lie in [-1, 1]^D")

    @property
    def N(self):
        return self.inputs.shape[0]

    @property
    def D(self):
        return self.inputs.shape[1]


@dataclass
class MonteCarloEstimate:
    value: float
    stderr: float
    probes: int


@dataclass
class RateReport:
    kind: str
    sweep_name: str
    predicted_exponent: float
    rows: List[Dict] = field(default_factory=list)
    slope: Optional[float] = None
    diagnostic: bool = False
    runtime_s: float = 0.0
    checks: Dict[str, bool] = field(default_factory=dict)
    parameters: Dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(ok for name, ok in self.checks.items() if name not in DIAGNOSTIC_CHECKS)

    def sweep_values(self):
        return sorted({row["sweep_var"] for row in self.rows})

    def medians(self):
        return [float(np.median([r["error"] for r in self.rows if r["sweep_var"] == v])) for v in self.sweep_values()]

    def to_frame(self):
        return pd.DataFrame(self.rows).reindex(columns=CSV_COLUMNS + [
            c for c in (self.rows[0] if self.rows else {}) if c not in CSV_COLUMNS
        ])

    def write_csv(self, path):
        self.to_frame()[CSV_COLUMNS].to_csv(path, index=False)


def gen_data(f, D, N, sigma, seed, name=""):
    if N < 1:
        raise DomainError(f"sample size must be >= 1, got {N}")
    if sigma < 0:
        raise DomainError(f"noise level must be nonnegative, got {sigma}")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, (N, D))
    y = np.asarray(f(x), dtype=np.float64) + sigma * rng.standard_normal(N)
    return RegressionDataset(x, y, sigma, seed, name or getattr(f, "name", ""))


def empirical_risk(predictor, data):
    residual = data.targets - np.asarray(predictor(data.inputs), dtype=np.float64)
    return float(np.mean(residual ** 2))


def l2_error(predictor, target, D, probes, seed):
    """Monte-Carlo estimate of ||f - f°||^2 in L2(uniform on [-1,1]^D) with its standard error."""
    if probes < 2:
        raise DomainError(f"need at least 2 probes, got {probes}")
    x = np.random.default_rng(seed).uniform(-1.0, 1.0, (probes, D))
    squared = (np.asarray(predictor(x), dtype=np.float64) - np.asarray(target(x), dtype=np.float64)) ** 2
    return MonteCarloEstimate(float(np.mean(squared)), float(np.std(squared, ddof=1) / math.sqrt(probes)), probes)


def estimate_sup(target, D, points, samples=CONTRACT_SAMPLE_POINTS):
    """Clip level F: max |f°| over an evaluation grid."""
    return float(np.max(np.abs(target(evaluation_grid(D, points, samples=samples)))))


def fit_slope(values, errors):
    """Least-squares slope of log(error) against log(value)."""
    values, errors = np.asarray(values, dtype=np.float64), np.asarray(errors, dtype=np.float64)
    if values.size < 2:
        raise DomainError("slope needs at least two sweep points")
    if np.any(values <= 0) or np.any(errors <= 0):
        raise DomainError("slope fitting needs positive sweep values and errors")
    return float(np.polyfit(np.log(values), np.log(errors), 1)[0])


def _run_trials(task, jobs, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda job: task(*job), jobs))
    else:
        rows = [task(*job) for job in jobs]
    return sorted(rows, key=lambda r: (r["sweep_var"], r["seed"]))


def _slope_or_none(report):
    try:
        return fit_slope(report.sweep_values(), report.medians())
    except DomainError as e:
        logger.warning("No slope for %s sweep: %s", report.kind, e)
        return None


def approx_rate_experiment(kind, target, D, budgets, seeds, beta=2.0, K=2, grid_points=100,
                           candidate_budget=2000, threads=1, sample_points=CONTRACT_SAMPLE_POINTS):
    """Grid sup-error of compiled approximators against the block budget M.

    Hölder builds are deterministic, so only the first seed is run.
    """
    if kind not in ("holder", "barron"):
        raise DomainError(f"unknown approximation kind {kind!r}")
    grid = evaluation_grid(D, grid_points, samples=sample_points)
    exact = target(grid)
    fit_grid = evaluation_grid(D, min(grid_points, FIT_GRID_POINTS),
                               samples=min(sample_points, FIT_SAMPLE_POINTS))
    oracle = TaylorOracle.from_function(target, beta, D) if kind == "holder" else None
    predicted = -beta / D if kind == "holder" else -(0.5 + 1.0 / D)

    def trial(M, seed):
        start = time.perf_counter()
        if kind == "holder":
            fnn, params = holder_fnn(oracle, M, D)
            budget = params.error_budget(oracle.holder_norm)
        else:
            fnn = barron_fnn(fit_barron_ridges(target, D, M, candidate_budget, fit_grid, seed))
            budget = None
        net, cert = compile_fnn_to_cnn(fnn, K)
        fnn_values = fnn_eval_batch(fnn, grid)
        cnn_values = cnn_eval_batch(net, grid)
        deviation = float(np.max(np.abs(cnn_values - fnn_values) / (1.0 + np.abs(fnn_values))))
        error = float(np.max(np.abs(cnn_values - exact)))
        logger.info("%s M=%d seed=%d: grid sup-error %.4e", kind, M, seed, error)
        return {
            "sweep_var": M, "seed": seed, "error": error, "runtime_s": time.perf_counter() - start,
            "fnn_error": float(np.max(np.abs(fnn_values - exact))), "budget": budget,
            "deviation": deviation, "exact": deviation <= EXACTNESS_RTOL, "certificate_sound": bool(cert.sound),
        }

    start = time.perf_counter()
    run_seeds = list(seeds)[:1] if kind == "holder" else list(seeds)
    rows = _run_trials(trial, [(M, s) for M in budgets for s in run_seeds], threads)
    report = RateReport(kind, "M", predicted, rows, runtime_s=time.perf_counter() - start,
                        diagnostic=kind == "barron",
                        parameters={"D": D, "beta": beta, "K": K, "function": getattr(target, "name", "")})
    report.slope = _slope_or_none(report)
    report.checks["compiled_matches_fnn"] = all(r["exact"] and r["certificate_sound"] for r in rows)
    if kind == "holder":
        report.checks["within_budget"] = all(r["error"] <= r["budget"] for r in rows)
        report.checks["slope_within_tolerance"] = (
            report.slope is not None and abs(report.slope - predicted) <= SLOPE_TOLERANCE
        )
    else:
        medians = report.medians()
        report.checks["median_non_increasing"] = all(b <= a for a, b in zip(medians, medians[1:]))
    return report


def estimation_architecture(M, D, channels, K, bound_conv, bound_fc):
    """Hölder-class CNN shape: M blocks of depth O(log M) with constant channel count."""
    depth = max(2, int(math.ceil(math.log2(M + 1))))
    return ArchSummary.uniform(D, 3, M, depth, channels, K, bound_conv, bound_fc)


def run_gradient_check(seed=0, D=3, points=8, attempts=200):
    """Reverse-mode versus finite differences on a small random network away from ReLU kinks.

    Input batches are re-sampled until every ReLU pre-activation is at least
    KINK_MARGIN = 1e-3 away from zero, far wider than the 1e-8 needed for
    h = 1e-5 not to cross a kink. Raises TrainingError if no such batch turns up.
    """
    rng = np.random.default_rng(seed)
    net = random_cnn(ArchSummary.uniform(D, 3, 2, 2, 3, 2, 1.0, 1.0), rng)
    for _ in range(attempts):
        x = rng.uniform(-1.0, 1.0, (points, D))
        if min_preactivation(net, x) >= KINK_MARGIN:
            return gradient_check(net, x, rng.standard_normal(points))
    raise TrainingError(f"no kink-free batch of {points} inputs in {attempts} draws")


def estimation_rate_experiment(target, beta, D, sample_sizes, seeds, training, sigma=0.1, probes=20000,
                               channels=4, K=2, grid_points=100, threads=1,
                               sample_points=CONTRACT_SAMPLE_POINTS):
    """Monte-Carlo L2 error of clipped-ERM CNNs against the sample size N; diagnostic only."""
    gamma1, gamma2 = holder_gammas(beta, D)
    clip_level = estimate_sup(target, D, grid_points, sample_points)
    gradient_error = run_gradient_check(training.seed)
    predicted = float(-2 * gamma1 / (2 * gamma1 + gamma2))

    def trial(N, seed):
        start = time.perf_counter()
        M, _ = rate_balance(gamma1, gamma2, N)
        data = gen_data(target, D, N, sigma, seed)
        arch = estimation_architecture(M, D, channels, K, training.bound_conv, training.bound_fc)
        net = random_cnn(arch, np.random.default_rng([seed, N]))
        steps = training.steps if training.steps is not None else training.epochs * -(-N // training.batch_size)
        cfg = TrainConfig(steps, training.learning_rate, training.batch_size, training.bound_conv,
                          training.bound_fc, clip_level, seed, training.projection, training.optimizer)
        trained = erm_train(net, data, cfg).net

        def predictor(x):
            return clip_output(cnn_eval_batch(trained, x), clip_level)

        estimate = l2_error(predictor, target, D, probes, seed + 1)
        logger.info("N=%d seed=%d M=%d: L2 error %.4e (+- %.1e)", N, seed, M, estimate.value, estimate.stderr)
        return {"sweep_var": N, "seed": seed, "error": estimate.value, "runtime_s": time.perf_counter() - start,
                "stderr": estimate.stderr, "M": M}

    start = time.perf_counter()
    rows = _run_trials(trial, [(N, s) for N in sample_sizes for s in seeds], threads)
    report = RateReport("estimation", "N", predicted, rows, diagnostic=True, runtime_s=time.perf_counter() - start,
                        parameters={"D": D, "beta": beta, "sigma": sigma, "gradient_check": gradient_error,
                                    "function": getattr(target, "name", "")})
    report.slope = _slope_or_none(report)
    medians = report.medians()
    report.checks["gradient_check"] = gradient_error <= GRADIENT_TOLERANCE
    report.checks["median_decreasing"] = all(b < a for a, b in zip(medians, medians[1:]))
    return report


@dataclass
class VerificationReport:
    instances: int
    probes: int
    max_deviation: float
    exactness_failures: int
    certificate_violations: List[str] = field(default_factory=list)

    @property
    def passed(self):
        return self.exactness_failures == 0 and not self.certificate_violations


def verify_compilation(instances=200, probes=100, seed=0, threads=1):
    """Compile random block-sparse FNNs and check exactness and certificate bounds."""
    def instance(index):
        rng = np.random.default_rng([seed, index])
        D = int(rng.integers(2, 9))
        K = int(rng.integers(2, D + 1))
        f = random_fnn(rng, D, int(rng.integers(1, 7)), (1, 3), (1, 5),
                       bound_bs=float(rng.uniform(0.1, 2.0)), bound_fin=float(rng.uniform(0.1, 2.0)))
        try:
            net, cert = compile_fnn_to_cnn(f, K)
        except CompilationError as e:
            return 0.0, [f"instance {index}: {e}"]
        x = rng.uniform(-1.0, 1.0, (probes, D))
        expected = fnn_eval_batch(f, x)
        deviation = float(np.max(np.abs(cnn_eval_batch(net, x) - expected) / (1.0 + np.abs(expected))))
        return deviation, [f"instance {index}: {v}" for v in cert.violations()]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(instance, range(instances)))
    else:
        results = [instance(i) for i in range(instances)]
    deviations = [d for d, _ in results]
    report = VerificationReport(
        instances=instances,
        probes=probes,
        max_deviation=max(deviations, default=0.0),
        exactness_failures=sum(d > EXACTNESS_RTOL for d in deviations),
        certificate_violations=[v for _, found in results for v in found],
    )
    logger.info("Verified %d compilations: max deviation %.3e", instances, report.max_deviation)
    return report
