#!/usr/bin/env python3
"""Hölder approximation sweep: grid sup-error of compiled CNNs against the block budget M."""
import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from src.core.harness import approx_rate_experiment  # noqa: E402
from src.utils.config import configure_logging, load_config  # noqa: E402
from src.utils.function_library import get_function  # noqa: E402


def run_sweep(out_dir):
    config = load_config()
    exp = config.experiments
    report = approx_rate_experiment("holder", get_function(exp.function), exp.dim, exp.holder_budgets, [0],
                                    beta=exp.beta, K=exp.filter_size, grid_points=config.data.grid_points,
                                    threads=config.runtime.threads, sample_points=config.data.sample_points)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_csv(out_dir / "holder_rate.csv")
    for row in report.rows:
        print(f"M={row['sweep_var']:<4} error {row['error']:.4e}  budget {row['budget']:.4e}")
    slope = "n/a" if report.slope is None else f"{report.slope:.3f}"
    print(f"slope {slope} (predicted {report.predicted_exponent:.3f})")
    print("✓ Sweep passed" if report.passed else "✗ Sweep failed")
    return report.passed


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="data/reports")
    args = parser.parse_args()
    configure_logging()
    sys.exit(0 if run_sweep(Path(args.out_dir)) else 1)
