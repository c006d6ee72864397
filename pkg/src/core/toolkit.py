#!/usr/bin/env python3
"""
Command-line toolkit: compile block-sparse FNNs into ResNet-type CNNs, verify
compilations, evaluate complexity functionals, build approximators and run
rate experiments.

    python -m src.core.toolkit compile --in fnn.json --out cnn.json --filter-size 2
    python -m src.core.toolkit experiment approx-rate --kind holder
"""

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from src.core.approximators import (
    TaylorOracle,
    barron_cnn,
    evaluation_grid,
    fit_barron_ridges,
    holder_cnn,
    holder_params,
)
from src.core.cnn import cnn_eval_batch
from src.core.compiler import compile_constant_depth, compile_fnn_to_cnn
from src.core.complexity import ArchSummary, arch_from_cnn, complexity_report, lipschitz_check
from src.core.harness import (
    FIT_GRID_POINTS,
    FIT_SAMPLE_POINTS,
    RateReport,
    approx_rate_experiment,
    estimation_rate_experiment,
    verify_compilation,
)
from src.utils import serialization
from src.utils.config import configure_logging, load_config
from src.utils.errors import RescnnError
from src.utils.function_library import get_function

logger = logging.getLogger(__name__)


class ToolkitRunner:
    def __init__(self, args, config):
        self.args = args
        self.config = config
        self.threads = getattr(args, "threads", None) or config.runtime.threads

    def compile(self):
        f = serialization.load(self.args.input, "block_sparse_fnn")
        uniform = not self.args.heterogeneous_channels and self.config.compiler.uniform_channels
        if self.args.constant_depth is not None:
            net, cert = compile_constant_depth(f, self.args.constant_depth, self.args.filter_size, uniform)
        else:
            net, cert = compile_fnn_to_cnn(f, self.args.filter_size, uniform)
        out = Path(self.args.out)
        serialization.save(net, out)
        cert_path = Path(self.args.cert) if self.args.cert else out.with_suffix(".cert.json")
        serialization.save(cert, cert_path)
        print(f"Compiled M={f.M} FNN into {net.M} residual blocks (trunk channels {net.trunk_channels})")
        print(f"  depths:   {cert.depths}")
        print(f"  B_conv:   {cert.realized_conv:.6g} (claimed {cert.claimed_conv:.6g})")
        print(f"  B_fc:     {cert.realized_fc:.6g} (claimed {cert.claimed_fc:.6g})")
        print(f"📁 Model: {out}  Certificate: {cert_path}")
        return cert.sound

    def verify(self):
        report = verify_compilation(self.args.instances, self.args.probes, self.args.seed, self.threads)
        print(f"Verified {report.instances} random compilations, {report.probes} probes each")
        print(f"  max relative deviation: {report.max_deviation:.3e}")
        print(f"  exactness failures:     {report.exactness_failures}")
        print(f"  certificate violations: {len(report.certificate_violations)}")
        for violation in report.certificate_violations[:10]:
            print(f"    {violation}")
        return report.passed

    def complexity(self):
        model = serialization.load(self.args.arch, ("arch_summary", "resnet_cnn"))
        arch = model if isinstance(model, ArchSummary) else arch_from_cnn(model)
        if self.args.masked and not arch.masked:
            arch = ArchSummary(arch.D, arch.C0, arch.depths, arch.channels, arch.filters, arch.B_conv, arch.B_fc,
                               masked=True)
        report = complexity_report(arch, self.args.eps)
        print(f"Architecture: D={arch.D}, C0={arch.C0}, M={arch.M}, depths={arch.depths}")
        print(f"  Lambda1:      {report.lambda1:.6g} (log {report.log_lambda1:.6g})")
        print(f"  Lambda2:      {report.lambda2}")
        if report.covering_log is not None:
            print(f"  log N(eps={report.eps:g}): {report.covering_log:.6g}")
        if self.args.out:
            serialization.save(report, self.args.out)
        return True

    def _error_report(self, kind, M, error, started):
        report = RateReport(kind, "M", float("nan"))
        report.rows.append({"sweep_var": M, "seed": getattr(self.args, "seed", 0), "error": error,
                            "runtime_s": time.perf_counter() - started})
        return report

    def approx(self):
        started = time.perf_counter()
        target = get_function(self.args.fn)
        D, M, K = self.args.dim, self.args.budget, self.args.filter_size
        grid = evaluation_grid(D, self.config.data.grid_points, samples=self.config.data.sample_points)
        if self.args.kind == "holder":
            oracle = TaylorOracle.from_function(target, self.args.beta, D)
            net, cert = holder_cnn(oracle, M, D, K, self.args.constant_depth)
            budget = holder_params(oracle, M, D).error_budget(oracle.holder_norm)
        else:
            fit_grid = evaluation_grid(D, min(self.config.data.grid_points, FIT_GRID_POINTS),
                                       samples=min(self.config.data.sample_points, FIT_SAMPLE_POINTS))
            candidates = self.args.candidates or self.config.experiments.candidate_budget
            ridges = fit_barron_ridges(target, D, M, candidates, fit_grid, self.args.seed)
            net, cert = barron_cnn(ridges, K)
            budget = None
        error = float(np.max(np.abs(cnn_eval_batch(net, grid) - target(grid))))
        print(f"{self.args.kind} approximator for {target.name}: D={D}, M={M}, K={K}")
        print(f"  residual blocks: {net.M}, max depth {max(cert.depths)}")
        print(f"  grid sup-error:  {error:.4e}" + ("" if budget is None else f" (budget {budget:.4e})"))
        if self.args.out:
            serialization.save(net, self.args.out)
        if self.args.report:
            self._error_report(self.args.kind, M, error, started).write_csv(self.args.report)
        return cert.sound and (budget is None or error <= budget)

    def experiment(self):
        exp, data, training = self.config.experiments, self.config.data, self.config.training
        seeds = self.args.seeds or exp.seeds
        D = self.args.dim or exp.dim
        beta = self.args.beta or exp.beta
        if self.args.name == "approx-rate":
            kind = self.args.kind
            name = self.args.fn or (exp.function if kind == "holder" else exp.barron_function)
            budgets = self.args.budgets or (exp.holder_budgets if kind == "holder" else exp.barron_budgets)
            report = approx_rate_experiment(kind, get_function(name), D, budgets, seeds, beta=beta,
                                            K=self.args.filter_size or exp.filter_size,
                                            grid_points=data.grid_points, candidate_budget=exp.candidate_budget,
                                            threads=self.threads, sample_points=data.sample_points)
        else:
            report = estimation_rate_experiment(get_function(self.args.fn or exp.function), beta, D,
                                                self.args.sizes or exp.sample_sizes, seeds, training,
                                                sigma=data.noise_sigma, probes=data.probes, channels=exp.channels,
                                                K=self.args.filter_size or exp.filter_size,
                                                grid_points=data.grid_points, threads=self.threads,
                                                sample_points=data.sample_points)
        self._print_rate_report(report)
        if self.args.csv:
            report.write_csv(self.args.csv)
        if self.args.summary:
            summary = {k: v for k, v in asdict(report).items() if k != "rows"}
            summary["medians"] = dict(zip(map(str, report.sweep_values()), report.medians()))
            with open(self.args.summary, "w") as f:
                json.dump(summary, f, indent=2)
        return report.passed

    def _print_rate_report(self, report):
        label = "diagnostic " if report.diagnostic else ""
        print(f"{report.kind} {label}rate sweep over {report.sweep_name} ({report.runtime_s:.1f}s)")
        for value, median in zip(report.sweep_values(), report.medians()):
            print(f"  {report.sweep_name}={value:<6} median error {median:.4e}")
        slope = "n/a" if report.slope is None else f"{report.slope:.3f}"
        print(f"  slope {slope}, predicted {report.predicted_exponent:.3f}")
        for name, ok in report.checks.items():
            print(f"  {'✅' if ok else '❌'} {name}")

    def lipschitz(self):
        net = serialization.load(self.args.model, "resnet_cnn")
        report = lipschitz_check(net, self.args.eps, self.args.trials, self.args.probes, self.args.seed, self.threads)
        print(f"Lipschitz check at eps={report.eps:g}: Lambda1 = {report.lambda1:.6g}")
        print(f"  max difference {report.max_difference:.4e} vs bound {report.bound:.4e}")
        print(f"  violations: {report.violations}/{report.trials}")
        if self.args.out:
            serialization.save(report, self.args.out)
        return report.passed

    def run(self):
        """Dispatch the selected command; True on success."""
        try:
            success = getattr(self, self.args.command.replace("-", "_"))()
        except (RescnnError, OSError) as e:
            print(f"❌ Error: {e}")
            return False
        print("✅ Done" if success else "❌ Acceptance check failed")
        return success


def _int_list(text):
    return [int(v) for v in text.split(",") if v]


def build_parser():
    parser = argparse.ArgumentParser(description="Compile block-sparse FNNs into ResNet-type CNNs and study their rates")
    parser.add_argument("--config", help="Path to a YAML config (default: config.yml)")
    parser.add_argument("--verbose", action="store_true", help="Enable debug logging")
    parser.add_argument("--threads", type=int, help="Worker threads for seed-parallel trials")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("compile", help="Compile an FNN JSON into a CNN JSON")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--filter-size", type=int, required=True)
    p.add_argument("--constant-depth", type=int)
    p.add_argument("--cert")
    p.add_argument("--heterogeneous-channels", action="store_true")

    p = commands.add_parser("verify", help="Randomized compilation exactness sweep")
    p.add_argument("--instances", type=int, default=200)
    p.add_argument("--probes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)

    p = commands.add_parser("complexity", help="Complexity functionals of an architecture")
    p.add_argument("--arch", required=True)
    p.add_argument("--eps", type=float)
    p.add_argument("--masked", action="store_true")
    p.add_argument("--out")

    p = commands.add_parser("approx", help="Build a Hölder or Barron approximator")
    p.add_argument("kind", choices=["holder", "barron"])
    p.add_argument("--beta", type=float, default=2.0)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--fn", required=True)
    p.add_argument("--filter-size", type=int, default=2)
    p.add_argument("--constant-depth", type=int)
    p.add_argument("--candidates", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--report")

    p = commands.add_parser("experiment", help="Approximation or estimation rate sweeps")
    p.add_argument("name", choices=["approx-rate", "est-rate"])
    p.add_argument("--kind", choices=["holder", "barron"], default="holder")
    p.add_argument("--fn")
    p.add_argument("--dim", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--filter-size", type=int)
    p.add_argument("--budgets", type=_int_list)
    p.add_argument("--sizes", type=_int_list)
    p.add_argument("--seeds", type=_int_list)
    p.add_argument("--csv")
    p.add_argument("--summary")

    p = commands.add_parser("lipschitz", help="Empirical parameter-Lipschitz certification")
    p.add_argument("--model", required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--probes", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        config = load_config(args.config)
    except RescnnError as e:
        print(f"❌ Error: {e}")
        sys.exit(1)

    runner = ToolkitRunner(args, config)
    success = runner.run()

    sys.exit(0 if success else 1)


if __name__ == "__main__":
    main()
