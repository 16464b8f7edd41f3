"""
Seeded experiment sweeps: variants x seeds as an independent job pool, with per-job
trace files, per-variant summaries and a manifest of the effective configuration.
"""
import hashlib
import logging
import os
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from multiprocessing import Pool
from typing import Dict, List, Tuple

import numpy as np

from config_manager import ExperimentConfig, Variant, check_config, expand_variants, validate_config
from engine import (AssumptionFinding, AssumptionViolationError, ConfigurationError, RunAbortedError,
                    RunConfig, run, validate_assumptions)
from metrics import (ComparatorError, bound_for_trace, build_report, comparator_losses, comparator_sequence,
                     seed_statistics, variations)
from network import GraphConstructionError, generate_graphs
from problem import estimate_constants, generate_regression_stream, make_constraint_set
from report_io import write_summary_json, write_trace_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ASSUMPTION = 3
EXIT_RUNTIME = 4

CONVENTIONS = ("Horizon T and seed list are this tool's defaults; preset data, graphs and "
               "ground truth are generated from the job seed.")


def engine_seed(seed: int, variant_name: str) -> int:
    """Quantizer stream seed: the job seed XOR a 64-bit hash of the variant name."""
    digest = hashlib.sha256(variant_name.encode('utf-8')).digest()
    return seed ^ int.from_bytes(digest[:8], 'big')


def build_problem(config: ExperimentConfig, seed: int):
    """Constraint set, loss stream and validated graph sequence for one seed."""
    p, g = config.problem, config.network
    constraint_set = make_constraint_set(p.set_kind, p.radius, p.d)
    problem = generate_regression_stream(seed, p.n, p.d, p.T, p.rho, constraint_set=constraint_set,
                                         static=p.static)
    try:
        graphs = generate_graphs(g.graph, p.n, p.T, g.window_Q, seed, extra_edge_prob=g.extra_edge_prob)
    except GraphConstructionError as e:
        raise AssumptionViolationError([AssumptionFinding("network connectivity", False, str(e))]) from e
    return problem, constraint_set, graphs


def _problem_key(config: ExperimentConfig) -> Tuple:
    p, g = config.problem, config.network
    return (p.n, p.d, p.T, p.rho, p.radius, p.set_kind, p.static, g.graph, g.window_Q, g.extra_edge_prob)


def _error_code(error: Exception) -> int:
    if isinstance(error, AssumptionViolationError):
        return EXIT_ASSUMPTION
    if isinstance(error, (ConfigurationError, ValueError)):
        return EXIT_CONFIG
    return EXIT_RUNTIME


def _failure(variant: str, seed: int, error: Exception) -> Dict:
    return {'variant': variant, 'seed': seed, 'error': str(error), 'exit_code': _error_code(error)}


def _run_group(job: Tuple[int, List[Variant], str]) -> List[Dict]:
    """
    Run every variant sharing one loss stream and network for a single seed; the
    comparators and variations are computed once for the group.
    """
    seed, variants, output_dir = job
    base = variants[0].config
    try:
        problem, constraint_set, graphs = build_problem(base, seed)
        constants = estimate_constants(problem, constraint_set)
        comparators, gaps = comparator_sequence(problem, constraint_set, base.runner.comparator_tol)
        best = comparator_losses(problem, comparators)
        H_T, D_T = variations(problem, constraint_set, base.runner.variation_samples)
    except (ConfigurationError, ValueError, ComparatorError) as e:
        logger.error(f"Seed {seed}: setup failed: {e}")
        return [_failure(v.name, seed, e) for v in variants]

    results = []
    for variant in variants:
        cfg = variant.config
        spec = cfg.quantizer.to_spec()
        run_config = RunConfig(problem=problem, graphs=graphs, constraint_set=constraint_set,
                               state_quantizer=spec, grad_quantizer=spec, alpha=cfg.step.alpha,
                               kappa2=cfg.step.kappa2, gamma=cfg.step.gamma,
                               seed=engine_seed(seed, variant.name))
        try:
            logger.info(f"Running variant {variant.name} with seed {seed}")
            trace = run(run_config, constants)
            bound, bc = bound_for_trace(trace, graphs.zeta, graphs.Q, constraint_set, constants, H_T, D_T)
            report = build_report(trace, problem, comparators, gaps, H_T, D_T, bound, best)
        except (ConfigurationError, RunAbortedError, ValueError) as e:
            logger.error(f"Error running {variant.name} with seed {seed}: {e}")
            results.append(_failure(variant.name, seed, e))
            continue

        trace_file = os.path.join(output_dir, f"{variant.name}_seed{seed}.csv")
        write_trace_csv(trace, report, trace_file)
        T = trace.T
        mean_regret = float(np.mean(report.final_regret))
        results.append({
            'variant': variant.name,
            'seed': seed,
            'trace_file': os.path.basename(trace_file),
            'final_regret_per_agent': report.final_regret.tolist(),
            'mean_final_regret': mean_regret,
            'final_average_regret': report.final_average,
            'average_regret_t10': float(report.global_average[min(10, T) - 1]),
            'average_regret_quarter': float(report.global_average[max(T // 4, 1) - 1]),
            'H_T': H_T,
            'D_T': D_T,
            'bound': bound,
            'bound_ratio': mean_regret / bound if bound > 0 else None,
            'total_bits': report.total_bits,
            'fallback_count': trace.fallback_count,
            'final_consensus_error': float(trace.consensus_error[-1]),
            'consensus_error_t2': float(trace.consensus_error[min(2, T) - 1]),
            'max_comparator_gap': float(np.max(gaps)),
            'alpha': trace.alpha,
            'lipschitz': constants.lipschitz,
            'smoothness': constants.smoothness,
            'zeta': graphs.zeta,
            'constants': asdict(bc),
            'notes': dict(report.notes),
        })
    return results


@dataclass
class ExperimentResult:
    exit_code: int
    output_dir: str
    summaries: Dict[str, Dict] = field(default_factory=dict)
    failures: List[Dict] = field(default_factory=list)


class ExperimentRunner:
    """
    Runs a preset sweep and writes its trace CSVs, variant summaries and manifest.
    """

    def __init__(self, config: ExperimentConfig):
        check_config(config)
        self.config = config
        self.output_dir = config.runner.output_dir
        self.logger = logging.getLogger(__name__)
        self.variants = expand_variants(config)
        os.makedirs(self.output_dir, exist_ok=True)

    def _jobs(self) -> List[Tuple[int, List[Variant], str]]:
        groups: Dict[Tuple, List[Variant]] = OrderedDict()
        for variant in self.variants:
            groups.setdefault(_problem_key(variant.config), []).append(variant)
        return [(seed, members, self.output_dir)
                for members in groups.values() for seed in self.config.runner.seeds]

    def run_all(self) -> ExperimentResult:
        jobs = self._jobs()
        workers = min(self.config.runner.workers, len(jobs))
        self.logger.info(f"Running {len(self.variants)} variants x {len(self.config.runner.seeds)} seeds "
                         f"as {len(jobs)} jobs on {workers} worker(s)")
        if workers > 1:
            with Pool(processes=workers) as pool:
                grouped = pool.map(_run_group, jobs)
        else:
            grouped = [_run_group(job) for job in jobs]

        by_variant: Dict[str, List[Dict]] = OrderedDict((v.name, []) for v in self.variants)
        for group in grouped:
            for result in group:
                by_variant[result['variant']].append(result)

        summaries = {}
        failures = []
        for variant in self.variants:
            results = sorted(by_variant[variant.name], key=lambda r: r['seed'])
            failures.extend(r for r in results if 'error' in r)
            summary = self._summarize(variant, results)
            write_summary_json(summary, os.path.join(self.output_dir, f"{variant.name}_summary.json"))
            summaries[variant.name] = summary

        self._write_manifest()
        exit_code = failures[0]['exit_code'] if failures else EXIT_OK
        self._print_summary(summaries, failures)
        return ExperimentResult(exit_code=exit_code, output_dir=self.output_dir, summaries=summaries,
                                failures=failures)

    def _summarize(self, variant: Variant, results: List[Dict]) -> Dict:
        ok = [r for r in results if 'error' not in r]
        summary = {
            'variant': variant.name,
            'preset': self.config.preset,
            'seeds_completed': len(ok),
            'seeds_failed': len(results) - len(ok),
            'runs': results,
        }
        if ok:
            mean, se = seed_statistics([r['final_average_regret'] for r in ok])
            regret_mean, regret_se = seed_statistics([r['mean_final_regret'] for r in ok])
            summary['statistics'] = {
                'final_average_regret_mean': mean,
                'final_average_regret_se': se,
                'final_regret_mean': regret_mean,
                'final_regret_se': regret_se,
                'final_regret_per_agent_mean': np.mean([r['final_regret_per_agent'] for r in ok], axis=0).tolist(),
                'average_regret_quarter_mean': seed_statistics([r['average_regret_quarter'] for r in ok])[0],
                'average_regret_t10_mean': seed_statistics([r['average_regret_t10'] for r in ok])[0],
                'H_T_mean': seed_statistics([r['H_T'] for r in ok])[0],
                'D_T_mean': seed_statistics([r['D_T'] for r in ok])[0],
                'bound_mean': seed_statistics([r['bound'] for r in ok])[0],
                'total_bits_mean': seed_statistics([r['total_bits'] for r in ok])[0],
                'fallback_count_total': int(sum(r['fallback_count'] for r in ok)),
            }
        return summary

    def _write_manifest(self):
        manifest = {
            'config': self.config.to_dict(),
            'variants': [{'name': v.name, 'config': v.config.to_dict(),
                          'engine_seeds': {str(s): engine_seed(s, v.name) for s in self.config.runner.seeds}}
                         for v in self.variants],
            'conventions': CONVENTIONS,
        }
        write_summary_json(manifest, os.path.join(self.output_dir, "manifest.json"))

    def _print_summary(self, summaries: Dict[str, Dict], failures: List[Dict]):
        print(f"\n=== EXPERIMENT SUMMARY ===")
        print(f"Preset: {self.config.preset}")
        print(f"Seeds: {self.config.runner.seeds}")
        for name, summary in summaries.items():
            stats = summary.get('statistics')
            if stats:
                print(f"  {name}: average regret {stats['final_average_regret_mean']:.6g} "
                      f"± {stats['final_average_regret_se']:.2g}, bits {stats['total_bits_mean']:.4g}")
            else:
                print(f"  {name}: no completed runs")
        if failures:
            print(f"\nFailed runs:")
            for failure in failures:
                print(f"  - {failure['variant']} seed {failure['seed']}: {failure['error']}")


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """
    Run a sweep and write its outputs.

    Raises:
        ConfigError: a configuration key is invalid.
    """
    return ExperimentRunner(config).run_all()


def validate(config: ExperimentConfig) -> List[AssumptionFinding]:
    """
    Check configuration values and, for the first seed of every distinct problem, the
    network, set and loss assumptions. Returns findings and never raises.
    """
    issues = validate_config(config)
    if issues:
        return [AssumptionFinding("problem validity", False, issue) for issue in issues]

    findings = [AssumptionFinding("problem validity", True)]
    seed = config.runner.seeds[0]
    seen = set()
    for variant in expand_variants(config):
        key = _problem_key(variant.config)
        if key in seen:
            continue
        seen.add(key)
        try:
            problem, constraint_set, graphs = build_problem(variant.config, seed)
        except AssumptionViolationError as e:
            findings.extend(e.findings)
            continue
        except ValueError as e:
            findings.append(AssumptionFinding("problem validity", False, f"{variant.name}: {e}"))
            continue
        findings.extend(validate_assumptions(problem, constraint_set, graphs))
    return findings


def main():
    """
    Command-line interface for running a configured sweep.
    """
    import argparse

    from config_manager import ConfigManager, apply_environment

    parser = argparse.ArgumentParser(description="Run the configured experiment sweep.")
    parser.add_argument("--config", default="config.json", help="Configuration file")
    parser.add_argument("--verbose", action="store_true", help="Enable verbose logging")

    args = parser.parse_args()

    log_level = logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=log_level, format='%(asctime)s - %(levelname)s - %(message)s')

    config = apply_environment(ConfigManager(args.config).get_config())
    result = run_experiment(config)
    print(f"\nExperiment complete! Results saved to {result.output_dir}/")
    return result.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
