"""
Evaluation utilities for comparing the variants of a finished sweep.
"""
import json
import logging
import math
import os
from typing import Dict, List, Optional

import pandas as pd

from report_io import read_summary_json

# Variant orderings expected for each preset, from best to worst final regret.
EXPECTED_ORDERINGS = {
    'fig1_levels': ['identity', 'level_exp_1.5', 'level_exp_1.3', 'level_exp_1', 'level_exp_0.8'],
    'fig4_agents': ['agents_10', 'agents_30', 'agents_50'],
}

CAP_TOLERANCE = 0.10
SUBLINEAR_RATIO = 0.5


class ExperimentEvaluator:
    """
    Loads variant summaries from a results directory and checks the expected
    regret orderings with one pooled standard error of slack.
    """

    def __init__(self, results_dir: str = "results"):
        self.results_dir = results_dir
        self.logger = logging.getLogger(__name__)
        self.manifest = read_summary_json(os.path.join(results_dir, "manifest.json"))
        self.summaries = self._load_summaries()

    @property
    def preset(self) -> str:
        return self.manifest['config']['preset']

    def _load_summaries(self) -> Dict[str, Dict]:
        summaries = {}
        for variant in self.manifest['variants']:
            path = os.path.join(self.results_dir, f"{variant['name']}_summary.json")
            if not os.path.exists(path):
                self.logger.warning(f"Missing summary for variant {variant['name']}")
                continue
            summaries[variant['name']] = read_summary_json(path)
        return summaries

    def _stats(self, name: str) -> Optional[Dict]:
        summary = self.summaries.get(name)
        return summary.get('statistics') if summary else None

    def comparison_table(self) -> pd.DataFrame:
        rows = []
        for name, summary in self.summaries.items():
            stats = summary.get('statistics', {})
            rows.append({
                'variant': name,
                'average_regret': stats.get('final_average_regret_mean'),
                'se': stats.get('final_average_regret_se'),
                'final_regret': stats.get('final_regret_mean'),
                'bound': stats.get('bound_mean'),
                'bits': stats.get('total_bits_mean'),
                'seeds': summary.get('seeds_completed', 0),
            })
        return pd.DataFrame(rows)

    def check_ordering(self, names: List[str]) -> List[Dict]:
        """
        For consecutive variants a, b check mean_a <= mean_b + sqrt(se_a^2 + se_b^2).
        """
        checks = []
        for first, second in zip(names, names[1:]):
            a, b = self._stats(first), self._stats(second)
            if a is None or b is None:
                checks.append({'pair': [first, second], 'ok': False, 'reason': 'missing statistics'})
                continue
            slack = math.hypot(a['final_average_regret_se'], b['final_average_regret_se'])
            ok = a['final_average_regret_mean'] <= b['final_average_regret_mean'] + slack
            checks.append({'pair': [first, second], 'ok': bool(ok), 'slack': slack,
                           'means': [a['final_average_regret_mean'], b['final_average_regret_mean']]})
        return checks

    def check_cap_effect(self) -> Dict:
        """B=100 stays within 10% of the uncapped run and B=50 is worse than B=100."""
        cap50, cap100, uncapped = self._stats('cap_50'), self._stats('cap_100'), self._stats('cap_none')
        if cap50 is None or cap100 is None or uncapped is None:
            return {'ok': False, 'reason': 'missing statistics'}
        scale = max(abs(uncapped['final_average_regret_mean']), 1e-12)
        relative = abs(cap100['final_average_regret_mean'] - uncapped['final_average_regret_mean']) / scale
        slack = math.hypot(cap50['final_average_regret_se'], cap100['final_average_regret_se'])
        worse = cap50['final_average_regret_mean'] > cap100['final_average_regret_mean'] + slack
        return {'ok': bool(relative <= CAP_TOLERANCE and worse), 'relative_difference_100': relative,
                'cap50_worse': bool(worse)}

    def sublinearity(self, name: str) -> Dict:
        """Average regret at T against its value at T/4."""
        stats = self._stats(name)
        if stats is None:
            return {'ok': False, 'reason': 'missing statistics'}
        quarter = stats['average_regret_quarter_mean']
        if quarter <= 0:
            return {'ok': False, 'reason': 'nonpositive average regret at T/4'}
        ratio = stats['final_average_regret_mean'] / quarter
        return {'ok': bool(ratio < SUBLINEAR_RATIO), 'ratio': ratio}

    def bound_sanity(self, name: str) -> Dict:
        stats = self._stats(name)
        if stats is None:
            return {'ok': False, 'reason': 'missing statistics'}
        ratio = stats['final_regret_mean'] / stats['bound_mean'] if stats['bound_mean'] > 0 else None
        return {'ok': bool(stats['final_regret_mean'] <= stats['bound_mean']), 'ratio': ratio}

    def generate_report(self, output_file: Optional[str] = None) -> Dict:
        """Run every check that applies to the preset and save the report as JSON."""
        report = {
            'preset': self.preset,
            'variants': list(self.summaries),
            'sublinearity': {name: self.sublinearity(name) for name in self.summaries},
            'bound_sanity': {name: self.bound_sanity(name) for name in self.summaries},
        }
        if self.preset in EXPECTED_ORDERINGS:
            report['ordering'] = self.check_ordering(EXPECTED_ORDERINGS[self.preset])
        if self.preset == 'fig2_cap':
            report['cap_effect'] = self.check_cap_effect()
        if self.preset == 'fig3_stepsizes':
            table = self.comparison_table().sort_values('average_regret')
            report['ranking'] = table['variant'].tolist()

        if output_file is None:
            output_file = os.path.join(self.results_dir, "evaluation_report.json")
        with open(output_file, 'w', encoding='utf-8') as f:
            json.dump(report, f, indent=2, ensure_ascii=False)
        self.logger.info(f"Evaluation report saved to: {output_file}")
        return report


def main():
    """
    Command-line interface for evaluation utilities.
    """
    import argparse

    parser = argparse.ArgumentParser(description="Compare the variants of a finished sweep.")
    parser.add_argument("--results", default="results", help="Results directory of a sweep")
    parser.add_argument("--output", help="Output file for the evaluation report")
    parser.add_argument("--table", action="store_true", help="Print the variant comparison table")
    parser.add_argument("--verbose", action="store_true", help="Enable verbose logging")

    args = parser.parse_args()

    log_level = logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=log_level, format='%(asctime)s - %(levelname)s - %(message)s')

    evaluator = ExperimentEvaluator(args.results)
    if args.table:
        print(evaluator.comparison_table().to_string(index=False))

    report = evaluator.generate_report(args.output)
    print(f"\n=== EVALUATION SUMMARY ({report['preset']}) ===")
    for check in report.get('ordering', []):
        status = "ok" if check['ok'] else "VIOLATED"
        print(f"  {check['pair'][0]} <= {check['pair'][1]}: {status}")
    if 'cap_effect' in report:
        print(f"  cap effect: {'ok' if report['cap_effect']['ok'] else 'VIOLATED'}")
    for name, check in report['sublinearity'].items():
        if 'ratio' in check:
            print(f"  {name}: regret/t ratio T vs T/4 = {check['ratio']:.3f}")


if __name__ == "__main__":
    main()
