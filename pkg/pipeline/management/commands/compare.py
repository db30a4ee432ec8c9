from pathlib import Path

import yaml
from django.core.management.base import BaseCommand

from evaluation.reports import comparison_dict, read_records_csv
from pipeline.cli import command_errors
from pipeline.compare import compare_methods


class Command(BaseCommand):
    help = 'Paired t-tests of two methods on per-image E and F1.'

    def add_arguments(self, parser):
        parser.add_argument('records_a', help='per_image.csv of method A.')
        parser.add_argument('records_b', help='per_image.csv of method B.')
        parser.add_argument('--alpha', type=float, default=None)
        parser.add_argument('--output', help='YAML file for the test results.')

    def handle(self, *args, **options):
        with command_errors():
            comparison = compare_methods(
                read_records_csv(options['records_a']), read_records_csv(options['records_b']), options['alpha'],
            )
            report = comparison_dict(comparison)
            if options['output']:
                path = Path(options['output'])
                path.parent.mkdir(parents=True, exist_ok=True)
                with path.open('w', encoding='utf-8') as handle:
                    yaml.safe_dump({'n': comparison.n, **report}, handle, sort_keys=False)
        for metric, result in report.items():
            verdict = f"method {result['better'].upper()} is better" if result['better'] else 'no significant difference'
            self.stdout.write(
                f"{metric.upper()}: t={result['t_statistic']:.4f} df={result['degrees_of_freedom']} "
                f"p={result['p_value']:.4g} -> {verdict}"
            )
