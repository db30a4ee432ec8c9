from pathlib import Path

from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand

from corpus.imaging import load_mask
from corpus.manifest import load_manifest
from corpus.splits import load_split
from evaluation.metrics import evaluate_sample
from evaluation.reports import write_aggregates_csv, write_records_csv, write_summary
from evaluation.stats import aggregate_by_dataset
from pipeline.cli import command_errors


class Command(BaseCommand):
    help = 'Score predicted masks against the ground truth of a manifest.'

    def add_arguments(self, parser):
        parser.add_argument('--manifest', required=True)
        parser.add_argument('--predictions', required=True, help='Directory of <id>.png masks.')
        parser.add_argument('--output-dir', required=True)
        parser.add_argument('--split', help='Split file; only its test ids are scored.')

    def handle(self, *args, **options):
        with command_errors():
            samples = load_manifest(options['manifest'])
            if options['split']:
                _, samples = load_split(options['split']).partition(samples)
            unlabelled = [sample.id for sample in samples if not sample.has_mask]
            if unlabelled:
                raise ValidationError(f"Samples without a ground-truth mask: {', '.join(unlabelled)}.")
            predictions = Path(options['predictions'])
            records = [
                evaluate_sample(sample.id, load_mask(predictions / f"{sample.id}.png"),
                                load_mask(sample.mask_path), sample.dataset)
                for sample in samples
            ]
            rows = aggregate_by_dataset(records)
            output_dir = Path(options['output_dir'])
            write_records_csv(records, output_dir / 'per_image.csv')
            write_aggregates_csv(rows, output_dir / 'aggregates.csv')
            write_summary(rows, output_dir / 'summary.yaml', n_test=len(records))
        pooled = rows[-1]
        self.stdout.write(self.style.SUCCESS(
            f"E {100 * pooled.mean_e:.2f}% +- {100 * pooled.std_e:.2f}, "
            f"F1 {100 * pooled.mean_f1:.2f}% +- {100 * pooled.std_f1:.2f} over {pooled.n} images"
        ))
