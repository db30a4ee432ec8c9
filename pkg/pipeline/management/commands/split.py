from django.core.management.base import BaseCommand

from corpus.manifest import load_manifest
from corpus.splits import fixed_split, save_split, split_dataset
from iris_segmentation.runtime import get_setting
from pipeline.cli import command_errors
from pipeline.config import Scope


class Command(BaseCommand):
    help = 'Split the samples of a manifest into train and test ids (YAML).'

    def add_arguments(self, parser):
        parser.add_argument('--manifest', required=True)
        parser.add_argument('--output', required=True, help='Split file to write.')
        parser.add_argument('--scope', default='merged-ALL')
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--train-fraction', type=float, default=None)
        parser.add_argument('--fixed', action='store_true', help='Use the split tags of the manifest.')

    def handle(self, *args, **options):
        with command_errors():
            samples = Scope.parse(options['scope']).select(load_manifest(options['manifest']))
            if options['fixed']:
                split = fixed_split(samples)
            else:
                fraction = options['train_fraction']
                split = split_dataset(
                    samples, options['seed'], get_setting('TRAIN_FRACTION') if fraction is None else fraction,
                )
            path = save_split(split, options['output'])
        self.stdout.write(self.style.SUCCESS(
            f"{len(split.train_ids)} train / {len(split.test_ids)} test ids written to {path}"
        ))
