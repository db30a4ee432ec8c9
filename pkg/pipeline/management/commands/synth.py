from django.core.management.base import BaseCommand

from corpus.samples import Spectrum
from pipeline.cli import command_errors
from pipeline.synthetic import generate_synthetic_dataset


class Command(BaseCommand):
    help = 'Generate synthetic eye images with exact iris masks and a manifest.'

    def add_arguments(self, parser):
        parser.add_argument('--n', type=int, required=True, help='Number of images.')
        parser.add_argument('--side', type=int, default=128, help='Image side, a power of two >= 64.')
        parser.add_argument('--seed', type=int, required=True)
        parser.add_argument('--output-dir', required=True)
        parser.add_argument('--dataset', default='SYNTH', help='Dataset name written to the manifest.')
        parser.add_argument('--spectrum', choices=Spectrum.values, default=Spectrum.NIR)
        parser.add_argument('--eyelid-probability', type=float, default=0.3)

    def handle(self, *args, **options):
        with command_errors():
            manifest = generate_synthetic_dataset(
                options['n'], options['side'], options['seed'], options['output_dir'],
                dataset=options['dataset'],
                spectrum=options['spectrum'],
                eyelid_probability=options['eyelid_probability'],
            )
        self.stdout.write(self.style.SUCCESS(f"Wrote {options['n']} images; manifest at {manifest}"))
