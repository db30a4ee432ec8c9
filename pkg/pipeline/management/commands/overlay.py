from django.core.management.base import BaseCommand

from corpus.imaging import load_image, load_mask
from pipeline.cli import command_errors
from pipeline.overlay import render_overlay


class Command(BaseCommand):
    help = 'Paint false positives green and false negatives red over an eye image.'

    def add_arguments(self, parser):
        parser.add_argument('--image', required=True)
        parser.add_argument('--pred', required=True)
        parser.add_argument('--truth', required=True)
        parser.add_argument('--output', required=True)
        parser.add_argument('--alpha', type=float, default=1.0, help='Tint opacity in (0, 1]; 1 paints solid colours.')

    def handle(self, *args, **options):
        with command_errors():
            overlay = render_overlay(
                load_image(options['image']), load_mask(options['pred']), load_mask(options['truth']),
                alpha=options['alpha'],
            )
            path = overlay.save(options['output'])
        self.stdout.write(self.style.SUCCESS(
            f"{int(overlay.false_positives.labels.sum())} FP / {int(overlay.false_negatives.labels.sum())} FN "
            f"pixels; overlay at {path}"
        ))
