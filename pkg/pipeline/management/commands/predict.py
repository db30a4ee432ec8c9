from pathlib import Path

from django.core.management.base import BaseCommand

from corpus.imaging import load_image, save_mask
from corpus.manifest import load_manifest
from corpus.splits import load_split
from pipeline.cli import command_errors
from pipeline.experiment import load_segmenter, segment
from roi.detector import load_detector


class Command(BaseCommand):
    help = 'Predict full-resolution iris masks for the images of a manifest.'

    def add_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True, help='FCN or GAN checkpoint.')
        parser.add_argument('--manifest', required=True)
        parser.add_argument('--output-dir', required=True, help='Masks are written as <id>.png.')
        parser.add_argument('--split', help='Split file; only its test ids are predicted.')
        parser.add_argument('--detector', help='Detector checkpoint; predict on ROI crops and paste back.')

    def handle(self, *args, **options):
        with command_errors():
            samples = load_manifest(options['manifest'])
            if options['split']:
                _, samples = load_split(options['split']).partition(samples)
            segmenter = load_segmenter(options['checkpoint'])
            bundle = load_detector(options['detector']) if options['detector'] else None
            output_dir = Path(options['output_dir'])
            for sample in samples:
                pred = segment(segmenter, load_image(sample.image_path), bundle)
                save_mask(pred, output_dir / f"{sample.id}.png")
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(samples)} masks to {output_dir}"))
