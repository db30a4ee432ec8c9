from pathlib import Path

from django.core.management.base import BaseCommand

from corpus.manifest import load_manifest
from corpus.splits import load_split
from iris_segmentation.runtime import seed_everything
from pipeline.cli import command_errors
from roi.detector import DetectorConfig, build_detector, load_pretrained_backbone
from roi.training import train_detector


class Command(BaseCommand):
    help = 'Fine-tune the iris detector on the boxes (or mask boxes) of a manifest.'

    def add_arguments(self, parser):
        parser.add_argument('--manifest', required=True)
        parser.add_argument('--output', required=True, help='Detector checkpoint to write.')
        parser.add_argument('--split', help='Split file; only its train ids are used.')
        parser.add_argument('--iterations', type=int, default=4000)
        parser.add_argument('--batch-size', type=int, default=8)
        parser.add_argument('--learning-rate', type=float, default=1e-3)
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--input-channels', type=int, choices=(1, 3), default=3,
                            help='1 for grayscale (NIR) input, 3 for RGB.')
        parser.add_argument('--pretrained-backbone', help='State dict of ImageNet-style backbone weights.')

    def handle(self, *args, **options):
        with command_errors():
            samples = load_manifest(options['manifest'])
            if options['split']:
                samples, _ = load_split(options['split']).partition(samples)
            config = DetectorConfig(
                iterations=options['iterations'],
                batch_size=options['batch_size'],
                learning_rate=options['learning_rate'],
                seed=options['seed'],
            )
            seed_everything(config.seed)
            model = build_detector(options['input_channels'], config.num_anchors)
            if options['pretrained_backbone']:
                load_pretrained_backbone(model, options['pretrained_backbone'])
            output = Path(options['output'])
            train_detector(model, samples, config, checkpoint_path=output,
                           loss_trace_path=output.with_suffix('.loss.jsonl'))
        self.stdout.write(self.style.SUCCESS(f"Detector trained on {len(samples)} images; saved to {output}"))
