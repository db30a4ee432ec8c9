from pathlib import Path

from django.core.management.base import BaseCommand

from corpus.manifest import load_manifest
from corpus.splits import load_split
from pipeline.cli import add_hyperparameter_argument, command_errors, parse_hyperparameters
from pipeline.config import ModelKind
from pipeline.experiment import crop_example, load_labelled, train_segmenter
from roi.detector import load_detector


class Command(BaseCommand):
    help = 'Train an FCN or GAN segmenter on the labelled samples of a manifest.'

    def add_arguments(self, parser):
        parser.add_argument('--model', choices=ModelKind.values, required=True)
        parser.add_argument('--manifest', required=True)
        parser.add_argument('--output', required=True, help='Checkpoint to write.')
        parser.add_argument('--split', help='Split file; only its train ids are used.')
        parser.add_argument('--iterations', type=int, default=32000)
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--pretrained-encoder', help='VGG-16 style state dict for the FCN encoder.')
        parser.add_argument('--detector', help='Detector checkpoint; train on detected ROI crops.')
        add_hyperparameter_argument(parser)

    def handle(self, *args, **options):
        with command_errors():
            samples = load_manifest(options['manifest'])
            if options['split']:
                samples, _ = load_split(options['split']).partition(samples)
            examples = [load_labelled(sample) for sample in samples]
            if options['detector']:
                bundle = load_detector(options['detector'])
                examples = [crop_example(bundle, example)[0] for example in examples]
            output = Path(options['output'])
            segmenter = train_segmenter(
                options['model'], examples, options['iterations'], options['seed'],
                parse_hyperparameters(options['hyperparameters']),
                pretrained_encoder=options['pretrained_encoder'],
                checkpoint_path=output,
                loss_trace_path=output.with_suffix('.loss.jsonl'),
            )
        self.stdout.write(self.style.SUCCESS(
            f"Trained {segmenter.kind} on {len(examples)} images; saved to {output}"
        ))
