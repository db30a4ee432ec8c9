from django.core.management.base import BaseCommand

from pipeline.cli import add_hyperparameter_argument, command_errors, parse_hyperparameters
from pipeline.config import ModelKind, SplitMode, load_experiment_config
from pipeline.experiment import run_experiment
from pipeline.records import record_run


class Command(BaseCommand):
    help = 'Run a full experiment: split, optional ROI stage, training, evaluation and reports.'

    def add_arguments(self, parser):
        parser.add_argument('--config', help='YAML file of experiment settings; flags override it.')
        parser.add_argument('--seed', type=int, required=True)
        parser.add_argument('--manifest')
        parser.add_argument('--model', choices=ModelKind.values)
        parser.add_argument('--scope', help='single:<dataset>, merged-NIR, merged-VIS or merged-ALL.')
        parser.add_argument('--output-dir')
        parser.add_argument('--iterations', type=int)
        parser.add_argument('--train-fraction', type=float)
        parser.add_argument('--split-seed', type=int)
        parser.add_argument('--split-mode', choices=SplitMode.values)
        parser.add_argument('--use-roi-stage', action='store_true', default=None)
        parser.add_argument('--detector-checkpoint')
        parser.add_argument('--pretrained-encoder')
        parser.add_argument('--overlay-all', action='store_true', default=None)
        parser.add_argument('--no-record', action='store_true', help='Skip storing the run in the database.')
        add_hyperparameter_argument(parser)

    def handle(self, *args, **options):
        with command_errors():
            config = load_experiment_config(
                options['config'],
                seed=options['seed'],
                manifest=options['manifest'],
                model=options['model'],
                scope=options['scope'],
                output_dir=options['output_dir'],
                iterations=options['iterations'],
                train_fraction=options['train_fraction'],
                split_seed=options['split_seed'],
                split_mode=options['split_mode'],
                use_roi_stage=options['use_roi_stage'],
                detector_checkpoint=options['detector_checkpoint'],
                pretrained_encoder=options['pretrained_encoder'],
                overlay_all=options['overlay_all'],
                hyperparameters=parse_hyperparameters(options['hyperparameters']) or None,
            )
            result = run_experiment(config)
            run = None if options['no_record'] else record_run(result)

        for row in result.aggregates:
            self.stdout.write(
                f"{row.label}: n={row.n} E {100 * row.mean_e:.2f}% +- {100 * row.std_e:.2f}, "
                f"F1 {100 * row.mean_f1:.2f}% +- {100 * row.std_f1:.2f}"
            )
        recorded = f" (recorded as run {run.id})" if run is not None else ''
        self.stdout.write(self.style.SUCCESS(f"Reports in {config.output_dir}{recorded}"))
