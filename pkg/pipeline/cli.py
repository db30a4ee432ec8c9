"""
Shared plumbing for the pipeline's management commands.
"""
from contextlib import contextmanager

import yaml
from django.core.exceptions import ImproperlyConfigured, ValidationError
from django.core.management.base import CommandError

from iris_segmentation.exceptions import PipelineStageError, TrainingDivergenceError

from .config import as_number


@contextmanager
def command_errors():
    """
    Turn pipeline failures into ``CommandError`` so ``manage.py`` prints the
    message and exits non-zero.
    """
    try:
        yield
    except ValidationError as exc:
        raise CommandError('; '.join(exc.messages)) from exc
    except (ImproperlyConfigured, PipelineStageError, TrainingDivergenceError, OSError) as exc:
        raise CommandError(str(exc)) from exc


def parse_hyperparameters(pairs):
    """
    ``["learning_rate=1e-4", "base_width=8"]`` -> ``{"learning_rate": 0.0001, "base_width": 8}``.
    Values are parsed as YAML scalars; exponent floats without a dot count as floats.
    """
    parsed = {}
    for pair in pairs or ():
        key, sep, value = pair.partition('=')
        if not sep or not key.strip():
            raise CommandError(f"Hyper-parameter '{pair}' is not of the form key=value.")
        parsed[key.strip()] = as_number(yaml.safe_load(value))
    return parsed


def add_hyperparameter_argument(parser):
    parser.add_argument(
        '--hp', dest='hyperparameters', action='append', default=[], metavar='KEY=VALUE',
        help='Model hyper-parameter override, e.g. --hp learning_rate=1e-4 (repeatable).',
    )
