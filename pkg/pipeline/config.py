import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml
from django.core.exceptions import ImproperlyConfigured
from django.db import models
from rest_framework import serializers

from corpus.samples import Spectrum
from iris_segmentation.runtime import get_setting

logger = logging.getLogger(__name__)


class ModelKind(models.TextChoices):
    FCN = 'fcn', 'FCN'
    GAN = 'gan', 'Conditional GAN'


class SplitMode(models.TextChoices):
    AUTO = 'auto', 'Fixed split when every sample is tagged, else random'
    RANDOM = 'random', 'Seeded random split'
    FIXED = 'fixed', 'Split tags from the manifest'


@dataclass(frozen=True)
class Scope:
    """
    Which datasets of a manifest an experiment trains and tests on.

    ``kind`` is ``single`` (one named dataset) or ``merged`` over a spectrum,
    where ``spectrum`` ``None`` means every dataset of both spectra.
    """
    kind: str
    dataset: Optional[str] = None
    spectrum: Optional[Spectrum] = None

    @classmethod
    def parse(cls, text):
        """
        Accepts ``single:<name>``, ``merged-NIR``, ``merged-VIS`` or ``merged-ALL``.
        """
        text = text.strip()
        if text.startswith('single:') and text[len('single:'):]:
            return cls('single', dataset=text[len('single:'):])
        if text == 'merged-ALL':
            return cls('merged')
        if text in ('merged-NIR', 'merged-VIS'):
            return cls('merged', spectrum=Spectrum(text[len('merged-'):]))
        raise ImproperlyConfigured(
            f"Unknown scope '{text}'; use single:<dataset>, merged-NIR, merged-VIS or merged-ALL."
        )

    def __str__(self):
        if self.kind == 'single':
            return f"single:{self.dataset}"
        return f"merged-{self.spectrum.value if self.spectrum else 'ALL'}"

    def select(self, samples):
        """
        Samples that fall in this scope, in manifest order.

        Raises:
            ImproperlyConfigured: If a named dataset is absent from the
                manifest or the scope selects nothing.
        """
        if self.kind == 'single':
            chosen = [sample for sample in samples if sample.dataset == self.dataset]
            if not chosen:
                known = sorted({sample.dataset for sample in samples})
                raise ImproperlyConfigured(
                    f"Dataset '{self.dataset}' is not in the manifest (it has: {', '.join(known)})."
                )
        elif self.spectrum is None:
            chosen = list(samples)
        else:
            chosen = [sample for sample in samples if sample.spectrum == self.spectrum]
        if not chosen:
            raise ImproperlyConfigured(f"Scope {self} selects no samples from the manifest.")
        return chosen


@dataclass(frozen=True)
class ExperimentConfig:
    manifest: Path
    model: ModelKind
    scope: Scope
    seed: int
    output_dir: Path
    iterations: int = 32000
    train_fraction: float = 0.8
    split_seed: Optional[int] = None
    split_mode: SplitMode = SplitMode.AUTO
    use_roi_stage: bool = False
    detector_checkpoint: Optional[Path] = None
    pretrained_encoder: Optional[Path] = None
    overlay_all: bool = False
    hyperparameters: dict = field(default_factory=dict)

    @property
    def effective_split_seed(self):
        return self.seed if self.split_seed is None else self.split_seed


def as_number(value):
    """
    YAML 1.1 reads exponent floats without a dot (``1e-4``) as strings.
    """
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    return value


class ExperimentConfigSerializer(serializers.Serializer):
    manifest = serializers.CharField()
    model = serializers.ChoiceField(choices=ModelKind.choices)
    scope = serializers.CharField()
    seed = serializers.IntegerField(min_value=0)
    output_dir = serializers.CharField()
    iterations = serializers.IntegerField(min_value=1, default=32000)
    train_fraction = serializers.FloatField(default=None, allow_null=True)
    split_seed = serializers.IntegerField(min_value=0, required=False, allow_null=True, default=None)
    split_mode = serializers.ChoiceField(choices=SplitMode.choices, default=SplitMode.AUTO)
    use_roi_stage = serializers.BooleanField(default=False)
    detector_checkpoint = serializers.CharField(required=False, allow_null=True, default=None)
    pretrained_encoder = serializers.CharField(required=False, allow_null=True, default=None)
    overlay_all = serializers.BooleanField(default=False)
    hyperparameters = serializers.DictField(required=False, default=dict)

    def validate_scope(self, value):
        try:
            return Scope.parse(value)
        except ImproperlyConfigured as exc:
            raise serializers.ValidationError(str(exc))

    def validate_train_fraction(self, value):
        if value is None:
            return get_setting('TRAIN_FRACTION')
        if not 0 < value < 1:
            raise serializers.ValidationError("train_fraction must lie in (0, 1).")
        return value

    def validate_hyperparameters(self, value):
        return {key: as_number(item) for key, item in value.items()}

    def validate(self, attrs):
        if attrs['use_roi_stage'] and not attrs.get('detector_checkpoint'):
            raise serializers.ValidationError(
                {'detector_checkpoint': "The ROI stage needs a trained detector checkpoint."}
            )
        return attrs

    def create(self, validated_data):
        data = dict(validated_data)
        for key in ('manifest', 'output_dir', 'detector_checkpoint', 'pretrained_encoder'):
            if data.get(key) is not None:
                data[key] = Path(data[key])
        data['model'] = ModelKind(data['model'])
        data['split_mode'] = SplitMode(data['split_mode'])
        return ExperimentConfig(**data)


def build_experiment_config(data):
    """
    Validate a mapping of experiment settings into an ``ExperimentConfig``.

    Raises:
        ImproperlyConfigured: Listing every invalid field.
    """
    serializer = ExperimentConfigSerializer(data=data)
    if not serializer.is_valid():
        raise ImproperlyConfigured(f"Invalid experiment configuration: {dict(serializer.errors)}")
    return serializer.save()


def load_experiment_config(path=None, **overrides):
    """
    Read experiment settings from a YAML file and apply the given overrides
    (``None`` values are ignored, so unset command-line flags keep file values).
    Relative paths in the file resolve against the file's directory.
    """
    data = {}
    if path is not None:
        path = Path(path)
        with path.open(encoding='utf-8') as handle:
            data = yaml.safe_load(handle) or {}
        if not isinstance(data, dict):
            raise ImproperlyConfigured(f"{path} must hold a mapping of experiment settings.")
        for key in ('manifest', 'output_dir', 'detector_checkpoint', 'pretrained_encoder'):
            if data.get(key) and not Path(data[key]).is_absolute():
                data[key] = str(path.parent / data[key])
    data.update({key: value for key, value in overrides.items() if value is not None})
    for key in ('manifest', 'output_dir', 'detector_checkpoint', 'pretrained_encoder'):
        if isinstance(data.get(key), Path):
            data[key] = str(data[key])
    return build_experiment_config(data)
