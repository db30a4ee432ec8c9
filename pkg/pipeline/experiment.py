"""
End-to-end experiments: scope selection, split, optional ROI cropping,
training, full-resolution evaluation and reports.
"""
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from django.core.exceptions import ImproperlyConfigured, ValidationError

from corpus.imaging import load_image, load_mask, save_mask
from corpus.manifest import load_manifest
from corpus.samples import BinaryMask, LabelledImage
from corpus.splits import fixed_split, save_split, split_dataset
from evaluation.metrics import evaluate_sample
from evaluation.reports import write_aggregates_csv, write_records_csv, write_summary
from evaluation.stats import aggregate_by_dataset
from fcnseg.config import FcnConfig
from fcnseg.model import build_fcn
from fcnseg.preprocessing import pad_to_multiple, strip_padding
from fcnseg.training import load_fcn, predict_fcn, train_fcn
from ganseg.config import GanConfig
from ganseg.training import build_gan, load_gan, predict_gan, train_gan
from iris_segmentation.checkpoints import checkpoint_kind
from iris_segmentation.exceptions import PipelineStageError
from iris_segmentation.runtime import seed_everything
from roi.detector import load_detector, locate_iris
from roi.geometry import crop_roi

from .config import ModelKind, SplitMode
from .overlay import render_overlay

logger = logging.getLogger(__name__)


@contextmanager
def stage(name, sample_id=None):
    """
    Re-raise failures inside an experiment stage as ``PipelineStageError``.
    Configuration errors pass through untouched.
    """
    try:
        yield
    except (ImproperlyConfigured, PipelineStageError):
        raise
    except Exception as exc:
        raise PipelineStageError(name, sample_id, str(exc)) from exc


def load_labelled(sample):
    mask = load_mask(sample.mask_path) if sample.mask_path is not None else None
    return LabelledImage(sample.id, load_image(sample.image_path), mask, sample.dataset)


@dataclass
class Segmenter:
    """
    A trained FCN model or GAN state behind one ``predict`` call that accepts
    images of any size.
    """
    kind: ModelKind
    model: object
    loss_trace: list = field(default_factory=list)

    def predict(self, image):
        if self.kind == ModelKind.FCN:
            padded, padding = pad_to_multiple(image)
            return strip_padding(predict_fcn(self.model, padded), padding)
        return predict_gan(self.model, image)


def _pad_example(example):
    image, _ = pad_to_multiple(example.image)
    mask = example.mask
    if mask is not None:
        mask = BinaryMask(pad_to_multiple(mask.labels)[0])
    return LabelledImage(example.sample_id, image, mask, example.dataset)


def _model_config(config_class, iterations, seed, hyperparameters):
    try:
        return config_class(iterations=iterations, seed=seed, **(hyperparameters or {}))
    except TypeError as exc:
        raise ImproperlyConfigured(f"Unknown {config_class.__name__} hyper-parameter: {exc}") from exc


def train_segmenter(kind, examples, iterations, seed, hyperparameters=None, pretrained_encoder=None,
                    checkpoint_path=None, loss_trace_path=None):
    """
    Train an FCN or GAN segmenter on labelled examples of any size.

    FCN inputs are zero-padded to multiples of ``FCN_MULTIPLE`` (masks padded as non-iris);
    GAN inputs are resized to the GAN side inside its training loop.
    """
    kind = ModelKind(kind)
    seed_everything(seed)
    if kind == ModelKind.FCN:
        config = _model_config(FcnConfig, iterations, seed, hyperparameters)
        model = build_fcn(config, pretrained_encoder=pretrained_encoder)
        result = train_fcn(model, [_pad_example(e) for e in examples], config,
                           checkpoint_path=checkpoint_path, loss_trace_path=loss_trace_path)
        return Segmenter(kind, result.model, result.loss_trace)

    config = _model_config(GanConfig, iterations, seed, hyperparameters)
    state = train_gan(build_gan(config), examples, checkpoint_path=checkpoint_path, loss_trace_path=loss_trace_path)
    return Segmenter(kind, state, [(entry.iteration, entry.reconstruction) for entry in state.losses])


def load_segmenter(path):
    """
    Load a segmenter checkpoint, telling FCN from GAN by the checkpoint kind.
    """
    kind = checkpoint_kind(path)
    if kind == 'fcn':
        return Segmenter(ModelKind.FCN, load_fcn(path))
    if kind == 'gan':
        return Segmenter(ModelKind.GAN, load_gan(path))
    raise ImproperlyConfigured(f"{path} holds a '{kind}' checkpoint, not a segmenter.")


def crop_example(bundle, example):
    """
    Crop an example to its detected iris ROI.

    Returns:
        tuple: ``(cropped LabelledImage, RoiTransform)``.
    """
    roi = locate_iris(bundle, example.image)
    image, transform = crop_roi(example.image, roi)
    mask = transform.crop_mask(example.mask) if example.mask is not None else None
    return LabelledImage(example.sample_id, image, mask, example.dataset), transform


def segment(segmenter, image, bundle=None):
    """
    Full-resolution prediction, through the ROI crop when a detector is given.
    """
    if bundle is None:
        return segmenter.predict(image)
    roi = locate_iris(bundle, image)
    crop, transform = crop_roi(image, roi)
    return transform.paste(segmenter.predict(crop))


@dataclass
class ExperimentResult:
    config: object
    records: list
    aggregates: list
    n_train: int
    artifacts: dict = field(default_factory=dict)
    best_id: str = ''
    worst_id: str = ''

    @property
    def pooled(self):
        return self.aggregates[-1]

    @property
    def per_dataset(self):
        return self.aggregates[:-1]


def resolve_split_mode(config, samples):
    if config.split_mode != SplitMode.AUTO:
        return SplitMode(config.split_mode)
    return SplitMode.FIXED if all(sample.split is not None for sample in samples) else SplitMode.RANDOM


def choose_split(config, samples):
    if resolve_split_mode(config, samples) == SplitMode.FIXED:
        return fixed_split(samples)
    return split_dataset(samples, config.effective_split_seed, config.train_fraction)


def _optional_path(path):
    return str(path) if path else None


def run_experiment(config):
    """
    Run one experiment and write its artifacts under ``config.output_dir``.

    Artifacts: ``split.yaml``, the model checkpoint and loss trace,
    ``predictions/<id>.png``, ``per_image.csv``, ``aggregates.csv``,
    ``summary.yaml`` (results plus every setting needed to repeat the run)
    and overlays of the best and worst test image by E (``overlays/``).

    Raises:
        ImproperlyConfigured: For an unknown dataset, an empty scope or a
            missing detector checkpoint.
        PipelineStageError: When any stage fails, naming the stage and sample.
    """
    if config.use_roi_stage and not config.detector_checkpoint:
        raise ImproperlyConfigured("use_roi_stage needs a detector checkpoint.")
    seed_everything(config.seed)
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    artifacts = {}

    with stage('load'):
        samples = config.scope.select(load_manifest(config.manifest))
        unlabelled = [sample.id for sample in samples if not sample.has_mask]
        if unlabelled:
            raise ValidationError(f"Samples without a ground-truth mask: {', '.join(unlabelled)}.")
    logger.info("Experiment %s/%s on %d samples", config.model, config.scope, len(samples))

    with stage('split'):
        split = choose_split(config, samples)
        artifacts['split'] = save_split(split, output_dir / 'split.yaml')
        train_samples, test_samples = split.partition(samples)

    bundle = None
    if config.use_roi_stage:
        with stage('roi'):
            if not Path(config.detector_checkpoint).exists():
                raise ImproperlyConfigured(f"Detector checkpoint {config.detector_checkpoint} does not exist.")
            bundle = load_detector(config.detector_checkpoint)

    train_examples = []
    for sample in train_samples:
        with stage('load', sample.id):
            example = load_labelled(sample)
        if bundle is not None:
            with stage('roi', sample.id):
                example, _ = crop_example(bundle, example)
        train_examples.append(example)

    checkpoint = output_dir / f"{config.model}.pt"
    with stage('train'):
        segmenter = train_segmenter(
            config.model, train_examples, config.iterations, config.seed, config.hyperparameters,
            pretrained_encoder=config.pretrained_encoder,
            checkpoint_path=checkpoint, loss_trace_path=output_dir / 'loss_trace.jsonl',
        )
    artifacts['checkpoint'] = checkpoint
    artifacts['loss_trace'] = output_dir / 'loss_trace.jsonl'

    records, images, predictions, truths = [], {}, {}, {}
    for sample in test_samples:
        with stage('predict', sample.id):
            example = load_labelled(sample)
            pred = segment(segmenter, example.image, bundle)
            save_mask(pred, output_dir / 'predictions' / f"{sample.id}.png")
        with stage('evaluate', sample.id):
            records.append(evaluate_sample(sample.id, pred, example.mask, sample.dataset))
        images[sample.id], predictions[sample.id], truths[sample.id] = example.image, pred, example.mask
    artifacts['predictions'] = output_dir / 'predictions'

    with stage('report'):
        aggregates = aggregate_by_dataset(records)
        artifacts['per_image'] = write_records_csv(records, output_dir / 'per_image.csv')
        artifacts['aggregates'] = write_aggregates_csv(aggregates, output_dir / 'aggregates.csv')
        artifacts['summary'] = write_summary(
            aggregates, output_dir / 'summary.yaml',
            manifest=str(config.manifest), model=str(config.model), scope=str(config.scope),
            seed=config.seed, iterations=config.iterations,
            split_mode=str(resolve_split_mode(config, samples)),
            split_seed=config.effective_split_seed, train_fraction=config.train_fraction,
            use_roi_stage=config.use_roi_stage,
            detector_checkpoint=_optional_path(config.detector_checkpoint),
            pretrained_encoder=_optional_path(config.pretrained_encoder),
            hyperparameters=dict(config.hyperparameters),
            n_train=len(train_samples), n_test=len(test_samples),
        )

        best = min(records, key=lambda r: r.e)
        worst = max(records, key=lambda r: r.e)
        overlays = []
        for label, record in (('best', best), ('worst', worst)):
            overlay = render_overlay(images[record.sample_id], predictions[record.sample_id], truths[record.sample_id])
            overlays.append(overlay.save(output_dir / 'overlays' / f"{label}_{record.sample_id}.png"))
        if config.overlay_all:
            for record in records:
                overlay = render_overlay(images[record.sample_id], predictions[record.sample_id],
                                         truths[record.sample_id])
                overlays.append(overlay.save(output_dir / 'overlays' / 'all' / f"{record.sample_id}.png"))
        artifacts['overlays'] = overlays

    result = ExperimentResult(
        config=config,
        records=records,
        aggregates=aggregates,
        n_train=len(train_samples),
        artifacts=artifacts,
        best_id=best.sample_id,
        worst_id=worst.sample_id,
    )
    logger.info("Experiment done: E %.4f +- %.4f, F1 %.4f +- %.4f over %d test images",
                result.pooled.mean_e, result.pooled.std_e, result.pooled.mean_f1, result.pooled.std_f1,
                result.pooled.n)
    return result
