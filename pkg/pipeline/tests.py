import dataclasses
import filecmp
import tempfile
import unittest
from io import StringIO
from pathlib import Path

import numpy as np
import yaml
from django.core.exceptions import ImproperlyConfigured, ValidationError
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase
from django.urls import reverse
from hypothesis import given, settings, strategies as st
from rest_framework import status
from rest_framework.test import APIClient

from corpus.imaging import load_image, load_mask, save_image, save_mask
from corpus.manifest import load_manifest, merge_manifests, write_manifest
from corpus.samples import BinaryMask, SplitTag, Spectrum
from evaluation.metrics import EvalRecord, PixelCounts, confusion_counts, evaluate_sample
from evaluation.reports import read_records_csv, write_records_csv
from iris_segmentation.exceptions import PipelineStageError
from iris_segmentation.runtime import get_setting
from roi.detector import DetectorBundle, DetectorConfig, build_detector, load_detector, save_detector
from roi.geometry import RoiBox, crop_roi

from .compare import compare_methods
from .config import ExperimentConfig, ModelKind, Scope, SplitMode, build_experiment_config, load_experiment_config
from .experiment import run_experiment, stage
from .models import ExperimentRun, ImageResult
from .overlay import GREEN, RED, render_overlay, tinted_pixels
from .records import record_run
from .synthetic import generate_synthetic_dataset, iris_mask, load_parameters

TINY_FCN = {'base_width': 4, 'head_width': 16, 'dropout_probability': 0.0, 'learning_rate': 1e-3}


def record(sample_id, e, f1=0.5, dataset=''):
    return EvalRecord(sample_id, PixelCounts(1, 1, 1, 1), e, 0.5, 0.5, f1, dataset)


class ScopeTestCase(SimpleTestCase):
    def test_parse_round_trips(self):
        for text in ('single:CASIA', 'merged-NIR', 'merged-VIS', 'merged-ALL'):
            self.assertEqual(str(Scope.parse(text)), text)

    def test_unknown_scope(self):
        for text in ('single:', 'merged', 'everything'):
            with self.assertRaises(ImproperlyConfigured):
                Scope.parse(text)

    def test_select(self):
        with tempfile.TemporaryDirectory() as tmp:
            nir = load_manifest(generate_synthetic_dataset(2, 64, 0, Path(tmp) / 'a', dataset='A'))
            vis = load_manifest(generate_synthetic_dataset(2, 64, 1, Path(tmp) / 'b', dataset='B',
                                                           spectrum=Spectrum.VIS))
        samples = nir + vis
        self.assertEqual([s.id for s in Scope.parse('single:B').select(samples)], ['B-0000', 'B-0001'])
        self.assertEqual(len(Scope.parse('merged-NIR').select(samples)), 2)
        self.assertEqual(len(Scope.parse('merged-ALL').select(samples)), 4)
        with self.assertRaisesMessage(ImproperlyConfigured, 'UBIRIS'):
            Scope.parse('single:UBIRIS').select(samples)
        with self.assertRaises(ImproperlyConfigured):
            Scope.parse('merged-VIS').select(nir)


class ExperimentConfigTestCase(SimpleTestCase):
    def base(self, **extra):
        return {'manifest': 'm.jsonl', 'model': 'fcn', 'scope': 'merged-ALL', 'seed': 7, 'output_dir': 'out', **extra}

    def test_defaults(self):
        config = build_experiment_config(self.base())
        self.assertEqual(config.model, ModelKind.FCN)
        self.assertEqual(config.iterations, 32000)
        self.assertEqual(config.train_fraction, get_setting('TRAIN_FRACTION'))
        self.assertEqual(config.split_mode, SplitMode.AUTO)
        self.assertEqual(config.effective_split_seed, 7)
        self.assertEqual(config.manifest, Path('m.jsonl'))
        self.assertFalse(config.use_roi_stage)

    def test_split_seed_overrides_seed(self):
        self.assertEqual(build_experiment_config(self.base(split_seed=3)).effective_split_seed, 3)

    def test_invalid_fields(self):
        for extra in ({'model': 'svm'}, {'scope': 'merged'}, {'train_fraction': 1.0}, {'iterations': 0}):
            with self.assertRaises(ImproperlyConfigured):
                build_experiment_config(self.base(**extra))

    def test_roi_stage_needs_detector(self):
        with self.assertRaisesMessage(ImproperlyConfigured, 'detector_checkpoint'):
            build_experiment_config(self.base(use_roi_stage=True))

    def test_exponent_hyperparameters_become_floats(self):
        config = build_experiment_config(self.base(hyperparameters={'learning_rate': '1e-4', 'base_width': 8}))
        self.assertEqual(config.hyperparameters, {'learning_rate': 1e-4, 'base_width': 8})

    def test_yaml_file_with_overrides(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'experiment.yaml'
            path.write_text(yaml.safe_dump(self.base(iterations=50)), encoding='utf-8')
            config = load_experiment_config(path, model='gan', seed=None)
        self.assertEqual(config.model, ModelKind.GAN)
        self.assertEqual(config.seed, 7)
        self.assertEqual(config.iterations, 50)
        self.assertEqual(config.manifest, Path(tmp) / 'm.jsonl')


class OverlayTestCase(SimpleTestCase):
    def setUp(self):
        self.image = np.random.default_rng(0).integers(0, 256, (2, 2, 3), dtype=np.uint8)

    def test_perfect_prediction_leaves_image_untouched(self):
        mask = BinaryMask(np.array([[1, 0], [0, 1]], dtype=np.uint8))
        np.testing.assert_array_equal(render_overlay(self.image, mask, mask).pixels, self.image)

    def test_all_false_positives_are_green(self):
        overlay = render_overlay(self.image, BinaryMask(np.ones((2, 2), np.uint8)), BinaryMask.zeros(2, 2))
        self.assertTrue(np.all(overlay.pixels == GREEN))

    def test_single_fp_and_fn(self):
        pred = BinaryMask(np.array([[1, 0], [0, 0]], dtype=np.uint8))
        truth = BinaryMask(np.array([[0, 1], [0, 0]], dtype=np.uint8))
        overlay = render_overlay(self.image, pred, truth)
        np.testing.assert_array_equal(overlay.pixels[0, 0], GREEN)
        np.testing.assert_array_equal(overlay.pixels[0, 1], RED)
        np.testing.assert_array_equal(overlay.pixels[1], self.image[1])

    def test_size_mismatch(self):
        with self.assertRaises(ValidationError):
            render_overlay(self.image, BinaryMask.zeros(3, 2), BinaryMask.zeros(2, 2))

    def test_pure_green_source_pixel_is_still_reported(self):
        image = np.zeros((1, 2, 3), dtype=np.uint8)
        image[0, 0] = GREEN
        pred = BinaryMask(np.array([[1, 0]], dtype=np.uint8))
        overlay = render_overlay(image, pred, BinaryMask.zeros(2, 1))
        np.testing.assert_array_equal(overlay.pixels, image)
        self.assertEqual(overlay.false_positives.labels.tolist(), [[1, 0]])

    def test_alpha_blends_tint_over_source(self):
        image = np.array([[[0, 255, 0], [100, 100, 100]]], dtype=np.uint8)
        pred = BinaryMask(np.array([[1, 0]], dtype=np.uint8))
        truth = BinaryMask(np.array([[0, 1]], dtype=np.uint8))
        overlay = render_overlay(image, pred, truth, alpha=0.5)
        np.testing.assert_array_equal(overlay.pixels[0, 0], [0, 255, 0])
        np.testing.assert_array_equal(overlay.pixels[0, 1], [178, 50, 50])

    def test_alpha_outside_unit_interval(self):
        mask = BinaryMask.zeros(2, 2)
        for alpha in (0.0, -0.5, 1.5):
            with self.subTest(alpha=alpha):
                with self.assertRaisesMessage(ValidationError, 'alpha'):
                    render_overlay(self.image, mask, mask, alpha=alpha)

    @given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2 ** 16))
    @settings(max_examples=50, deadline=None)
    def test_tinted_pixels_match_confusion_counts(self, width, height, seed):
        rng = np.random.default_rng(seed)
        # keep the source free of pure green and red so every tint is visible
        image = rng.integers(1, 255, (height, width, 3), dtype=np.uint8)
        pred = BinaryMask(rng.integers(0, 2, (height, width), dtype=np.uint8))
        truth = BinaryMask(rng.integers(0, 2, (height, width), dtype=np.uint8))
        overlay = render_overlay(image, pred, truth)
        counts = confusion_counts(pred, truth)
        green = tinted_pixels(overlay, image, GREEN)
        red = tinted_pixels(overlay, image, RED)
        self.assertEqual(green, overlay.false_positives)
        self.assertEqual(red, overlay.false_negatives)
        self.assertEqual(int(green.labels.sum()), counts.fp)
        self.assertEqual(int(red.labels.sum()), counts.fn)


class CompareMethodsTestCase(SimpleTestCase):
    def test_identical_records(self):
        records = [record(f"img{i}", e=0.01 * i, f1=0.9 - 0.01 * i) for i in range(10)]
        comparison = compare_methods(records, list(reversed(records)))
        for result in (comparison.e, comparison.f1):
            self.assertEqual(result.t_statistic, 0.0)
            self.assertFalse(result.significant)
        self.assertIsNone(comparison.better('e'))
        self.assertIsNone(comparison.better('f1'))

    def test_consistently_lower_error_is_significant(self):
        rng = np.random.default_rng(1)
        errors_b = rng.uniform(0.02, 0.08, 30)
        records_b = [record(f"img{i}", e) for i, e in enumerate(errors_b)]
        records_a = [record(f"img{i}", e - 0.01 + rng.normal(0, 1e-4)) for i, e in enumerate(errors_b)]
        comparison = compare_methods(records_a, records_b)
        self.assertEqual(comparison.n, 30)
        self.assertTrue(comparison.e.significant)
        self.assertLess(comparison.e.t_statistic, 0)
        self.assertEqual(comparison.better('e'), 'a')
        self.assertIsNone(comparison.better('f1'))

    def test_undefined_f1_counts_as_zero(self):
        a = [record('x', 0.1, f1=None), record('y', 0.1, f1=0.5)]
        b = [record('x', 0.1, f1=0.0), record('y', 0.1, f1=0.5)]
        self.assertEqual(compare_methods(a, b).f1.t_statistic, 0.0)

    def test_disjoint_ids(self):
        with self.assertRaisesMessage(ValidationError, 'img1'):
            compare_methods([record('img0', 0.1), record('img1', 0.1)], [record('img0', 0.1), record('img2', 0.1)])

    def test_duplicate_ids(self):
        with self.assertRaises(ValidationError):
            compare_methods([record('img0', 0.1), record('img0', 0.2)], [record('img0', 0.1)])


class SyntheticDatasetTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_same_seed_gives_identical_files(self):
        generate_synthetic_dataset(10, 64, 3, self.root / 'first')
        generate_synthetic_dataset(10, 64, 3, self.root / 'second')
        names = sorted(p.relative_to(self.root / 'first') for p in (self.root / 'first').rglob('*') if p.is_file())
        self.assertEqual(len(names), 22)
        for name in names:
            self.assertTrue(filecmp.cmp(self.root / 'first' / name, self.root / 'second' / name, shallow=False),
                            name)

    def test_masks_lie_inside_the_drawn_annulus(self):
        manifest = generate_synthetic_dataset(6, 64, 5, self.root, eyelid_probability=0.5)
        samples = load_manifest(manifest)
        for params, sample in zip(load_parameters(self.root / 'parameters.jsonl'), samples):
            mask = load_mask(sample.mask_path)
            self.assertEqual(mask, iris_mask(params, 64))
            ys, xs = np.nonzero(mask.labels)
            d2 = (xs - params.center_x) ** 2 + (ys - params.center_y) ** 2
            self.assertTrue(np.all(d2 <= params.iris_radius ** 2))
            self.assertTrue(np.all(d2 > params.pupil_radius ** 2))
            if params.eyelid_y is not None:
                self.assertTrue(np.all(ys >= params.eyelid_y))
            self.assertEqual(sample.size, (64, 64))
            x0, y0, x1, y1 = sample.box
            self.assertTrue(np.all((xs >= x0) & (xs < x1) & (ys >= y0) & (ys < y1)))

    def test_vis_images_are_coloured(self):
        manifest = generate_synthetic_dataset(2, 64, 0, self.root, spectrum=Spectrum.VIS)
        image = load_image(load_manifest(manifest)[0].image_path)
        self.assertFalse(np.array_equal(image[..., 0], image[..., 2]))

    def test_bad_arguments(self):
        for n, side in ((0, 64), (2, 48), (2, 32)):
            with self.assertRaises(ValidationError):
                generate_synthetic_dataset(n, side, 0, self.root)


class PasteBackTestCase(SimpleTestCase):
    @given(st.integers(0, 2 ** 16))
    @settings(max_examples=50, deadline=None)
    def test_full_resolution_score_decomposes_over_the_crop(self, seed):
        rng = np.random.default_rng(seed)
        width, height = int(rng.integers(8, 40)), int(rng.integers(8, 40))
        x0, y0 = int(rng.integers(0, width - 4)), int(rng.integers(0, height - 4))
        x1, y1 = int(rng.integers(x0 + 1, width + 1)), int(rng.integers(y0 + 1, height + 1))
        image = np.zeros((height, width, 3), dtype=np.uint8)
        truth = BinaryMask(rng.integers(0, 2, (height, width), dtype=np.uint8))
        _, transform = crop_roi(image, RoiBox((x0, y0, x1, y1), max(x1 - x0, y1 - y0)))
        crop_pred = BinaryMask(rng.integers(0, 2, (y1 - y0, x1 - x0), dtype=np.uint8))

        full = confusion_counts(transform.paste(crop_pred), truth)
        inside = confusion_counts(crop_pred, transform.crop_mask(truth))
        outside_truth = truth.labels.copy()
        outside_truth[y0:y1, x0:x1] = 0
        outside_fn = int(outside_truth.sum())
        outside_tn = (width * height - (x1 - x0) * (y1 - y0)) - outside_fn
        self.assertEqual(full, inside + PixelCounts(0, 0, outside_tn, outside_fn))


class StageTestCase(SimpleTestCase):
    def test_failures_name_stage_and_sample(self):
        with self.assertRaises(PipelineStageError) as caught:
            with stage('predict', 'img7'):
                raise ValueError('boom')
        self.assertEqual(caught.exception.stage, 'predict')
        self.assertEqual(caught.exception.sample_id, 'img7')
        self.assertIn('boom', str(caught.exception))
        self.assertIsInstance(caught.exception.__cause__, ValueError)

    def test_configuration_errors_pass_through(self):
        with self.assertRaises(ImproperlyConfigured):
            with stage('load'):
                raise ImproperlyConfigured('missing dataset')


class RunExperimentTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.manifest = generate_synthetic_dataset(8, 64, 0, self.root / 'data')

    def tearDown(self):
        self.tmp.cleanup()

    def config(self, **overrides):
        values = dict(
            manifest=self.manifest,
            model=ModelKind.FCN,
            scope=Scope.parse('merged-ALL'),
            seed=0,
            output_dir=self.root / 'run',
            iterations=5,
            hyperparameters=dict(TINY_FCN),
        )
        values.update(overrides)
        return ExperimentConfig(**values)

    def test_small_fcn_run_writes_reports(self):
        result = run_experiment(self.config())
        out = self.root / 'run'
        self.assertEqual(result.n_train, 6)
        self.assertEqual(result.pooled.n, 2)
        self.assertEqual([row.label for row in result.aggregates], ['SYNTH', 'pooled'])
        for name in ('split.yaml', 'fcn.pt', 'loss_trace.jsonl', 'per_image.csv', 'aggregates.csv', 'summary.yaml'):
            self.assertTrue((out / name).exists(), name)
        self.assertEqual(len(list((out / 'predictions').glob('*.png'))), 2)
        overlays = sorted(p.name for p in (out / 'overlays').glob('*.png'))
        self.assertEqual(overlays, sorted([f"best_{result.best_id}.png", f"worst_{result.worst_id}.png"]))

        records = read_records_csv(out / 'per_image.csv')
        self.assertEqual([r.sample_id for r in records], [r.sample_id for r in result.records])
        with (out / 'summary.yaml').open(encoding='utf-8') as handle:
            summary = yaml.safe_load(handle)
        self.assertEqual(summary['model'], 'fcn')
        self.assertEqual(set(summary['results']['pooled']), {'n', 'f1_percent', 'e_percent', 'undefined_f1'})

    def test_summary_holds_settings_to_repeat_the_run(self):
        run_experiment(self.config(split_seed=3, train_fraction=0.75))
        with (self.root / 'run' / 'summary.yaml').open(encoding='utf-8') as handle:
            summary = yaml.safe_load(handle)
        self.assertEqual(summary['hyperparameters'], TINY_FCN)
        self.assertEqual(summary['split_mode'], 'random')
        self.assertEqual((summary['split_seed'], summary['train_fraction']), (3, 0.75))
        self.assertEqual((summary['seed'], summary['iterations'], summary['scope']), (0, 5, 'merged-ALL'))
        self.assertEqual(summary['manifest'], str(self.manifest))
        self.assertIsNone(summary['pretrained_encoder'])
        self.assertIsNone(summary['detector_checkpoint'])

    def test_predictions_are_scored_at_full_resolution(self):
        result = run_experiment(self.config())
        samples = {s.id: s for s in load_manifest(self.manifest)}
        for rec in result.records:
            pred = load_mask(self.root / 'run' / 'predictions' / f"{rec.sample_id}.png")
            truth = load_mask(samples[rec.sample_id].mask_path)
            self.assertEqual(pred.size, truth.size)
            self.assertEqual(evaluate_sample(rec.sample_id, pred, truth, rec.dataset), rec)

    def test_same_seed_repeats_metrics(self):
        first = run_experiment(self.config(output_dir=self.root / 'a'))
        second = run_experiment(self.config(output_dir=self.root / 'b'))
        self.assertEqual(first.records, second.records)

    def test_overlay_all(self):
        result = run_experiment(self.config(overlay_all=True))
        self.assertEqual(len(list((self.root / 'run' / 'overlays' / 'all').glob('*.png'))), result.pooled.n)

    def test_small_gan_run(self):
        result = run_experiment(self.config(
            model=ModelKind.GAN, iterations=3, hyperparameters={'input_side': 64, 'base_filters': 4},
        ))
        self.assertTrue((self.root / 'run' / 'gan.pt').exists())
        self.assertEqual(result.pooled.n, 2)

    def test_roi_stage_with_detector(self):
        detector = save_detector(
            DetectorBundle(build_detector(), np.ones((5, 2)), DetectorConfig(iterations=1)), self.root / 'det.pt',
        )
        result = run_experiment(self.config(use_roi_stage=True, detector_checkpoint=detector))
        for rec in result.records:
            self.assertEqual(rec.counts.total, 64 * 64)

    def test_roi_stage_without_detector(self):
        with self.assertRaises(ImproperlyConfigured):
            run_experiment(self.config(use_roi_stage=True))

    def test_missing_detector_file(self):
        with self.assertRaises(ImproperlyConfigured):
            run_experiment(self.config(use_roi_stage=True, detector_checkpoint=self.root / 'missing.pt'))

    def test_unknown_dataset(self):
        with self.assertRaisesMessage(ImproperlyConfigured, 'NICE'):
            run_experiment(self.config(scope=Scope.parse('single:NICE')))

    def test_unknown_hyperparameter(self):
        with self.assertRaises(ImproperlyConfigured):
            run_experiment(self.config(hyperparameters={'momentum': 0.9}))

    def test_unlabelled_sample_aborts_at_load(self):
        samples = load_manifest(self.manifest)
        samples[3] = dataclasses.replace(samples[3], mask_path=None)
        manifest = write_manifest(samples, self.root / 'data' / 'partial.jsonl')
        with self.assertRaisesMessage(PipelineStageError, 'SYNTH-0003') as caught:
            run_experiment(self.config(manifest=manifest))
        self.assertEqual(caught.exception.stage, 'load')

    def test_merged_scope_reports_every_dataset(self):
        other = generate_synthetic_dataset(6, 64, 1, self.root / 'vis', dataset='VISX', spectrum=Spectrum.VIS)
        merged = load_manifest(merge_manifests([self.manifest, other], self.root / 'merged.jsonl'))
        tagged = []
        for dataset in ('SYNTH', 'VISX'):
            group = [s for s in merged if s.dataset == dataset]
            tagged += [dataclasses.replace(s, split=SplitTag.TEST if i >= len(group) - 2 else SplitTag.TRAIN)
                       for i, s in enumerate(group)]
        manifest = write_manifest(tagged, self.root / 'tagged.jsonl')

        result = run_experiment(self.config(manifest=manifest))
        self.assertEqual([row.label for row in result.aggregates], ['SYNTH', 'VISX', 'pooled'])
        self.assertEqual([row.n for row in result.aggregates], [2, 2, 4])
        self.assertEqual(result.n_train, 10)
        with (self.root / 'run' / 'split.yaml').open(encoding='utf-8') as handle:
            self.assertIsNone(yaml.safe_load(handle)['seed'])

    @unittest.skipUnless(get_setting('SLOW_TESTS'), "acceptance-scale training run")
    def test_end_to_end_synthetic_fcn(self):
        manifest = generate_synthetic_dataset(40, 128, 0, self.root / 'large')
        config = self.config(manifest=manifest, iterations=2000, hyperparameters={'learning_rate': 1e-4})
        result = run_experiment(config)
        self.assertLess(result.pooled.mean_e, 0.05)

        samples = {s.id: s for s in load_manifest(manifest)}
        for label, sample_id in (('best', result.best_id), ('worst', result.worst_id)):
            sample = samples[sample_id]
            image = load_image(sample.image_path)
            overlay = load_image(self.root / 'run' / 'overlays' / f"{label}_{sample_id}.png")
            pred = load_mask(self.root / 'run' / 'predictions' / f"{sample_id}.png")
            expected = render_overlay(image, pred, load_mask(sample.mask_path))
            np.testing.assert_array_equal(overlay, expected.pixels)

        repeat = run_experiment(dataclasses.replace(config, output_dir=self.root / 'repeat'))
        self.assertEqual([r.e for r in repeat.records], [r.e for r in result.records])


class RecordRunTestCase(TestCase):
    def test_run_is_stored_with_its_images(self):
        with tempfile.TemporaryDirectory() as tmp:
            manifest = generate_synthetic_dataset(5, 64, 2, Path(tmp) / 'data')
            config = ExperimentConfig(manifest=manifest, model=ModelKind.FCN, scope=Scope.parse('merged-NIR'),
                                      seed=1, output_dir=Path(tmp) / 'run', iterations=2,
                                      hyperparameters=dict(TINY_FCN))
            result = run_experiment(config)
        run = record_run(result)
        self.assertEqual(run.scope, 'merged-NIR')
        self.assertEqual(run.n_train, 4)
        self.assertEqual(run.n_test, 1)
        self.assertAlmostEqual(run.mean_e, result.pooled.mean_e)
        self.assertEqual(ImageResult.objects.filter(run=run).count(), 1)


class ExperimentRunApiTestCase(TestCase):
    def setUp(self):
        self.client = APIClient()
        self.fcn_run = ExperimentRun.objects.create(
            model='fcn', scope='merged-ALL', seed=0, iterations=100, output_dir='/runs/a',
            n_train=8, n_test=3, mean_e=0.02, std_e=0.01, mean_f1=0.9, std_f1=0.05,
        )
        self.gan_run = ExperimentRun.objects.create(
            model='gan', scope='single:NICE', seed=1, iterations=100, output_dir='/runs/b',
            n_train=8, n_test=2, mean_e=0.03, std_e=0.0, mean_f1=0.8, std_f1=0.0,
        )
        for sample_id, dataset, e, f1 in (('a1', 'A', 0.01, 0.9), ('a2', 'A', 0.03, None), ('b1', 'B', 0.02, 0.8)):
            ImageResult.objects.create(run=self.fcn_run, sample_id=sample_id, dataset=dataset,
                                       tp=10, fp=1, tn=80, fn=1, e=e, precision=0.9, recall=0.9, f1=f1)

    def test_list_runs(self):
        response = self.client.get(reverse('experimentrun-list'))
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.data['count'], 2)
        runs = {run['id']: run for run in response.data['results']}
        self.assertEqual(set(runs), {str(self.fcn_run.id), str(self.gan_run.id)})
        self.assertEqual(runs[str(self.fcn_run.id)]['e_percent'], 2.0)
        self.assertEqual(runs[str(self.gan_run.id)]['f1_percent'], 80.0)

    def test_filter_by_model(self):
        response = self.client.get(reverse('experimentrun-list'), {'model': 'fcn'})
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual([run['id'] for run in response.data['results']], [str(self.fcn_run.id)])

    def test_retrieve_includes_results_and_aggregates(self):
        response = self.client.get(reverse('experimentrun-detail', kwargs={'pk': self.fcn_run.pk}))
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual([r['sample_id'] for r in response.data['data']['results']], ['a1', 'a2', 'b1'])
        aggregates = response.data['aggregates']
        self.assertEqual([row['label'] for row in aggregates], ['A', 'B', 'pooled'])
        self.assertAlmostEqual(aggregates[0]['mean_e'], 0.02)
        self.assertAlmostEqual(aggregates[0]['mean_f1'], 0.45)
        self.assertEqual(aggregates[2]['n'], 3)

    def test_retrieve_run_without_results(self):
        response = self.client.get(reverse('experimentrun-detail', kwargs={'pk': self.gan_run.pk}))
        self.assertEqual(response.data['aggregates'], [])

    def test_runs_are_read_only(self):
        response = self.client.post(reverse('experimentrun-list'), {'model': 'fcn'})
        self.assertEqual(response.status_code, status.HTTP_405_METHOD_NOT_ALLOWED)
        response = self.client.delete(reverse('experimentrun-detail', kwargs={'pk': self.fcn_run.pk}))
        self.assertEqual(response.status_code, status.HTTP_405_METHOD_NOT_ALLOWED)


class CommandTestCase(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def call(self, *args, **options):
        out = StringIO()
        call_command(*args, stdout=out, **options)
        return out.getvalue()

    def synth(self, n=6):
        self.call('synth', n=n, side=64, seed=0, output_dir=str(self.root / 'data'))
        return self.root / 'data' / 'manifest.jsonl'

    def tiny_hp(self):
        return [f"{key}={value}" for key, value in TINY_FCN.items()]

    def test_synth(self):
        manifest = self.synth()
        self.assertEqual(len(load_manifest(manifest)), 6)

    def test_synth_rejects_zero_images(self):
        with self.assertRaises(CommandError):
            self.call('synth', n=0, side=64, seed=0, output_dir=str(self.root / 'data'))

    def test_split(self):
        manifest = self.synth(10)
        self.call('split', manifest=str(manifest), output=str(self.root / 'split.yaml'), seed=4)
        with (self.root / 'split.yaml').open(encoding='utf-8') as handle:
            split = yaml.safe_load(handle)
        self.assertEqual((len(split['train_ids']), len(split['test_ids'])), (8, 2))

    def test_train_predict_evaluate(self):
        manifest = self.synth()
        self.call('split', manifest=str(manifest), output=str(self.root / 'split.yaml'), seed=0)
        self.call('train', model='fcn', manifest=str(manifest), output=str(self.root / 'fcn.pt'),
                  split=str(self.root / 'split.yaml'), iterations=3, hyperparameters=self.tiny_hp())
        self.assertTrue((self.root / 'fcn.loss.jsonl').exists())
        self.call('predict', checkpoint=str(self.root / 'fcn.pt'), manifest=str(manifest),
                  output_dir=str(self.root / 'pred'), split=str(self.root / 'split.yaml'))
        self.assertEqual(len(list((self.root / 'pred').glob('*.png'))), 1)
        output = self.call('evaluate', manifest=str(manifest), predictions=str(self.root / 'pred'),
                           output_dir=str(self.root / 'eval'), split=str(self.root / 'split.yaml'))
        self.assertIn('over 1 images', output)
        self.assertEqual(len(read_records_csv(self.root / 'eval' / 'per_image.csv')), 1)

    def test_train_rejects_unknown_hyperparameter(self):
        manifest = self.synth(2)
        with self.assertRaises(CommandError):
            self.call('train', model='fcn', manifest=str(manifest), output=str(self.root / 'fcn.pt'),
                      iterations=1, hyperparameters=['momentum=0.9'])

    def test_train_rejects_malformed_hyperparameter(self):
        manifest = self.synth(2)
        with self.assertRaises(CommandError):
            self.call('train', model='fcn', manifest=str(manifest), output=str(self.root / 'fcn.pt'),
                      iterations=1, hyperparameters=['learning_rate'])

    def test_train_detector_on_grayscale_input(self):
        manifest = self.synth(4)
        output = self.call('train_detector', manifest=str(manifest), output=str(self.root / 'det.pt'),
                           iterations=1, batch_size=1, input_channels=1)
        self.assertIn('Detector trained on 4 images', output)
        self.assertEqual(load_detector(self.root / 'det.pt').input_channels, 1)

    def test_train_detector_rejects_two_channels(self):
        with self.assertRaisesMessage(CommandError, 'invalid choice'):
            self.call('train_detector', '--input-channels', '2', manifest='m.jsonl',
                      output=str(self.root / 'det.pt'))

    def test_predict_rejects_detector_checkpoint_as_segmenter(self):
        manifest = self.synth(2)
        detector = save_detector(
            DetectorBundle(build_detector(), np.ones((5, 2)), DetectorConfig(iterations=1)), self.root / 'det.pt',
        )
        with self.assertRaises(CommandError):
            self.call('predict', checkpoint=str(detector), manifest=str(manifest), output_dir=str(self.root / 'p'))

    def test_compare(self):
        rng = np.random.default_rng(0)
        errors = rng.uniform(0.02, 0.08, 12)
        write_records_csv([record(f"i{k}", e) for k, e in enumerate(errors)], self.root / 'a.csv')
        write_records_csv([record(f"i{k}", e + 0.01 + rng.normal(0, 1e-4)) for k, e in enumerate(errors)],
                          self.root / 'b.csv')
        output = self.call('compare', str(self.root / 'a.csv'), str(self.root / 'b.csv'),
                           output=str(self.root / 'cmp.yaml'))
        self.assertIn('E: ', output)
        self.assertIn('method A is better', output)
        with (self.root / 'cmp.yaml').open(encoding='utf-8') as handle:
            report = yaml.safe_load(handle)
        self.assertEqual(report['n'], 12)
        self.assertEqual(report['e']['better'], 'a')

    def test_compare_mismatched_ids(self):
        write_records_csv([record('x', 0.1)], self.root / 'a.csv')
        write_records_csv([record('y', 0.1)], self.root / 'b.csv')
        with self.assertRaisesMessage(CommandError, 'x, y'):
            self.call('compare', str(self.root / 'a.csv'), str(self.root / 'b.csv'))

    def test_overlay(self):
        image = np.full((4, 4, 3), 100, dtype=np.uint8)
        pred = BinaryMask(np.eye(4, dtype=np.uint8))
        truth = BinaryMask.zeros(4, 4)
        save_image(image, self.root / 'eye.png')
        save_mask(pred, self.root / 'pred.png')
        save_mask(truth, self.root / 'truth.png')
        output = self.call('overlay', image=str(self.root / 'eye.png'), pred=str(self.root / 'pred.png'),
                           truth=str(self.root / 'truth.png'), output=str(self.root / 'overlay.png'))
        self.assertIn('4 FP / 0 FN', output)
        pixels = load_image(self.root / 'overlay.png')
        np.testing.assert_array_equal(pixels[np.eye(4, dtype=bool)], np.tile(GREEN, (4, 1)))

        self.call('overlay', image=str(self.root / 'eye.png'), pred=str(self.root / 'pred.png'),
                  truth=str(self.root / 'truth.png'), output=str(self.root / 'soft.png'), alpha=0.5)
        pixels = load_image(self.root / 'soft.png')
        np.testing.assert_array_equal(pixels[0, 0], [50, 178, 50])
        np.testing.assert_array_equal(pixels[0, 1], [100, 100, 100])

    def test_run_records_the_experiment(self):
        manifest = self.synth()
        output = self.call('run', seed=0, manifest=str(manifest), model='fcn', scope='merged-ALL',
                           output_dir=str(self.root / 'run'), iterations=2, hyperparameters=self.tiny_hp())
        self.assertIn('pooled: n=1', output)
        run = ExperimentRun.objects.get()
        self.assertEqual(run.seed, 0)
        self.assertEqual(run.results.count(), 1)
        self.assertTrue((self.root / 'run' / 'summary.yaml').exists())

    def test_run_from_config_file(self):
        manifest = self.synth()
        path = self.root / 'experiment.yaml'
        path.write_text(yaml.safe_dump({
            'manifest': str(manifest), 'model': 'fcn', 'scope': 'single:SYNTH', 'output_dir': 'run',
            'iterations': 2, 'hyperparameters': TINY_FCN,
        }), encoding='utf-8')
        self.call('run', config=str(path), seed=5, no_record=True)
        self.assertTrue((self.root / 'run' / 'per_image.csv').exists())
        self.assertEqual(ExperimentRun.objects.count(), 0)

    def test_run_unknown_dataset(self):
        manifest = self.synth(2)
        with self.assertRaisesMessage(CommandError, 'CASIA'):
            self.call('run', seed=0, manifest=str(manifest), model='fcn', scope='single:CASIA',
                      output_dir=str(self.root / 'run'), iterations=1)
