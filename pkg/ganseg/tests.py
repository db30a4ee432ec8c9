import dataclasses
import json
import math
import tempfile
import unittest
from pathlib import Path

import numpy as np
import torch
from django.core.exceptions import ImproperlyConfigured, ValidationError
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from corpus.samples import BinaryMask, LabelledImage
from evaluation.metrics import segmentation_error
from fcnseg.training import load_fcn
from iris_segmentation.exceptions import TrainingDivergenceError
from iris_segmentation.runtime import get_setting

from .config import GanConfig
from .training import build_gan, gan_step, load_gan, predict_gan, resize_for_gan, save_gan, train_gan


def small_config(**overrides):
    values = dict(input_side=64, base_filters=8, iterations=1)
    values.update(overrides)
    return GanConfig(**values)


def disc_example(index, side=64):
    rng = np.random.default_rng(100 + index)
    radius = int(rng.integers(side // 6, side // 3))
    cx, cy = (int(rng.integers(radius, side - radius)) for _ in range(2))
    yy, xx = np.mgrid[:side, :side]
    disc = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius ** 2
    image = np.repeat(np.where(disc, 200, 40).astype(np.uint8)[..., None], 3, axis=-1)
    return LabelledImage(sample_id=f"disc{index}", image=image, mask=BinaryMask.from_bool(disc))


def as_batch(examples, side):
    images = torch.stack([resize_for_gan(e.image, side)[0] for e in examples])
    masks = torch.stack([resize_for_gan(e.mask, side)[0] for e in examples])
    return images, masks


def centred_disc(side, radius):
    yy, xx = np.mgrid[:side, :side]
    centre = (side - 1) / 2
    return BinaryMask.from_bool((xx - centre) ** 2 + (yy - centre) ** 2 <= radius ** 2)


class _Reparametrised(torch.nn.Module):
    """Strictly increasing remap of generator scores that fixes 0.5."""

    def __init__(self, base):
        super().__init__()
        self.base = base

    def forward(self, x):
        return 0.5 + 0.5 * torch.sin(math.pi * (self.base(x) - 0.5))


class GanConfigTestCase(SimpleTestCase):
    def test_defaults(self):
        config = GanConfig()
        self.assertEqual(config.input_side, 256)
        self.assertEqual((config.reconstruction_weight, config.learning_rate), (100.0, 2e-4))
        self.assertEqual(config.patch_grid_side, 32)

    def test_side_must_be_power_of_two(self):
        with self.assertRaises(ImproperlyConfigured):
            GanConfig(input_side=100)

    def test_side_too_small(self):
        with self.assertRaises(ImproperlyConfigured):
            GanConfig(input_side=32)

    def test_negative_weight(self):
        with self.assertRaises(ImproperlyConfigured):
            small_config(adversarial_weight=-1.0)

    def test_zero_iterations(self):
        with self.assertRaises(ImproperlyConfigured):
            small_config(iterations=0)


class GanNetworkTestCase(SimpleTestCase):
    def setUp(self):
        torch.manual_seed(0)
        self.state = build_gan(small_config())

    def test_generator_output_shape_and_range(self):
        self.state.generator.eval()
        with torch.no_grad():
            scores = self.state.generator(torch.rand(2, 3, 64, 64) * 2 - 1)
        self.assertEqual(tuple(scores.shape), (2, 1, 64, 64))
        self.assertTrue(bool(((scores >= 0) & (scores <= 1)).all()))

    @given(st.integers(0, 2 ** 31), st.floats(0.1, 1000.0))
    @settings(max_examples=20, deadline=None)
    def test_generator_range_for_arbitrary_inputs(self, seed, scale):
        generator = torch.Generator().manual_seed(seed)
        inputs = torch.randn(1, 3, 64, 64, generator=generator) * scale
        with torch.no_grad():
            scores = self.state.generator(inputs)
        self.assertTrue(bool(((scores >= 0) & (scores <= 1)).all()))

    def test_discriminator_patch_grid(self):
        state = build_gan(GanConfig(base_filters=4, iterations=1))
        with torch.no_grad():
            logits = state.discriminator(torch.zeros(1, 3, 256, 256), torch.ones(1, 1, 256, 256))
        self.assertEqual(tuple(logits.shape), (1, 1, 32, 32))


class GanStepTestCase(SimpleTestCase):
    def setUp(self):
        torch.manual_seed(0)
        self.state = build_gan(small_config())
        self.images, self.masks = as_batch([disc_example(0)], 64)

    def test_counter_increments_by_one(self):
        gan_step(self.state, self.images, self.masks)
        self.assertEqual(self.state.iteration, 1)
        self.assertEqual(len(self.state.losses), 1)
        gan_step(self.state, self.images, self.masks)
        self.assertEqual(self.state.iteration, 2)

    def test_discriminator_weights_change(self):
        before = [p.detach().clone() for p in self.state.discriminator.parameters()]
        gan_step(self.state, torch.rand_like(self.images) * 2 - 1, self.masks)
        delta = sum(float((p.detach() - b).norm()) for p, b in zip(self.state.discriminator.parameters(), before))
        self.assertGreater(delta, 0.0)

    def test_losses_are_finite_and_accuracy_bounded(self):
        for _ in range(3):
            gan_step(self.state, self.images, self.masks)
        for losses in self.state.losses:
            values = [losses.generator_adversarial, losses.reconstruction,
                      losses.discriminator_real, losses.discriminator_fake]
            self.assertTrue(np.all(np.isfinite(values)))
            self.assertTrue(0.0 <= losses.discriminator_accuracy <= 1.0)

    def test_wrong_side_rejected(self):
        with self.assertRaises(ValidationError):
            gan_step(self.state, torch.zeros(1, 3, 32, 32), torch.zeros(1, 1, 32, 32))

    def test_nan_input_raises_divergence_with_snapshot(self):
        with self.assertRaises(TrainingDivergenceError) as caught:
            gan_step(self.state, torch.full_like(self.images, float('nan')), self.masks)
        self.assertEqual(caught.exception.snapshot['iteration'], 0)
        self.assertIn('generator', caught.exception.snapshot)

    def test_reconstruction_alone_trends_down(self):
        state = build_gan(small_config(adversarial_weight=0.0))
        for _ in range(200):
            gan_step(state, self.images, self.masks)
        losses = [entry.reconstruction for entry in state.losses]
        slope = np.polyfit(np.arange(len(losses)), losses, 1)[0]
        self.assertLess(slope, 0.0)


class ResizeTestCase(SimpleTestCase):
    def test_mask_round_trip_keeps_large_regions(self):
        original = centred_disc(512, 256)
        small, record = resize_for_gan(original, 256)
        self.assertEqual(tuple(small.shape), (1, 256, 256))
        restored = record.restore(small[0])
        self.assertEqual(restored.size, (512, 512))
        a, b = original.labels.astype(bool), restored.labels.astype(bool)
        self.assertGreaterEqual((a & b).sum() / (a | b).sum(), 0.98)

    def test_input_at_side_is_identity(self):
        image = np.random.default_rng(0).integers(0, 256, (256, 256, 3)).astype(np.uint8)
        tensor, record = resize_for_gan(image, 256)
        self.assertTrue(record.is_identity)
        np.testing.assert_allclose(tensor.numpy(), image.transpose(2, 0, 1) / 127.5 - 1.0, atol=1e-6)

        mask = centred_disc(256, 60)
        tensor, record = resize_for_gan(mask, 256)
        self.assertEqual(record.restore(tensor[0]), mask)

    def test_constant_mask_stays_constant(self):
        ones = BinaryMask(np.ones((200, 300), dtype=np.uint8))
        tensor, record = resize_for_gan(ones, 64)
        self.assertTrue(bool((tensor == 1).all()))
        self.assertTrue((record.restore(tensor[0]).labels == 1).all())

    def test_image_values_scaled_to_unit_range(self):
        tensor, _ = resize_for_gan(np.full((40, 50, 3), 255, dtype=np.uint8), 64)
        np.testing.assert_allclose(tensor.numpy(), 1.0, atol=1e-6)

    def test_empty_image_rejected(self):
        with self.assertRaises(ValidationError):
            resize_for_gan(np.zeros((0, 5, 3), dtype=np.uint8), 64)


class GanPredictTestCase(SimpleTestCase):
    def setUp(self):
        torch.manual_seed(2)
        self.state = build_gan(small_config())

    @given(st.integers(8, 160), st.integers(8, 160), st.integers(0, 1000))
    @settings(max_examples=15, deadline=None)
    def test_labels_and_size_follow_input(self, width, height, seed):
        image = np.random.default_rng(seed).integers(0, 256, (height, width, 3)).astype(np.uint8)
        mask = predict_gan(self.state, image)
        self.assertEqual(mask.size, (width, height))
        self.assertTrue(np.isin(mask.labels, (0, 1)).all())

    def test_repeated_prediction_is_identical(self):
        image = disc_example(3).image
        self.assertEqual(predict_gan(self.state, image), predict_gan(self.state, image))

    def test_increasing_remap_fixing_half_keeps_prediction(self):
        image = np.random.default_rng(5).integers(0, 256, (64, 64, 3)).astype(np.uint8)
        remapped = dataclasses.replace(self.state, generator=_Reparametrised(self.state.generator))
        self.assertEqual(predict_gan(remapped, image), predict_gan(self.state, image))


class GanTrainingTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_example_without_mask_rejected(self):
        bare = LabelledImage('bare', np.zeros((64, 64, 3), dtype=np.uint8))
        with self.assertRaisesMessage(ValidationError, 'bare'):
            train_gan(build_gan(small_config()), [disc_example(0), bare])

    def test_short_run_traces_and_checkpoints(self):
        torch.manual_seed(0)
        config = small_config(iterations=5, checkpoint_every=2)
        examples = [disc_example(i, side=48) for i in range(3)]
        state = train_gan(build_gan(config), examples,
                          checkpoint_path=self.root / 'gan.pt', loss_trace_path=self.root / 'loss.jsonl')
        self.assertEqual(state.iteration, 5)

        rows = [json.loads(line) for line in (self.root / 'loss.jsonl').read_text().splitlines()]
        self.assertEqual([row['iteration'] for row in rows], [1, 2, 3, 4, 5])
        for column in ('generator_adversarial', 'reconstruction', 'discriminator_real', 'discriminator_fake'):
            self.assertTrue(all(math.isfinite(row[column]) for row in rows))

        restored = load_gan(self.root / 'gan.pt')
        self.assertEqual(restored.iteration, 5)
        self.assertEqual(restored.config, config)
        self.assertEqual(predict_gan(restored, examples[0].image), predict_gan(state, examples[0].image))

    def test_gan_checkpoint_is_not_loaded_as_fcn(self):
        path = save_gan(build_gan(small_config()), self.root / 'gan.pt')
        with self.assertRaises(ImproperlyConfigured):
            load_fcn(path)

    @unittest.skipUnless(get_setting('SLOW_TESTS'), "acceptance-scale training run")
    def test_overfits_synthetic_discs(self):
        torch.manual_seed(0)
        config = GanConfig(input_side=64, base_filters=32, iterations=3000, log_every=500)
        examples = [disc_example(i) for i in range(8)]
        state = train_gan(build_gan(config), examples)

        for losses in state.losses:
            self.assertTrue(np.all(np.isfinite([losses.generator_adversarial, losses.reconstruction,
                                                losses.discriminator_real, losses.discriminator_fake])))
        accuracy = np.mean([losses.discriminator_accuracy for losses in state.losses[-500:]])
        self.assertTrue(0.02 < accuracy < 0.98)

        errors = [segmentation_error(predict_gan(state, e.image), e.mask) for e in examples]
        self.assertLess(np.mean(errors), 0.05)
