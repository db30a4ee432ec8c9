import math
import tempfile
import unittest
from pathlib import Path

import numpy as np
import torch
from django.conf import settings as django_settings
from django.core.exceptions import ImproperlyConfigured, ValidationError
from django.test import SimpleTestCase, override_settings
from hypothesis import given, settings, strategies as st

from corpus.samples import BinaryMask, LabelledImage
from evaluation.metrics import segmentation_error
from iris_segmentation.runtime import get_setting

from .config import FcnConfig
from .model import build_fcn
from .preprocessing import pad_to_multiple, padding_multiple, strip_padding
from .training import fcn_loss, load_fcn, predict_fcn, train_fcn


def tiny_config(**overrides):
    values = dict(base_width=4, head_width=16, dropout_probability=0.0, learning_rate=1e-3, iterations=1)
    values.update(overrides)
    return FcnConfig(**values)


def disc_example(index, side=64):
    rng = np.random.default_rng(index)
    radius = int(rng.integers(side // 6, side // 3))
    cx, cy = (int(rng.integers(radius, side - radius)) for _ in range(2))
    yy, xx = np.mgrid[:side, :side]
    disc = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius ** 2
    image = np.repeat(np.where(disc, 190, 50).astype(np.uint8)[..., None], 3, axis=-1)
    return LabelledImage(sample_id=f"disc{index}", image=image, mask=BinaryMask.from_bool(disc))


class FcnShapeTestCase(SimpleTestCase):
    def setUp(self):
        torch.manual_seed(0)
        self.model = build_fcn(tiny_config()).eval()

    def test_square_input(self):
        with torch.no_grad():
            self.assertEqual(tuple(self.model(torch.rand(1, 3, 128, 128)).shape), (1, 2, 128, 128))

    def test_rectangular_input(self):
        with torch.no_grad():
            self.assertEqual(tuple(self.model(torch.rand(1, 3, 256, 192)).shape), (1, 2, 256, 192))

    def test_full_width_model(self):
        model = build_fcn(FcnConfig()).eval()
        self.assertEqual(len(model.convolutions), 13)
        with torch.no_grad():
            self.assertEqual(tuple(model(torch.rand(1, 3, 128, 128)).shape), (1, 2, 128, 128))

    def test_indivisible_input_rejected(self):
        with self.assertRaises(ImproperlyConfigured):
            self.model(torch.rand(1, 3, 100, 100))

    @given(st.integers(1, 5), st.integers(1, 5))
    @settings(max_examples=15, deadline=None)
    def test_prediction_matches_input_size(self, rows, cols):
        image = np.zeros((32 * rows, 32 * cols, 3), dtype=np.uint8)
        self.assertEqual(predict_fcn(self.model, image).size, (32 * cols, 32 * rows))

    def test_skip_layers_use_configured_std(self):
        model = build_fcn(tiny_config(skip_init_std=1e-4))
        self.assertLess(model.score_pool3.weight.abs().max().item(), 1e-3)
        self.assertTrue(torch.all(model.score_pool4.bias == 0))

    def test_pretrained_encoder_shape_mismatch_names_layer(self):
        state = {f"features.{i}.weight": torch.zeros(8, 3, 3, 3) for i in range(13)}
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'vgg.pt'
            torch.save(state, path)
            with self.assertRaisesMessage(ImproperlyConfigured, 'conv1'):
                build_fcn(tiny_config(), pretrained_encoder=path)

    def test_pretrained_encoder_loaded_in_order(self):
        reference = build_fcn(tiny_config())
        state = {
            f"features.{i}.{kind}": getattr(conv, kind).detach().clone() + 1.0
            for i, conv in enumerate(reference.convolutions) for kind in ('weight', 'bias')
        }
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'vgg.pt'
            torch.save(state, path)
            model = build_fcn(tiny_config(), pretrained_encoder=path)
        for i, conv in enumerate(model.convolutions):
            self.assertTrue(torch.equal(conv.weight, state[f"features.{i}.weight"]))


class FcnLossTestCase(SimpleTestCase):
    def test_uniform_logits_give_ln_two(self):
        mask = BinaryMask(np.array([[0, 1, 1], [1, 0, 0]], dtype=np.uint8))
        loss = fcn_loss(torch.zeros(1, 2, 2, 3), mask)
        self.assertAlmostEqual(loss.item(), math.log(2), places=6)

    def test_confident_correct_logits_approach_zero(self):
        labels = np.array([[0, 1], [1, 0]], dtype=np.uint8)
        margin = 50.0
        logits = torch.zeros(1, 2, 2, 2)
        logits[0, 1] = torch.from_numpy(labels * 2.0 - 1.0) * margin
        logits[0, 0] = -logits[0, 1]
        self.assertLess(fcn_loss(logits, BinaryMask(labels)).item(), 1e-10)

    def test_hand_computed_example(self):
        logits = torch.tensor([[[[2.0, 0.0]], [[0.0, 2.0]]]])
        loss = fcn_loss(logits, BinaryMask(np.array([[0, 1]], dtype=np.uint8)))
        self.assertAlmostEqual(loss.item(), math.log(1 + math.exp(-2)), places=6)
        self.assertAlmostEqual(loss.item(), 0.1269, places=4)

    def test_size_mismatch(self):
        with self.assertRaises(ValidationError):
            fcn_loss(torch.zeros(1, 2, 4, 4), BinaryMask.zeros(3, 4))

    @given(st.integers(0, 2 ** 31))
    @settings(max_examples=50, deadline=None)
    def test_loss_is_non_negative(self, seed):
        generator = torch.Generator().manual_seed(seed)
        logits = torch.randn(1, 2, 5, 4, generator=generator) * 10
        target = torch.randint(0, 2, (1, 5, 4), generator=generator)
        self.assertGreaterEqual(fcn_loss(logits, target).item(), 0.0)

    def test_gradients_match_central_differences(self):
        torch.manual_seed(0)
        model = torch.nn.Conv2d(2, 2, 3, padding=1).double()
        inputs = torch.randn(1, 2, 8, 8, dtype=torch.float64)
        target = torch.randint(0, 2, (1, 8, 8))

        fcn_loss(model(inputs), target).backward()
        step = 1e-6
        for parameter in model.parameters():
            analytic = parameter.grad.detach().clone().view(-1)
            flat = parameter.data.view(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                with torch.no_grad():
                    flat[i] = original + step
                    upper = fcn_loss(model(inputs), target).item()
                    flat[i] = original - step
                    lower = fcn_loss(model(inputs), target).item()
                    flat[i] = original
                numeric = (upper - lower) / (2 * step)
                self.assertLess(abs(numeric - analytic[i].item()), 1e-7 + 1e-4 * abs(numeric))

    def test_gradcheck_on_logits(self):
        logits = torch.randn(1, 2, 8, 8, dtype=torch.float64, requires_grad=True)
        target = torch.randint(0, 2, (1, 8, 8))
        self.assertTrue(torch.autograd.gradcheck(lambda x: fcn_loss(x, target), (logits,), eps=1e-6, atol=1e-6, rtol=1e-3))


class _Shifted(torch.nn.Module):
    def __init__(self, base, shift):
        super().__init__()
        self.base = base
        self.shift = shift

    def forward(self, x):
        return self.base(x) + self.shift


class FcnPredictTestCase(SimpleTestCase):
    def setUp(self):
        torch.manual_seed(1)
        self.model = build_fcn(tiny_config())
        self.image = np.random.default_rng(0).integers(0, 256, (64, 96, 3)).astype(np.uint8)

    def test_prediction_is_deterministic(self):
        self.assertEqual(predict_fcn(self.model, self.image), predict_fcn(self.model, self.image))

    def test_all_zero_image(self):
        mask = predict_fcn(self.model, np.zeros((64, 64, 3), dtype=np.uint8))
        self.assertEqual(mask.size, (64, 64))
        self.assertTrue(np.isin(mask.labels, (0, 1)).all())

    def test_adding_constant_to_both_channels_keeps_prediction(self):
        shifted = _Shifted(self.model, 7.5)
        self.assertEqual(predict_fcn(shifted, self.image), predict_fcn(self.model, self.image))

    def test_padding_round_trip(self):
        image = np.ones((50, 70, 3), dtype=np.uint8)
        padded, padding = pad_to_multiple(image, 32)
        self.assertEqual(padded.shape, (64, 96, 3))
        self.assertEqual((padding.top, padding.bottom, padding.left, padding.right), (7, 7, 13, 13))
        mask = predict_fcn(self.model, padded)
        self.assertEqual(strip_padding(mask, padding).size, (70, 50))

    def test_padding_follows_configured_multiple(self):
        image = np.ones((50, 70, 3), dtype=np.uint8)
        self.assertEqual(pad_to_multiple(image)[0].shape, (64, 96, 3))
        with override_settings(IRIS_SEGMENTATION={**django_settings.IRIS_SEGMENTATION, 'FCN_MULTIPLE': 64}):
            self.assertEqual(padding_multiple(), 64)
            padded, padding = pad_to_multiple(image)
        self.assertEqual(padded.shape, (64, 128, 3))
        self.assertEqual((padding.left, padding.right), (29, 29))

    def test_multiple_must_respect_downsampling(self):
        for multiple in (0, 16, 48):
            overrides = {**django_settings.IRIS_SEGMENTATION, 'FCN_MULTIPLE': multiple}
            with self.subTest(multiple=multiple), override_settings(IRIS_SEGMENTATION=overrides):
                with self.assertRaises(ImproperlyConfigured):
                    pad_to_multiple(np.ones((8, 8), dtype=np.uint8))


class FcnTrainingTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_zero_iterations_rejected(self):
        with self.assertRaises(ImproperlyConfigured):
            tiny_config(iterations=0)

    def test_example_without_mask_rejected(self):
        unlabelled = LabelledImage('bare', np.zeros((64, 64, 3), dtype=np.uint8))
        with self.assertRaisesMessage(ValidationError, 'bare'):
            train_fcn(build_fcn(tiny_config()), [disc_example(0), unlabelled], tiny_config())

    def test_indivisible_example_rejected(self):
        odd = LabelledImage('odd', np.zeros((50, 64, 3), dtype=np.uint8), BinaryMask.zeros(64, 50))
        with self.assertRaises(ValidationError):
            train_fcn(build_fcn(tiny_config()), [odd], tiny_config())

    def test_short_run_reduces_loss_and_checkpoints(self):
        torch.manual_seed(0)
        config = tiny_config(base_width=8, head_width=32, iterations=150, log_every=50, checkpoint_every=100)
        examples = [disc_example(i) for i in range(2)]
        result = train_fcn(build_fcn(config), examples, config,
                           checkpoint_path=self.root / 'fcn.pt', loss_trace_path=self.root / 'loss.jsonl')
        losses = [loss for _, loss in result.loss_trace]
        self.assertEqual([i for i, _ in result.loss_trace], list(range(1, 151)))
        self.assertTrue(np.all(np.isfinite(losses)))
        self.assertLess(np.mean(losses[-10:]), np.mean(losses[:10]))

        restored = load_fcn(self.root / 'fcn.pt')
        self.assertEqual(predict_fcn(restored, examples[0].image), predict_fcn(result.model, examples[0].image))

    @unittest.skipUnless(get_setting('SLOW_TESTS'), "acceptance-scale training run")
    def test_overfits_synthetic_discs(self):
        torch.manual_seed(0)
        config = FcnConfig(learning_rate=1e-4, iterations=2000, log_every=200)
        examples = [disc_example(i, side=128) for i in range(8)]
        result = train_fcn(build_fcn(config), examples, config)
        self.assertTrue(np.all(np.isfinite([loss for _, loss in result.loss_trace])))
        errors = [segmentation_error(predict_fcn(result.model, e.image), e.mask) for e in examples]
        self.assertLess(np.mean(errors), 0.02)
