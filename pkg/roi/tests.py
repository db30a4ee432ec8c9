import tempfile
import unittest
from pathlib import Path

import numpy as np
import torch
from django.core.exceptions import ImproperlyConfigured, ValidationError
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
from PIL import Image

from corpus.samples import BinaryMask, ImageSample, Spectrum
from iris_segmentation.checkpoints import load_checkpoint
from iris_segmentation.runtime import get_setting

from .detector import (DetectorBundle, DetectorConfig, build_detector, decode_detections, detect, kmeans_anchors,
                       load_detector, save_detector)
from .geometry import Detection, RoiBox, crop_roi, pad_and_square, roi_for, select_detection
from .training import box_iou, detection_loss, ground_truth_box, train_detector


def disc_sample(root, index, side=128, rng=None):
    rng = rng or np.random.default_rng(index)
    radius = int(rng.integers(side // 8, side // 4))
    cx = int(rng.integers(radius, side - radius))
    cy = int(rng.integers(radius, side - radius))
    yy, xx = np.mgrid[:side, :side]
    disc = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius ** 2
    image = np.where(disc, 200, 40).astype(np.uint8)
    Image.fromarray(image).save(root / f"disc{index}.png")
    Image.fromarray(disc.astype(np.uint8) * 255).save(root / f"disc{index}_mask.png")
    return ImageSample(
        id=f"disc{index}",
        image_path=root / f"disc{index}.png",
        mask_path=root / f"disc{index}_mask.png",
        dataset='discs',
        subject='s0',
        spectrum=Spectrum.NIR,
        width=side,
        height=side,
    )


class DetectorArchitectureTestCase(SimpleTestCase):
    # (channels, height, width) after each row of the layer table, then the head
    EXPECTED_SHAPES = [
        (16, 416, 416), (16, 208, 208),
        (32, 208, 208), (32, 104, 104),
        (64, 104, 104), (64, 52, 52),
        (128, 52, 52), (128, 26, 26),
        (256, 26, 26), (256, 13, 13),
        (512, 13, 13), (512, 13, 13),
        (1024, 13, 13), (1024, 13, 13),
        (30, 13, 13),
    ]

    def test_grayscale_output_grid(self):
        model = build_detector(1).eval()
        with torch.no_grad():
            output = model(torch.rand(1, 1, 416, 416))
        self.assertEqual(tuple(output.shape), (1, 30, 13, 13))

    def test_rgb_output_grid(self):
        model = build_detector(3).eval()
        with torch.no_grad():
            output = model(torch.rand(1, 3, 416, 416))
        self.assertEqual(tuple(output.shape), (1, 30, 13, 13))

    def test_layer_by_layer_shapes(self):
        model = build_detector(3).eval()
        with torch.no_grad():
            shapes = model.layer_shapes(torch.rand(1, 3, 416, 416))
        self.assertEqual(shapes, self.EXPECTED_SHAPES)

    def test_nine_convolutions_and_six_pools(self):
        model = build_detector(1)
        convs = [m for m in model.modules() if isinstance(m, torch.nn.Conv2d)]
        pools = [m for m in model.modules() if isinstance(m, torch.nn.MaxPool2d)]
        self.assertEqual(len(convs), 9)
        self.assertEqual(len(pools), 6)
        self.assertEqual([c.out_channels for c in convs], [16, 32, 64, 128, 256, 512, 1024, 1024, 30])

    def test_four_channels_rejected(self):
        with self.assertRaises(ImproperlyConfigured):
            build_detector(4)


class SelectDetectionTestCase(SimpleTestCase):
    def setUp(self):
        self.box_a = Detection((10, 10, 50, 50), 0.9)
        self.box_b = Detection((60, 60, 90, 90), 0.6)

    def test_largest_confidence_wins(self):
        self.assertEqual(select_detection([self.box_b, self.box_a], (100, 100)), self.box_a)

    def test_below_threshold_falls_back(self):
        self.assertIsNone(select_detection([Detection((10, 10, 50, 50), 0.2)], (100, 100)))

    def test_threshold_is_inclusive(self):
        detection = Detection((10, 10, 50, 50), 0.25)
        self.assertEqual(select_detection([detection], (100, 100)), detection)

    def test_empty_list_falls_back(self):
        self.assertIsNone(select_detection([], (100, 100)))
        roi = roi_for(None, (100, 80))
        self.assertTrue(roi.is_fallback)
        self.assertEqual(roi.crop, (0, 0, 100, 80))

    def test_tie_goes_to_first(self):
        first = Detection((0, 0, 10, 10), 0.5)
        second = Detection((20, 20, 30, 30), 0.5)
        self.assertEqual(select_detection([first, second], (100, 100)), first)

    @given(st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=10, unique=True), st.randoms())
    @settings(max_examples=100, deadline=None)
    def test_order_invariance(self, confidences, random):
        detections = [Detection((i, i, i + 5, i + 5), c) for i, c in enumerate(confidences)]
        shuffled = list(detections)
        random.shuffle(shuffled)
        self.assertEqual(select_detection(detections, (100, 100)), select_detection(shuffled, (100, 100)))


class PadAndSquareTestCase(SimpleTestCase):
    def test_worked_example(self):
        roi = pad_and_square((100, 100, 200, 180), (640, 480), 0.10)
        self.assertEqual(roi.side, 128)
        self.assertEqual(roi.crop, (86, 76, 214, 204))
        self.assertFalse(roi.is_fallback)
        self.assertEqual(roi.clamped_axes, ())

    def test_power_of_two_box_unchanged(self):
        roi = pad_and_square((10, 20, 74, 84), (200, 200), 0.0)
        self.assertEqual(roi.side, 64)
        self.assertEqual(roi.crop, (10, 20, 74, 84))

    def test_oversized_square_clamped_to_image(self):
        roi = pad_and_square((0, 0, 300, 300), (320, 240), 0.10)
        self.assertEqual(roi.side, 512)
        self.assertEqual(roi.crop, (0, 0, 320, 240))
        self.assertEqual(roi.clamped_axes, ('x', 'y'))
        self.assertFalse(roi.is_fallback)

    def test_invalid_box(self):
        with self.assertRaises(ValidationError):
            pad_and_square((50, 50, 40, 60), (100, 100))
        with self.assertRaises(ValidationError):
            pad_and_square((50, 50, 140, 60), (100, 100))

    @given(st.data())
    @settings(max_examples=10000, deadline=None)
    def test_geometry_properties(self, data):
        width = data.draw(st.integers(1, 1024))
        height = data.draw(st.integers(1, 1024))
        x_min = data.draw(st.integers(0, width - 1))
        y_min = data.draw(st.integers(0, height - 1))
        x_max = data.draw(st.integers(x_min + 1, width))
        y_max = data.draw(st.integers(y_min + 1, height))
        pad = data.draw(st.floats(0.0, 0.5))
        roi = pad_and_square((x_min, y_min, x_max, y_max), (width, height), pad)

        self.assertEqual(roi.side & (roi.side - 1), 0)
        x0, y0, x1, y1 = roi.crop
        self.assertTrue(0 <= x0 < x1 <= width and 0 <= y0 < y1 <= height)
        if not roi.clamped_axes:
            self.assertEqual(x1 - x0, roi.side)
            self.assertEqual(y1 - y0, roi.side)
            pad_x, pad_y = round(pad * (x_max - x_min), 6), round(pad * (y_max - y_min), 6)
            self.assertLessEqual(x0, max(0, np.floor(x_min - pad_x)))
            self.assertLessEqual(y0, max(0, np.floor(y_min - pad_y)))
            self.assertGreaterEqual(x1, min(width, np.ceil(x_max + pad_x)))
            self.assertGreaterEqual(y1, min(height, np.ceil(y_max + pad_y)))

        larger = pad_and_square((x_min, y_min, x_max, y_max), (width, height), pad + 0.1)
        self.assertGreaterEqual(larger.side, roi.side)


class CropRoiTestCase(SimpleTestCase):
    def setUp(self):
        self.image = np.arange(40 * 30, dtype=np.int64).reshape(30, 40)

    def test_full_image_crop_is_identity(self):
        crop, transform = crop_roi(self.image, RoiBox.full_image((40, 30)))
        np.testing.assert_array_equal(crop, self.image)
        self.assertTrue(transform.is_identity)

    def test_crop_matches_direct_indexing(self):
        crop, transform = crop_roi(self.image, RoiBox((10, 10, 20, 20), 10))
        self.assertEqual(crop.shape, (10, 10))
        np.testing.assert_array_equal(crop, self.image[10:20, 10:20])
        self.assertEqual((transform.offset_x, transform.offset_y), (10, 10))

    def test_paste_of_crop_restricts_mask_to_roi(self):
        labels = (np.random.default_rng(0).random((30, 40)) > 0.5).astype(np.uint8)
        mask = BinaryMask(labels)
        roi = RoiBox((5, 8, 21, 24), 16)
        crop, transform = crop_roi(labels, roi)
        pasted = transform.paste(BinaryMask(crop))
        expected = np.zeros_like(labels)
        expected[8:24, 5:21] = labels[8:24, 5:21]
        np.testing.assert_array_equal(pasted.labels, expected)
        self.assertEqual(transform.crop_mask(mask), BinaryMask(crop))

    def test_paste_rejects_wrong_size(self):
        _, transform = crop_roi(self.image, RoiBox((0, 0, 8, 8), 8))
        with self.assertRaises(ValidationError):
            transform.paste(BinaryMask.zeros(4, 4))


class AnchorAndDecodeTestCase(SimpleTestCase):
    def test_kmeans_returns_requested_anchor_count(self):
        sizes = np.random.default_rng(1).uniform(0.1, 0.5, size=(40, 2))
        anchors = kmeans_anchors(sizes, k=5, seed=0)
        self.assertEqual(anchors.shape, (5, 2))
        areas = anchors[:, 0] * anchors[:, 1]
        self.assertTrue(np.all(np.diff(areas) >= 0))

    def test_kmeans_with_fewer_boxes_than_anchors(self):
        anchors = kmeans_anchors([(0.3, 0.3), (0.2, 0.25)], k=5)
        self.assertEqual(anchors.shape, (5, 2))

    def test_decode_centres_box_in_cell(self):
        output = torch.full((30, 13, 13), -20.0)
        # anchor 0, cell (row 6, col 6): offsets 0.5, size exactly the anchor, confident
        output[0:4, 6, 6] = 0.0
        output[4:6, 6, 6] = 20.0
        anchors = np.array([[2.6, 2.6]] * 5)
        detections = decode_detections(output, anchors, (416, 416), min_confidence=0.5)
        self.assertEqual(len(detections), 1)
        x_min, y_min, x_max, y_max = detections[0].box
        self.assertAlmostEqual((x_min + x_max) / 2, 6.5 / 13 * 416, places=3)
        self.assertAlmostEqual(x_max - x_min, 2.6 / 13 * 416, places=3)


class DetectorTrainingTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_ground_truth_box_from_mask(self):
        sample = disc_sample(self.root, 0)
        mask = np.asarray(Image.open(sample.mask_path)) > 0
        ys, xs = np.nonzero(mask)
        self.assertEqual(ground_truth_box(sample), (xs.min(), ys.min(), xs.max() + 1, ys.max() + 1))

    def test_empty_training_set(self):
        with self.assertRaises(ValidationError):
            train_detector(build_detector(1), [], DetectorConfig(iterations=1))

    def test_sample_without_box_or_mask_is_listed(self):
        sample = disc_sample(self.root, 0)
        bare = ImageSample('bare', sample.image_path, None, 'discs', 's0', Spectrum.NIR, 128, 128)
        with self.assertRaises(ValidationError) as ctx:
            train_detector(build_detector(1), [sample, bare], DetectorConfig(iterations=1))
        self.assertIn('bare', str(ctx.exception))

    def test_loss_decreases_and_checkpoint_round_trips(self):
        torch.manual_seed(0)
        samples = [disc_sample(self.root, i) for i in range(4)]
        config = DetectorConfig(iterations=20, batch_size=2, log_every=5, checkpoint_every=10)
        bundle = train_detector(build_detector(1), samples, config, checkpoint_path=self.root / 'detector.pt',
                                loss_trace_path=self.root / 'trace.jsonl')
        losses = [loss for _, loss in bundle.loss_trace]
        self.assertEqual(len(losses), 20)
        self.assertTrue(all(np.isfinite(losses)))
        self.assertLess(np.mean(losses[-3:]), np.mean(losses[:3]))
        self.assertEqual(len((self.root / 'trace.jsonl').read_text().splitlines()), 20)

        restored = load_detector(self.root / 'detector.pt')
        np.testing.assert_allclose(restored.anchors, bundle.anchors)
        image = np.asarray(Image.open(samples[0].image_path).convert('RGB'))
        self.assertEqual(
            [d.box for d in detect(restored, image)],
            [d.box for d in detect(bundle, image)],
        )

    @unittest.skipUnless(get_setting('SLOW_TESTS'), "acceptance-scale training run")
    def test_overfits_synthetic_discs(self):
        torch.manual_seed(0)
        samples = [disc_sample(self.root, i) for i in range(16)]
        bundle = train_detector(build_detector(1), samples, DetectorConfig(iterations=500, batch_size=8))
        ious = []
        for sample in samples:
            image = np.asarray(Image.open(sample.image_path).convert('RGB'))
            best = select_detection(detect(bundle, image), sample.size, threshold=0.0)
            ious.append(box_iou(best.box, ground_truth_box(sample)) if best else 0.0)
        self.assertGreater(np.mean(ious), 0.5)

    def test_box_centre_left_of_image_trains_first_column(self):
        anchors = torch.full((5, 2), 3.0)
        output = torch.zeros(1, 5 * 6, 13, 13, requires_grad=True)
        detection_loss(output, torch.tensor([[-0.15, 0.5, 0.1, 0.1]]), anchors, DetectorConfig(iterations=1)).backward()
        objectness_grad = output.grad.view(1, 5, 6, 13, 13)[0, :, 4, 6]
        # the responsible anchor is pulled towards objectness 1, every other cell towards 0
        self.assertTrue((objectness_grad[:, 0] < 0).any())
        self.assertTrue((objectness_grad[:, 12] > 0).all())

    def test_checkpoint_kind_is_checked(self):
        bundle = DetectorBundle(build_detector(1), np.ones((5, 2)), DetectorConfig(iterations=1))
        path = save_detector(bundle, self.root / 'det.pt')
        self.assertEqual(load_detector(path).input_channels, 1)
        with self.assertRaises(ImproperlyConfigured):
            load_checkpoint(path, 'fcn')
