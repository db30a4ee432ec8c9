import json
import tempfile
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from .imaging import load_image, load_mask, save_mask
from .manifest import ManifestParseError, load_manifest, merge_manifests, write_manifest
from .samples import BinaryMask, ImageSample, Spectrum, SplitTag
from .splits import fixed_split, load_split, save_split, split_dataset


def make_sample(sample_id, split=None):
    return ImageSample(
        id=sample_id,
        image_path=Path(f"{sample_id}.png"),
        mask_path=None,
        dataset='synthetic',
        subject='s0',
        spectrum=Spectrum.NIR,
        width=8,
        height=8,
        split=split,
    )


class ManifestTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        for name, size in (('a', (6, 4)), ('b', (5, 5)), ('c', (3, 2))):
            Image.new('L', size).save(self.root / f"{name}.png")
            Image.new('L', size, color=255).save(self.root / f"{name}_mask.png")

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, records, name='manifest.jsonl'):
        path = self.root / name
        path.write_text(''.join(json.dumps(r) + '\n' for r in records), encoding='utf-8')
        return path

    def record(self, name, **extra):
        return {
            'id': name,
            'image_path': f"{name}.png",
            'mask_path': f"{name}_mask.png",
            'dataset': 'synthetic',
            'subject': 's1',
            'spectrum': 'NIR',
            **extra,
        }

    def test_load_manifest_keeps_file_order_and_reads_dimensions(self):
        path = self.write([self.record('b'), self.record('a'), self.record('c')])
        samples = load_manifest(path)
        self.assertEqual([s.id for s in samples], ['b', 'a', 'c'])
        self.assertEqual(samples[1].size, (6, 4))
        self.assertEqual(samples[2].size, (3, 2))
        self.assertEqual(samples[0].image_path, self.root / 'b.png')
        self.assertEqual(samples[0].spectrum, Spectrum.NIR)

    def test_empty_manifest(self):
        path = self.root / 'empty.jsonl'
        path.write_text('', encoding='utf-8')
        self.assertEqual(load_manifest(path), [])

    def test_missing_manifest_raises_os_error(self):
        with self.assertRaises(OSError):
            load_manifest(self.root / 'missing.jsonl')

    def test_record_without_image_path_names_its_line(self):
        broken = self.record('b')
        del broken['image_path']
        path = self.write([self.record('a'), broken])
        with self.assertRaises(ManifestParseError) as ctx:
            load_manifest(path)
        self.assertEqual(ctx.exception.line_number, 2)
        self.assertIn('line 2', str(ctx.exception))

    def test_invalid_json_is_a_parse_error(self):
        path = self.root / 'bad.jsonl'
        path.write_text('{"id": "a",\n', encoding='utf-8')
        with self.assertRaises(ManifestParseError):
            load_manifest(path)

    def test_duplicate_id_rejected(self):
        path = self.write([self.record('a'), self.record('a')])
        with self.assertRaises(ValidationError):
            load_manifest(path)

    def test_mask_size_must_match_image(self):
        path = self.write([self.record('a', mask_path='b_mask.png')])
        with self.assertRaises(ValidationError):
            load_manifest(path)

    def test_partial_box_annotation_rejected(self):
        path = self.write([self.record('a', x_min=0, y_min=0)])
        with self.assertRaises(ManifestParseError):
            load_manifest(path)

    def test_box_and_split_fields(self):
        path = self.write([self.record('a', x_min=1, y_min=0, x_max=5, y_max=3, split='test')])
        sample = load_manifest(path)[0]
        self.assertEqual(sample.box, (1, 0, 5, 3))
        self.assertEqual(sample.split, SplitTag.TEST)

    def test_invalid_utf8_names_its_line(self):
        path = self.root / 'latin.jsonl'
        path.write_bytes(json.dumps(self.record('a')).encode('utf-8') + b'\n' + b'\xff\xfe{"id": "b"}\n')
        with self.assertRaises(ManifestParseError) as ctx:
            load_manifest(path)
        self.assertEqual(ctx.exception.line_number, 2)
        self.assertIn('line 2', str(ctx.exception))
        self.assertIn('UTF-8', str(ctx.exception))

    def test_box_outside_image_rejected(self):
        for box in ({'x_min': -2, 'y_min': 0, 'x_max': 3, 'y_max': 3},
                    {'x_min': 1, 'y_min': 0, 'x_max': 7, 'y_max': 3},
                    {'x_min': 1, 'y_min': 0, 'x_max': 5, 'y_max': 5}):
            with self.subTest(box=box):
                path = self.write([self.record('b'), self.record('a', **box)])
                with self.assertRaises(ManifestParseError) as ctx:
                    load_manifest(path)
                self.assertEqual(ctx.exception.line_number, 2)
                self.assertIn('outside its 6x4 image', str(ctx.exception))

    def test_box_touching_image_edges_accepted(self):
        path = self.write([self.record('a', x_min=0, y_min=0, x_max=6, y_max=4)])
        self.assertEqual(load_manifest(path)[0].box, (0, 0, 6, 4))

    def test_write_then_load_manifest(self):
        samples = load_manifest(self.write([self.record('a', split='train'), self.record('c')]))
        out = write_manifest(samples, self.root / 'copy.jsonl')
        self.assertEqual(load_manifest(out), samples)

    def test_merge_manifests_rejects_colliding_ids(self):
        first = self.write([self.record('a')], name='one.jsonl')
        second = self.write([self.record('a')], name='two.jsonl')
        with self.assertRaises(ValidationError):
            merge_manifests([first, second], self.root / 'merged.jsonl')

    def test_merge_manifests(self):
        first = self.write([self.record('a')], name='one.jsonl')
        second = self.write([self.record('b'), self.record('c')], name='two.jsonl')
        merged = load_manifest(merge_manifests([first, second], self.root / 'merged.jsonl'))
        self.assertEqual([s.id for s in merged], ['a', 'b', 'c'])


class SplitTestCase(SimpleTestCase):
    def test_ten_samples_split_eight_two_and_repeat(self):
        samples = [make_sample(f"s{i}") for i in range(10)]
        first = split_dataset(samples, 7, 0.8)
        second = split_dataset(samples, 7, 0.8)
        self.assertEqual(len(first.train_ids), 8)
        self.assertEqual(len(first.test_ids), 2)
        self.assertEqual(first, second)

    def test_five_samples_round_to_four_train(self):
        split = split_dataset([make_sample(f"s{i}") for i in range(5)], 1, 0.8)
        self.assertEqual((len(split.train_ids), len(split.test_ids)), (4, 1))

    def test_single_sample_leaves_no_test_set(self):
        with self.assertRaises(ValidationError):
            split_dataset([make_sample('only')], 0, 0.8)

    def test_empty_sample_list(self):
        with self.assertRaises(ValidationError):
            split_dataset([], 0, 0.8)

    def test_fraction_outside_unit_interval(self):
        with self.assertRaises(ValidationError):
            split_dataset([make_sample('a'), make_sample('b')], 0, 1.0)

    @given(st.integers(min_value=2, max_value=200), st.integers(min_value=0, max_value=2 ** 32),
           st.floats(min_value=0.05, max_value=0.95))
    @settings(max_examples=100, deadline=None)
    def test_split_partitions_samples(self, n, seed, fraction):
        samples = [make_sample(f"s{i}") for i in range(n)]
        expected_train = int(np.floor(fraction * n + 0.5))
        if expected_train in (0, n):
            with self.assertRaises(ValidationError):
                split_dataset(samples, seed, fraction)
            return
        split = split_dataset(samples, seed, fraction)
        self.assertFalse(set(split.train_ids) & set(split.test_ids))
        self.assertEqual(set(split.train_ids) | set(split.test_ids), {s.id for s in samples})
        self.assertEqual(len(split.train_ids), expected_train)
        self.assertEqual(split, split_dataset(samples, seed, fraction))

    def test_fixed_split_from_tags(self):
        samples = [make_sample('a', SplitTag.TRAIN), make_sample('b', SplitTag.TEST), make_sample('c', SplitTag.TRAIN)]
        split = fixed_split(samples)
        self.assertEqual(split.train_ids, ('a', 'c'))
        self.assertEqual(split.test_ids, ('b',))
        train, test = split.partition(samples)
        self.assertEqual([s.id for s in test], ['b'])

    def test_fixed_split_requires_tags(self):
        with self.assertRaises(ValidationError):
            fixed_split([make_sample('a', SplitTag.TRAIN), make_sample('b')])

    def test_save_and_load_split(self):
        split = split_dataset([make_sample(f"s{i}") for i in range(6)], 3, 0.5)
        with tempfile.TemporaryDirectory() as tmp:
            path = save_split(split, Path(tmp) / 'split.yaml')
            self.assertEqual(load_split(path), split)


class MaskIOTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_black_and_white_images(self):
        Image.new('L', (4, 3), color=0).save(self.root / 'black.png')
        Image.new('L', (4, 3), color=255).save(self.root / 'white.png')
        self.assertFalse(load_mask(self.root / 'black.png').labels.any())
        self.assertTrue(load_mask(self.root / 'white.png').labels.all())

    def test_threshold_at_128(self):
        Image.fromarray(np.array([[0, 127, 128, 255]], dtype=np.uint8)).save(self.root / 'ramp.png')
        self.assertEqual(load_mask(self.root / 'ramp.png').labels.tolist(), [[0, 0, 1, 1]])

    def test_equal_rgb_channels_accepted(self):
        Image.new('RGB', (2, 2), color=(200, 200, 200)).save(self.root / 'grey.png')
        self.assertTrue(load_mask(self.root / 'grey.png').labels.all())

    def test_unequal_channels_rejected(self):
        Image.new('RGB', (2, 2), color=(255, 0, 0)).save(self.root / 'red.png')
        with self.assertRaises(ValidationError):
            load_mask(self.root / 'red.png')

    def test_grey_palette_mask_accepted(self):
        image = Image.new('P', (3, 2), color=1)
        image.putpalette([0, 0, 0, 200, 200, 200] + [0] * 762)
        image.save(self.root / 'palette.png')
        self.assertTrue(load_mask(self.root / 'palette.png').labels.all())

    def test_coloured_palette_mask_rejected(self):
        image = Image.new('P', (3, 2), color=1)
        image.putpalette([0, 0, 0, 255, 0, 0] + [0] * 762)
        image.save(self.root / 'palette_red.png')
        with self.assertRaisesMessage(ValidationError, 'unequal colour channels'):
            load_mask(self.root / 'palette_red.png')

    def test_unreadable_file(self):
        (self.root / 'junk.png').write_bytes(b'not an image')
        with self.assertRaises(OSError):
            load_mask(self.root / 'junk.png')

    def test_single_pixel_mask_saved_as_255(self):
        path = save_mask(BinaryMask(np.ones((1, 1), dtype=np.uint8)), self.root / 'one.png')
        with Image.open(path) as image:
            self.assertEqual(image.mode, 'L')
            self.assertEqual(image.getpixel((0, 0)), 255)

    def test_shape_preserved(self):
        mask = BinaryMask(np.zeros((2, 3), dtype=np.uint8))
        with Image.open(save_mask(mask, self.root / 'shape.png')) as image:
            self.assertEqual(image.size, (3, 2))

    def test_checkerboard_round_trip(self):
        mask = BinaryMask(np.array([[1, 0], [0, 1]], dtype=np.uint8))
        self.assertEqual(load_mask(save_mask(mask, self.root / 'check.png')), mask)

    @given(arrays(np.uint8, st.tuples(st.integers(1, 32), st.integers(1, 32)), elements=st.integers(0, 1)))
    @settings(max_examples=50, deadline=None)
    def test_round_trip_is_exact(self, labels):
        mask = BinaryMask(labels)
        self.assertEqual(load_mask(save_mask(mask, self.root / 'prop.png')), mask)

    def test_load_image_replicates_grayscale(self):
        Image.new('L', (3, 2), color=40).save(self.root / 'gray.png')
        image = load_image(self.root / 'gray.png')
        self.assertEqual(image.shape, (2, 3, 3))
        self.assertTrue((image == 40).all())


class BinaryMaskTestCase(SimpleTestCase):
    def test_labels_must_be_binary(self):
        with self.assertRaises(ValidationError):
            BinaryMask(np.array([[0, 2]]))

    def test_bounding_box_matches_brute_force(self):
        labels = np.zeros((10, 12), dtype=np.uint8)
        labels[2:5, 3:9] = 1
        labels[7, 4] = 1
        ys, xs = [], []
        for y in range(10):
            for x in range(12):
                if labels[y, x]:
                    ys.append(y)
                    xs.append(x)
        self.assertEqual(BinaryMask(labels).bounding_box(), (min(xs), min(ys), max(xs) + 1, max(ys) + 1))

    def test_empty_mask_has_no_box(self):
        self.assertIsNone(BinaryMask.zeros(3, 3).bounding_box())

    def test_image_sample_dimensions_validated(self):
        with self.assertRaises(ValidationError):
            ImageSample('x', Path('x.png'), None, 'd', 's', Spectrum.VIS, 0, 4)
