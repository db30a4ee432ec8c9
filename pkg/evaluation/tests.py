import math
import tempfile
import time
from pathlib import Path

import numpy as np
import yaml
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats as scipy_stats

from corpus.samples import BinaryMask

from .metrics import EvalRecord, PixelCounts, confusion_counts, evaluate_sample, f1_score, segmentation_error
from .reports import read_records_csv, write_records_csv, write_summary
from .stats import aggregate, aggregate_by_dataset, paired_t_test


def mask(rows):
    return BinaryMask(np.array(rows, dtype=np.uint8))


def mask_pairs(max_side=16):
    return st.integers(1, max_side).flatmap(
        lambda h: st.integers(1, max_side).flatmap(
            lambda w: st.tuples(
                arrays(np.uint8, (h, w), elements=st.integers(0, 1)),
                arrays(np.uint8, (h, w), elements=st.integers(0, 1)),
            )
        )
    )


def record(sample_id, e, f1=0.5, dataset=''):
    return EvalRecord(sample_id=sample_id, counts=PixelCounts(tp=1, fp=0, tn=3, fn=0), e=e,
                      precision=f1, recall=f1, f1=f1, dataset=dataset)


class ConfusionCountsTestCase(SimpleTestCase):
    def test_all_ones(self):
        self.assertEqual(confusion_counts(mask([[1, 1], [1, 1]]), mask([[1, 1], [1, 1]])), PixelCounts(4, 0, 0, 0))

    def test_all_false_positives(self):
        self.assertEqual(confusion_counts(mask([[1, 1], [1, 1]]), mask([[0, 0], [0, 0]])), PixelCounts(0, 4, 0, 0))

    def test_mixed(self):
        counts = confusion_counts(mask([[1, 0], [0, 0]]), mask([[1, 1], [0, 0]]))
        self.assertEqual((counts.tp, counts.fp, counts.tn, counts.fn), (1, 0, 2, 1))

    def test_size_mismatch(self):
        with self.assertRaises(ValidationError):
            confusion_counts(BinaryMask.zeros(2, 3), BinaryMask.zeros(3, 2))

    def test_negative_counts_rejected(self):
        with self.assertRaises(ValidationError):
            PixelCounts(-1, 0, 0, 0)


class SegmentationErrorTestCase(SimpleTestCase):
    def test_identical_masks(self):
        m = mask([[1, 0, 1], [0, 1, 1]])
        self.assertEqual(segmentation_error(m, m), 0.0)

    def test_complementary_masks(self):
        m = mask([[1, 0, 1], [0, 1, 1]])
        self.assertEqual(segmentation_error(m, m.complement()), 1.0)

    def test_one_pixel_of_four(self):
        self.assertEqual(segmentation_error(mask([[1, 0], [0, 0]]), mask([[1, 1], [0, 0]])), 0.25)

    def test_size_mismatch(self):
        with self.assertRaises(ValidationError):
            segmentation_error(BinaryMask.zeros(4, 4), BinaryMask.zeros(4, 5))

    @given(mask_pairs())
    def test_symmetry(self, pair):
        p, t = map(BinaryMask, pair)
        self.assertEqual(segmentation_error(p, t), segmentation_error(t, p))

    @given(mask_pairs())
    def test_complement_sums_to_one(self, pair):
        p, t = map(BinaryMask, pair)
        self.assertAlmostEqual(segmentation_error(p, t) + segmentation_error(p.complement(), t), 1.0, places=12)

    @given(mask_pairs())
    def test_matches_confusion_counts(self, pair):
        p, t = map(BinaryMask, pair)
        counts = confusion_counts(p, t)
        self.assertEqual(counts.total, p.width * p.height)
        self.assertEqual(segmentation_error(p, t), (counts.fp + counts.fn) / counts.total)

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(7)
        elapsed = 0.0
        for _ in range(1000):
            h, w = rng.integers(1, 65, size=2)
            p = rng.integers(0, 2, size=(h, w)).astype(np.uint8)
            t = rng.integers(0, 2, size=(h, w)).astype(np.uint8)
            tp = fp = tn = fn = 0
            differing = 0
            for i in range(h):
                for j in range(w):
                    a, b = int(p[i, j]), int(t[i, j])
                    differing += a ^ b
                    tp += a and b
                    fp += a and not b
                    fn += b and not a
                    tn += not a and not b
            started = time.perf_counter()
            record = evaluate_sample('x', BinaryMask(p), BinaryMask(t))
            elapsed += time.perf_counter() - started
            self.assertEqual(record.e, differing / (h * w))
            self.assertEqual(record.counts, PixelCounts(tp, fp, tn, fn))
            if tp:
                precision, recall = tp / (tp + fp), tp / (tp + fn)
                self.assertAlmostEqual(record.f1, 2 * precision * recall / (precision + recall), places=12)
            else:
                self.assertIsNone(record.f1)
        self.assertLess(elapsed, 10)


class F1ScoreTestCase(SimpleTestCase):
    def test_perfect(self):
        self.assertEqual(f1_score(PixelCounts(tp=4, fp=0, tn=0, fn=0)), 1.0)

    def test_hand_example(self):
        self.assertAlmostEqual(f1_score(PixelCounts(tp=2, fp=1, tn=0, fn=1)), 2 / 3)

    def test_empty_prediction_is_undefined(self):
        self.assertIsNone(f1_score(PixelCounts(tp=0, fp=0, tn=0, fn=5)))

    def test_empty_truth_is_undefined(self):
        self.assertIsNone(f1_score(PixelCounts(tp=0, fp=3, tn=1, fn=0)))

    @given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
    def test_bounds(self, tp, fp, tn, fn):
        value = f1_score(PixelCounts(tp, fp, tn, fn))
        if value is not None:
            self.assertTrue(0.0 <= value <= 1.0)
            self.assertEqual(value == 1.0, fp == 0 and fn == 0 and tp > 0)


class AggregateTestCase(SimpleTestCase):
    def test_single_record(self):
        result = aggregate([record('a', 0.25)])
        self.assertEqual((result.mean_e, result.std_e, result.n), (0.25, 0.0, 1))

    def test_two_records(self):
        result = aggregate([record('a', 0.1), record('b', 0.3)])
        self.assertAlmostEqual(result.mean_e, 0.2)
        self.assertAlmostEqual(result.std_e, math.sqrt(0.02), places=10)

    def test_undefined_f1_counts_as_zero_and_is_flagged(self):
        result = aggregate([record('a', 0.1, f1=0.8), record('b', 0.2, f1=None)])
        self.assertAlmostEqual(result.mean_f1, 0.4)
        self.assertEqual(result.undefined_f1, ('b',))

    def test_empty(self):
        with self.assertRaises(ValidationError):
            aggregate([])

    def test_per_dataset_rows_then_pooled(self):
        rows = aggregate_by_dataset([
            record('a1', 0.1, dataset='A'), record('b1', 0.3, dataset='B'), record('a2', 0.2, dataset='A'),
        ])
        self.assertEqual([row.label for row in rows], ['A', 'B', 'pooled'])
        self.assertEqual([row.n for row in rows], [2, 1, 3])
        self.assertAlmostEqual(rows[0].mean_e, 0.15)
        self.assertAlmostEqual(rows[2].mean_e, 0.2)


class PairedTTestTestCase(SimpleTestCase):
    def test_equal_samples(self):
        result = paired_t_test([0.1, 0.2, 0.3], [0.1, 0.2, 0.3])
        self.assertEqual((result.t_statistic, result.p_value, result.significant), (0.0, 1.0, False))

    def test_worked_example(self):
        result = paired_t_test([1, 2, 3, 4, 5], [0, 0, 0, 0, 0])
        self.assertAlmostEqual(result.t_statistic, 3 / (math.sqrt(2.5) / math.sqrt(5)), places=10)
        self.assertAlmostEqual(result.t_statistic, 4.2426, places=4)
        self.assertEqual(result.degrees_of_freedom, 4)
        self.assertAlmostEqual(result.p_value, 0.0132, delta=1e-4)
        self.assertTrue(result.significant)

    def test_constant_nonzero_difference(self):
        result = paired_t_test([2.0, 3.0, 4.0], [1.0, 2.0, 3.0])
        self.assertEqual(result.t_statistic, math.inf)
        self.assertEqual(result.p_value, 0.0)
        self.assertTrue(result.significant)

    def test_constant_inexact_difference_is_infinite(self):
        result = paired_t_test([0.1, 0.1, 0.1], [0.0, 0.0, 0.0])
        self.assertEqual(result.t_statistic, math.inf)
        self.assertEqual(result.p_value, 0.0)
        self.assertAlmostEqual(result.mean_difference, 0.1)

        negative = paired_t_test([0.0, 0.0, 0.0, 0.0], [0.7, 0.7, 0.7, 0.7])
        self.assertEqual(negative.t_statistic, -math.inf)

    def test_single_pair(self):
        with self.assertRaises(ValidationError):
            paired_t_test([1.0], [2.0])

    def test_length_mismatch(self):
        with self.assertRaises(ValidationError):
            paired_t_test([1.0, 2.0], [1.0, 2.0, 3.0])

    def test_matches_reference_implementation(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            n = int(rng.integers(5, 51))
            a = rng.normal(0.3, 0.1, n)
            b = a + rng.normal(rng.uniform(-0.05, 0.05), 0.05, n)
            ours = paired_t_test(a, b)
            reference = scipy_stats.ttest_rel(a, b)
            self.assertLess(abs(ours.t_statistic - reference.statistic), 1e-9 * max(1.0, abs(reference.statistic)))
            self.assertLess(abs(ours.p_value - reference.pvalue), 1e-6)
            expected_p = 2 * scipy_stats.t.sf(abs(reference.statistic), n - 1)
            self.assertLess(abs(ours.p_value - expected_p), 1e-6)

    @given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=2, max_size=30))
    def test_swapping_sides_negates_t(self, pairs):
        a, b = zip(*pairs)
        forward, backward = paired_t_test(a, b), paired_t_test(b, a)
        self.assertEqual(forward.t_statistic, -backward.t_statistic)
        self.assertEqual(forward.p_value, backward.p_value)

    def test_shifting_both_samples_keeps_t(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=20), rng.normal(size=20)
        shifted = paired_t_test(a + 5.0, b + 5.0)
        self.assertAlmostEqual(shifted.t_statistic, paired_t_test(a, b).t_statistic, places=9)

    def test_significance_follows_alpha(self):
        result = paired_t_test([1, 2, 3, 4, 5], [0, 0, 0, 0, 0], alpha=0.01)
        self.assertFalse(result.significant)
        self.assertEqual(result.alpha, 0.01)


class ReportTestCase(SimpleTestCase):
    def test_csv_keeps_undefined_cells_empty(self):
        records = [
            evaluate_sample('a', mask([[1, 0], [0, 0]]), mask([[1, 1], [0, 0]]), dataset='A'),
            evaluate_sample('b', mask([[0, 0], [0, 0]]), mask([[1, 0], [0, 0]]), dataset='B'),
        ]
        with tempfile.TemporaryDirectory() as tmp:
            path = write_records_csv(records, Path(tmp) / 'records.csv')
            header, first, second = path.read_text().splitlines()
            self.assertEqual(header, 'sample_id,dataset,tp,fp,tn,fn,e,precision,recall,f1')
            self.assertTrue(second.endswith(',,0.0,'))
            loaded = read_records_csv(path)
        self.assertEqual([r.sample_id for r in loaded], ['a', 'b'])
        self.assertEqual(loaded[0].counts, records[0].counts)
        self.assertEqual(loaded[0].e, 0.25)
        self.assertIsNone(loaded[1].f1)
        self.assertIsNone(loaded[1].precision)
        self.assertEqual(loaded[1].recall, 0.0)

    def test_summary_in_percent(self):
        rows = aggregate_by_dataset([record('a', 0.0105, f1=0.882, dataset='NICE.I')])
        with tempfile.TemporaryDirectory() as tmp:
            path = write_summary(rows, Path(tmp) / 'summary.yaml', model='fcn', seed=1)
            summary = yaml.safe_load(path.read_text())
        self.assertEqual(summary['model'], 'fcn')
        self.assertEqual(summary['results']['NICE.I']['f1_percent'], {'mean': 88.2, 'std': 0.0})
        self.assertEqual(summary['results']['pooled']['e_percent']['mean'], 1.05)
