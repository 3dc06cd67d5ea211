"""
Tests for the training loss, evaluation metrics and report exporters.
"""

import math
import tempfile
from pathlib import Path

import numpy as np
import openpyxl
from django.test import SimpleTestCase

from apps.core.exceptions import ShapeError
from apps.core.gradcheck import check_gradients
from apps.core.rng import Rng
from apps.core.tensor import Tensor
from apps.metrics.exporters import ExcelExporter, ExportService, KeyValueExporter, TableExporter
from apps.metrics.losses import soft_dice_loss
from apps.metrics.reports import CaseMetrics, EvalReport
from apps.metrics.services import dice_score, evaluate_case, hd95, nearest_rank


def set_dice(a, b):
    """Dice from explicit voxel coordinate sets."""
    first = {tuple(p) for p in np.argwhere(a)}
    second = {tuple(p) for p in np.argwhere(b)}
    if not first and not second:
        return 1.0
    return 2.0 * len(first & second) / (len(first) + len(second))


def direct_soft_dice_loss(probabilities, target, eps=1e-5):
    terms = []
    for j in range(target.shape[-1]):
        p, g = probabilities[..., j].ravel(), target[..., j].ravel()
        terms.append((2.0 * float(np.dot(p, g)) + eps) / (float(np.dot(p, p)) + float(np.dot(g, g)) + eps))
    return 1.0 - sum(terms) / len(terms)


def brute_force_hd95(a, b):
    """Symmetric nearest-rank 95th percentile Hausdorff distance by exhaustive search."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)

    def directed(source, target):
        distances = sorted(min(math.sqrt(float(((p - q) ** 2).sum())) for q in target) for p in source)
        return distances[-(-95 * len(distances) // 100) - 1]

    return max(directed(a, b), directed(b, a))


class SoftDiceLossTestCase(SimpleTestCase):
    """Soft Dice loss values and gradients."""

    def test_perfect_prediction(self):
        target = np.zeros((4, 4, 4, 3))
        target[1:3, 1:3, 1:3, :] = 1.0
        report = soft_dice_loss(Tensor(target), target)
        self.assertLess(report.total, 1e-4)

    def test_disjoint_prediction(self):
        target = np.zeros((4, 4, 4, 3))
        target[0, 0, 0, :] = 1.0
        prediction = np.zeros((4, 4, 4, 3))
        prediction[3, 3, 3, :] = 1.0
        self.assertAlmostEqual(soft_dice_loss(Tensor(prediction), target).total, 1.0, places=4)

    def test_uniform_half_prediction(self):
        target = np.zeros((2, 2, 2, 1))
        target[0, 0, 0, 0] = 1.0
        report = soft_dice_loss(Tensor(np.full((2, 2, 2, 1), 0.5)), target)
        direct = 1.0 - (2 * 0.5 + 1e-5) / (1.0 + 8 * 0.25 + 1e-5)
        self.assertAlmostEqual(report.total, direct, places=12)
        self.assertAlmostEqual(report.total, 2.0 / 3.0, places=5)
        self.assertAlmostEqual(report.per_class[0], 1.0 / 3.0, places=5)

    def test_loss_gradient(self):
        rng = Rng(0)
        probabilities = Tensor(rng.uniform(0.05, 0.95, (3, 3, 3, 3)), requires_grad=True)
        target = (rng.random((3, 3, 3, 3)) > 0.5).astype(float)
        results = check_gradients(lambda: soft_dice_loss(probabilities, target).loss, {'p': probabilities})
        self.assertTrue(results['p'].passed())

    def test_matches_direct_evaluation(self):
        rng = Rng(2)
        for _ in range(5):
            probabilities = rng.random((4, 4, 4, 3))
            target = (rng.random((4, 4, 4, 3)) > 0.6).astype(float)
            total = soft_dice_loss(Tensor(probabilities), target).total
            self.assertLess(abs(total - direct_soft_dice_loss(probabilities, target)), 1e-10)

    def test_loss_lies_in_unit_interval(self):
        rng = Rng(3)
        for trial in range(20):
            probabilities = rng.random((3, 3, 3, 3))
            target = (rng.random((3, 3, 3, 3)) > 0.5).astype(float)
            total = soft_dice_loss(Tensor(probabilities), target).total
            self.assertGreaterEqual(total, 0.0, trial)
            self.assertLessEqual(total, 1.0, trial)

    def test_correcting_a_voxel_never_increases_loss(self):
        rng = Rng(4)
        probabilities = rng.uniform(0.05, 0.95, (3, 3, 3, 3))
        target = (rng.random((3, 3, 3, 3)) > 0.5).astype(float)
        before = soft_dice_loss(Tensor(probabilities), target).total
        for index in np.ndindex(*probabilities.shape):
            corrected = probabilities.copy()
            corrected[index] = target[index]
            after = soft_dice_loss(Tensor(corrected), target).total
            self.assertLessEqual(after, before + 1e-12, index)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            soft_dice_loss(Tensor(np.zeros((2, 2, 2, 3))), np.zeros((2, 2, 2, 2)))


class DiceScoreTestCase(SimpleTestCase):
    """Hard Dice on binary masks."""

    def test_identical_masks(self):
        mask = np.zeros((3, 3, 3), dtype=bool)
        mask[1, 1, :] = True
        self.assertEqual(dice_score(mask, mask), 1.0)

    def test_half_overlap(self):
        a = np.zeros(6, dtype=bool)
        b = np.zeros(6, dtype=bool)
        a[[0, 1]] = True
        b[[1, 2]] = True
        self.assertEqual(dice_score(a, b), 0.5)

    def test_matches_set_arithmetic(self):
        rng = Rng(5)
        for density in (0.05, 0.3, 0.7):
            a = rng.random((8, 8, 8)) < density
            b = rng.random((8, 8, 8)) < density
            self.assertEqual(dice_score(a, b), set_dice(a, b))

    def test_voxel_order_does_not_matter(self):
        rng = Rng(6)
        a = rng.random((8, 8, 8)) < 0.4
        b = rng.random((8, 8, 8)) < 0.4
        order = np.argsort(rng.random(a.size))
        self.assertEqual(dice_score(a.ravel()[order], b.ravel()[order]), dice_score(a, b))

    def test_both_empty(self):
        empty = np.zeros((2, 2, 2), dtype=bool)
        self.assertEqual(dice_score(empty, empty), 1.0)


class HD95TestCase(SimpleTestCase):
    """95th-percentile Hausdorff distance."""

    def test_equal_sets(self):
        points = [(0, 0, 0), (1, 2, 3), (4, 4, 4)]
        self.assertEqual(hd95(points, points), 0.0)

    def test_single_pair(self):
        self.assertEqual(hd95([(0, 0, 0)], [(3, 0, 0)]), 3.0)

    def test_nearest_rank(self):
        values = np.arange(1.0, 21.0)
        self.assertEqual(nearest_rank(values), 19.0)
        self.assertEqual(nearest_rank(np.array([5.0])), 5.0)

    def test_matches_brute_force(self):
        rng = Rng(1)
        for _ in range(20):
            a = rng.integers(0, 10, (int(rng.integers(1, 51)), 3))
            b = rng.integers(0, 10, (int(rng.integers(1, 51)), 3))
            self.assertEqual(hd95(a, b), brute_force_hd95(a, b))

    def test_symmetric(self):
        rng = Rng(7)
        for _ in range(10):
            a = rng.integers(0, 12, (int(rng.integers(1, 40)), 3))
            b = rng.integers(0, 12, (int(rng.integers(1, 40)), 3))
            self.assertEqual(hd95(a, b), hd95(b, a))

    def test_union_is_never_farther(self):
        rng = Rng(8)
        for _ in range(10):
            a = rng.random((8, 8, 8)) < 0.05
            b = rng.random((8, 8, 8)) < 0.05
            a[0, 0, 0] = b[7, 7, 7] = True
            self.assertLessEqual(hd95(a, a | b), hd95(a, b))

    def test_masks(self):
        a = np.zeros((5, 5, 5), dtype=bool)
        b = np.zeros((5, 5, 5), dtype=bool)
        a[0, 0, 0] = True
        b[0, 0, 4] = True
        self.assertEqual(hd95(a, b), 4.0)

    def test_empty_sets(self):
        empty = np.zeros((4, 4, 4), dtype=bool)
        full = np.ones((4, 4, 4), dtype=bool)
        self.assertEqual(hd95(empty, empty), 0.0)
        self.assertAlmostEqual(hd95(empty, full), math.sqrt(48))
        self.assertAlmostEqual(hd95([], [(1, 1, 1)], extents=(2, 3, 6)), 7.0)
        with self.assertRaises(ShapeError):
            hd95([], [(1, 1, 1)])


class EvaluateCaseTestCase(SimpleTestCase):
    """Per-case scoring."""

    def test_label_as_prediction_scores_perfectly(self):
        label = np.zeros((6, 6, 6, 3), dtype=np.uint8)
        label[1:5, 1:5, 1:5, 1] = 1
        label[2:4, 2:4, 2:4, 2] = 1
        label[2:3, 2:3, 2:3, 0] = 1
        metrics = evaluate_case(label.astype(float), label, 'case_0000')
        self.assertEqual(metrics.dice, (1.0, 1.0, 1.0))
        self.assertEqual(metrics.hd95, (0.0, 0.0, 0.0))
        self.assertFalse(any(metrics.hd95_sentinel))

    def test_sentinel_is_flagged(self):
        label = np.zeros((4, 4, 4, 3), dtype=np.uint8)
        label[1, 1, 1, :] = 1
        probabilities = np.zeros((4, 4, 4, 3))
        with self.assertLogs('apps.metrics.services', level='WARNING'):
            metrics = evaluate_case(probabilities, label, 'case_0001')
        self.assertEqual(metrics.dice, (0.0, 0.0, 0.0))
        self.assertEqual(metrics.hd95_sentinel, (True, True, True))
        self.assertAlmostEqual(metrics.hd95[0], math.sqrt(48))


class ReportTestCase(SimpleTestCase):
    """Report assembly and export."""

    def setUp(self):
        self.report = EvalReport()
        self.report.add(CaseMetrics('case_0001', (0.5, 0.75, 1.0), (2.0, 0.0, 4.0), (False, False, True)))
        self.report.add(CaseMetrics('case_0000', (1.0, 0.25, 0.0), (0.0, 2.0, 6.0)))

    def test_cases_sorted_and_means(self):
        self.assertEqual(self.report.case_ids, ['case_0000', 'case_0001'])
        means = self.report.means()
        for key in ('dice_ET', 'dice_WT', 'dice_TC', 'hd95_ET', 'hd95_WT', 'hd95_TC'):
            values = [row[key] for row in self.report.rows()]
            self.assertAlmostEqual(means[key], sum(values) / len(values))
        self.assertEqual(self.report.flagged, ['case_0001'])

    def test_key_value_export(self):
        text = KeyValueExporter().export(self.report).getvalue().decode('utf-8')
        lines = text.splitlines()
        self.assertEqual(lines[0], 'cases=2')
        self.assertIn('case.case_0000.dice_ET=1.000000', lines)
        self.assertIn('case.case_0001.sentinel_TC=1', lines)
        self.assertIn('mean.dice_WT=0.500000', lines)
        self.assertEqual(lines[-1], 'flagged=case_0001')

    def test_table_export(self):
        lines = TableExporter().export(self.report).getvalue().decode('utf-8').splitlines()
        self.assertEqual(lines[0].split('\t')[:3], ['case_id', 'dice_ET', 'dice_WT'])
        self.assertEqual(len(lines), 3)
        self.assertTrue(lines[1].startswith('case_0000\t'))

    def test_excel_export(self):
        with tempfile.TemporaryDirectory() as directory:
            path = ExportService(ExcelExporter()).write(self.report, Path(directory))
            self.assertEqual(path.name, 'eval.xlsx')
            workbook = openpyxl.load_workbook(path)
            self.assertEqual(workbook.sheetnames, ['Cases', 'Means'])
            cases = workbook['Cases']
            self.assertEqual(cases.cell(row=2, column=1).value, 'case_0000')
            self.assertEqual(workbook['Means'].max_row, 7)

    def test_empty_report(self):
        empty = EvalReport()
        self.assertEqual(empty.means(), {})
        self.assertEqual(TableExporter().export(empty).getvalue(), b'')
