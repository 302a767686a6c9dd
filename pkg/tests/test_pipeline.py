#!/usr/bin/env python3
"""
Tests for the experiment pipeline: objectives, start sampling, parallel
runs, results directories, tables and replay
"""

import math
import unittest
import sys
import os
import tempfile
from pathlib import Path

import numpy as np

# Add src directory to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from flatscan.config import Cutoffs, ExperimentConfig
from flatscan.pipeline import (build_dataset, build_objective, ecdf, grid_points, load_results,
                               loss_index_table, replay_results, replay_trace, results_summary,
                               run_experiment, sample_loss_uniform, starting_points, train)
from flatscan.storage import json_safe, read_json, read_vector


def quartic_config(output_dir, **overrides):
    data = {
        'name': 'quartic-small',
        'model': {'kind': 'quartic'},
        'dataset': {'kind': 'grid', 'grid_size': 3, 'grid_range': [-4.0, 4.0]},
        'finder': {'method': 'newton_mr', 'starts': 'grid'},
        'solver': {'outer_iters': 50, 'log_every': 0},
        'num_runs': 9,
        'output_dir': str(output_dir),
    }
    data.update(overrides)
    return ExperimentConfig.from_dict(data)


def network_config(output_dir):
    return ExperimentConfig.from_dict({
        'name': 'tiny-autoencoder',
        'model': {'kind': 'network', 'hidden_widths': [2], 'activation': 'swish'},
        'dataset': {'kind': 'gaussian', 'm': 20, 'd': 3},
        'trainer': {'lr': 0.01, 'momentum': 0.9, 'epochs': 30},
        'solver': {'outer_iters': 10, 'log_every': 0},
        'num_runs': 3,
        'output_dir': str(output_dir),
    })


class TestStartingPoints(unittest.TestCase):
    """Grids and loss-uniform sampling"""

    def test_grid_order(self):
        points = grid_points(3, -1.0, 1.0)
        self.assertEqual(len(points), 9)
        np.testing.assert_array_equal(points[0], [-1.0, -1.0])
        np.testing.assert_array_equal(points[1], [-1.0, 0.0])
        np.testing.assert_array_equal(points[-1], [1.0, 1.0])

    def test_loss_uniform_is_seeded(self):
        snaps = [(np.array([float(i)]), float(i) ** 2) for i in range(50)]
        a = sample_loss_uniform(snaps, 10, seed=3)
        b = sample_loss_uniform(snaps, 10, seed=3)
        self.assertEqual([float(x[0]) for x in a], [float(x[0]) for x in b])
        self.assertEqual(len(a), 10)

    def test_loss_uniform_spreads_over_bins(self):
        # most snapshots sit at low loss; uniform bins still reach the tail
        snaps = [(np.array([0.0]), 0.0)] * 95 + [(np.array([1.0]), 100.0)] * 5
        picks = sample_loss_uniform(snaps, 200, seed=0, bins=2)
        high = sum(1 for p in picks if p[0] == 1.0)
        self.assertGreater(high, 50)
        self.assertLess(high, 150)

    def test_loss_uniform_degenerate(self):
        snaps = [(np.array([1.0]), 2.0), (np.array([3.0]), 2.0)]
        picks = sample_loss_uniform(snaps, 5, seed=1)
        self.assertTrue(all(p[0] in (1.0, 3.0) for p in picks))
        self.assertEqual(len(sample_loss_uniform(snaps[:1], 4, seed=1)), 4)
        with self.assertRaises(ValueError):
            sample_loss_uniform([], 3, seed=0)

    def test_loss_uniform_skips_non_finite_losses(self):
        # a diverged trajectory must not stretch the bins or be drawn
        snaps = [(np.array([float(i)]), float(i)) for i in range(10)]
        snaps += [(np.array([-1.0]), math.nan), (np.array([-2.0]), math.inf)]
        picks = sample_loss_uniform(snaps, 100, seed=4, bins=2)
        self.assertTrue(all(p[0] >= 0.0 for p in picks))
        self.assertGreater(sum(1 for p in picks if p[0] >= 5.0), 20)
        with self.assertRaises(ValueError):
            sample_loss_uniform([(np.array([0.0]), math.nan)], 3, seed=0)

    def test_grid_subsample(self):
        cfg = quartic_config('unused', num_runs=4)
        starts = starting_points(cfg, build_objective(cfg), [])
        self.assertEqual(len(starts), 4)
        grid = [tuple(p) for p in grid_points(3, -4.0, 4.0)]
        self.assertTrue(all(tuple(s) in grid for s in starts))


class TestObjectives(unittest.TestCase):

    def test_network_objective(self):
        cfg = network_config('unused')
        objective = build_objective(cfg)
        self.assertTrue(objective.is_network)
        self.assertEqual(objective.spec.layer_widths, (3, 2, 3))
        self.assertEqual(objective.field.dim, 12)

    def test_preprocessing_order(self):
        cfg = ExperimentConfig.from_dict({
            'model': {'loss_kind': 'cross_entropy'},
            'dataset': {'kind': 'mixture', 'm': 60, 'd': 6, 'classes': 3, 'zscore': True,
                        'pca_k': 2, 'subset': 30, 'shuffle_labels': True}})
        data = build_dataset(cfg.dataset, cfg.seeds.data)
        self.assertEqual((data.m, data.d, data.c), (30, 2, 3))
        np.testing.assert_allclose(data.inputs.std(axis=0), np.ones(2), atol=1e-10)
        self.assertIn('labels_shuffled', data.meta)

    def test_training_trajectories(self):
        cfg = network_config('unused')
        traces = train(cfg)
        self.assertEqual(len(traces), 1)
        self.assertEqual(len(traces[0].rows), 31)
        with self.assertRaises(ValueError):
            train(quartic_config('unused'))


class TestQuarticExperiment(unittest.TestCase):
    """A small grid experiment written to disk and read back"""

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.out = Path(cls.tmp.name) / 'quartic'
        cls.cfg = quartic_config(cls.out)
        cls.results = run_experiment(cls.cfg)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_every_run_classified(self):
        self.assertEqual(self.results.run_ids, list(range(9)))
        self.assertEqual(self.results.failures, {})
        for outcome in self.results.outcomes.values():
            self.assertIn(outcome.outcome_class, ('critical', 'gradient_flat', 'neither'))
            self.assertEqual(outcome.morse_tol, 1e-10)

    def test_minimum_found_from_the_left(self):
        # (-4, y) starts lie in the basin of the only minimum
        for run_id in (0, 1, 2):
            outcome = self.results.outcomes[run_id]
            self.assertEqual(outcome.outcome_class, 'critical')
            self.assertEqual(outcome.morse_index, 0.0)
            self.assertAlmostEqual(outcome.terminal_loss, 6.25, places=8)

    def test_layout(self):
        for name in ('manifest.json', 'tables/loss_index.csv', 'tables/loss_index_max_flat.csv',
                     'tables/ecdf_r.csv', 'tables/ecdf_max_r.csv', 'tables/summary.json',
                     'runs/0/trace.csv', 'runs/0/outcome.json', 'runs/0/final.csv'):
            self.assertTrue((self.out / name).exists(), name)
        manifest = read_json(self.out / 'manifest.json')
        self.assertEqual(manifest['runs'], list(range(9)))
        self.assertEqual(manifest['objective'], 'quartic')
        self.assertIn('numpy', manifest['versions'])
        self.assertEqual(ExperimentConfig.from_dict(manifest['config']), self.cfg)
        np.testing.assert_array_equal(read_vector(self.out / 'runs' / '0' / 'final.csv'),
                                      self.results.traces[0].theta)

    def test_deterministic(self):
        again = run_experiment(self.cfg, write=False)
        for run_id in self.results.run_ids:
            self.assertEqual(json_safe(again.outcomes[run_id].to_dict()),
                             json_safe(self.results.outcomes[run_id].to_dict()))

    def test_load_and_replay_are_idempotent(self):
        loaded = load_results(self.out)
        self.assertEqual(loaded.run_ids, self.results.run_ids)
        for run_id in loaded.run_ids:
            self.assertEqual(json_safe(loaded.outcomes[run_id].to_dict()),
                             json_safe(self.results.outcomes[run_id].to_dict()))
            replayed = replay_trace(self.out / 'runs' / str(run_id) / 'trace.csv', self.cfg.cutoffs)
            self.assertEqual(json_safe(replayed.to_dict()),
                             json_safe(self.results.outcomes[run_id].to_dict()))

    def test_replay_under_looser_cutoffs(self):
        loose = replay_results(load_results(self.out), Cutoffs(grad_sq=1e6))
        self.assertTrue(all(o.outcome_class == 'critical' for o in loose.outcomes.values()))

    def test_tables(self):
        rows = loss_index_table(self.results)
        self.assertEqual(len(rows), 9)
        critical = [r for r in rows if r['class'] == 'critical']
        self.assertTrue(all(r['color'] == 'black' for r in critical))
        filtered = loss_index_table(self.results, grad_filter=1e-4)
        self.assertTrue(all(r['sq_grad_norm'] <= 1e-4 for r in filtered))
        with self.assertRaises(ValueError):
            loss_index_table(self.results, point_choice='best')
        summary = results_summary(self.results)
        self.assertEqual(sum(summary['counts'].values()), 9)
        self.assertAlmostEqual(sum(summary['fractions'].values()), 1.0)


class TestNetworkExperiment(unittest.TestCase):

    def test_runs_and_training_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / 'net'
            results = run_experiment(network_config(out))
            self.assertEqual(len(results.outcomes), 3)
            self.assertTrue((out / 'training' / 'trajectory_0.csv').exists())
            self.assertTrue((out / 'training' / 'final_0.csv').exists())
            manifest = read_json(out / 'manifest.json')
            self.assertEqual(manifest['network']['layer_widths'], [3, 2, 3])
            self.assertEqual(manifest['training'][0]['epochs'], 30)


class TestECDF(unittest.TestCase):

    def test_steps(self):
        self.assertEqual(ecdf([0.5, 0.1, 0.5, 0.9]), [(0.1, 0.25), (0.5, 0.75), (0.9, 1.0)])
        with self.assertRaises(ValueError):
            ecdf([])

    def test_monotone(self):
        steps = ecdf(np.random.default_rng(0).uniform(size=40))
        values = [v for v, _ in steps]
        fractions = [f for _, f in steps]
        self.assertEqual(values, sorted(values))
        self.assertEqual(fractions[-1], 1.0)
        self.assertTrue(all(b > a for a, b in zip(fractions, fractions[1:])))


def run_tests():
    """Run all tests"""
    loader = unittest.TestLoader()
    suite = unittest.TestSuite()

    suite.addTests(loader.loadTestsFromTestCase(TestStartingPoints))
    suite.addTests(loader.loadTestsFromTestCase(TestObjectives))
    suite.addTests(loader.loadTestsFromTestCase(TestQuarticExperiment))
    suite.addTests(loader.loadTestsFromTestCase(TestNetworkExperiment))
    suite.addTests(loader.loadTestsFromTestCase(TestECDF))

    runner = unittest.TextTestRunner(verbosity=2)
    return runner.run(suite)


if __name__ == '__main__':
    result = run_tests()
    sys.exit(0 if result.wasSuccessful() else 1)
