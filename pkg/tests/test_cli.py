#!/usr/bin/env python3
"""
Tests for the command line: subcommands, JSON output and exit codes
"""

import contextlib
import io
import json
import unittest
import sys
import os
import tempfile
from pathlib import Path
from unittest import mock

# Add src directory to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from flatscan.cli import parse_and_dispatch, replay
from flatscan.config import Cutoffs
from flatscan.errors import DimensionError

CONFIG_DIR = Path(__file__).resolve().parent.parent / 'configs'
QUARTIC = str(CONFIG_DIR / 'quartic.json')
SMALL = ['--set', 'dataset.grid_size=2', '--set', 'num_runs=4', '--set', 'solver.outer_iters=30']


def invoke(*argv):
    """Run the CLI and capture (exit code, stdout, stderr)"""
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = parse_and_dispatch(['-q'] + list(argv))
    return code, out.getvalue(), err.getvalue()


def last_json_line(text):
    lines = [line for line in text.splitlines() if line.startswith('{')]
    return json.loads(lines[-1])


class TestErrors(unittest.TestCase):
    """Exit code 1 for bad input, 2 for runtime failures"""

    def test_no_command(self):
        code, _, _ = invoke()
        self.assertEqual(code, 1)

    def test_unknown_command(self):
        code, _, err = invoke('explode')
        self.assertEqual(code, 1)
        self.assertEqual(last_json_line(err)['error'], 'ConfigError')

    def test_missing_config_file(self):
        code, _, err = invoke('find', '--config', '/nonexistent/cfg.json')
        self.assertEqual(code, 1)
        self.assertEqual(last_json_line(err)['path'], '/nonexistent/cfg.json')

    def test_unknown_override_key(self):
        code, _, err = invoke('find', '--config', QUARTIC, '--set', 'solver.speed=9')
        self.assertEqual(code, 1)
        self.assertEqual(last_json_line(err)['key'], 'solver.speed')

    def test_missing_trace(self):
        code, _, err = invoke('replay', '--trace', '/nonexistent/trace.csv')
        self.assertEqual(code, 1)
        self.assertEqual(last_json_line(err)['error'], 'TraceError')

    def test_bad_dataset_size(self):
        code, _, err = invoke('gen-data', '--config', str(CONFIG_DIR / 'mlp_classifier.json'),
                              '--set', 'dataset.m=5', '--out', os.devnull)
        self.assertEqual(code, 1)
        self.assertEqual(last_json_line(err)['error'], 'DataError')

    def test_dimension_mismatch(self):
        with mock.patch('flatscan.cli.build_dataset', side_effect=DimensionError("3 columns, expected 4")):
            code, _, err = invoke('gen-data', '--config', QUARTIC, '--out', os.devnull)
        self.assertEqual(code, 1)
        self.assertEqual(last_json_line(err)['error'], 'DimensionError')

    def test_runtime_failure(self):
        # the quartic has no training stage
        code, _, err = invoke('train', '--config', QUARTIC)
        self.assertEqual(code, 2)
        self.assertEqual(last_json_line(err)['error'], 'ValueError')


class TestCommands(unittest.TestCase):
    """End-to-end subcommands on the quartic"""

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.dir = Path(cls.tmp.name)
        cls.out = cls.dir / 'results'
        cls.find = invoke('find', '--config', QUARTIC, *SMALL, '--out', str(cls.out))

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_find(self):
        code, out, _ = self.find
        self.assertEqual(code, 0)
        summary = json.loads(out)
        self.assertEqual(summary['runs'], 4)
        self.assertEqual(summary['output_dir'], str(self.out))
        self.assertTrue((self.out / 'manifest.json').exists())

    def test_table(self):
        code, out, _ = invoke('table', '--results', str(self.out))
        self.assertEqual(code, 0)
        self.assertEqual(json.loads(out)['runs'], 4)

    def test_replay_trace(self):
        trace = str(self.out / 'runs' / '0' / 'trace.csv')
        code, out, _ = invoke('replay', '--trace', trace)
        self.assertEqual(code, 0)
        stored = json.loads((self.out / 'runs' / '0' / 'outcome.json').read_text(encoding='utf-8'))
        self.assertEqual(json.loads(out), stored)
        code, out, _ = invoke('replay', '--trace', trace, '--set', 'cutoffs.grad_sq=1e6')
        self.assertEqual(json.loads(out)['outcome_class'], 'critical')
        self.assertEqual(replay(trace, Cutoffs(grad_sq=1e6)).outcome_class, 'critical')

    def test_replay_results(self):
        code, out, _ = invoke('replay', '--results', str(self.out))
        self.assertEqual(code, 0)
        payload = json.loads(out)
        self.assertEqual(sorted(payload['runs']), ['0', '1', '2', '3'])

    def test_diagnose(self):
        theta = self.dir / 'flat.csv'
        theta.write_text('1.4142135623730951\n0\n', encoding='utf-8')
        code, out, _ = invoke('diagnose', '--config', QUARTIC, '--theta', str(theta))
        self.assertEqual(code, 0)
        report = json.loads(out)
        self.assertEqual(report['class'], 'gradient_flat')
        self.assertEqual(report['r'], 1.0)

    def test_diagnose_wrong_size(self):
        theta = self.dir / 'wide.csv'
        theta.write_text('1,2,3\n', encoding='utf-8')
        code, _, err = invoke('diagnose', '--config', QUARTIC, '--theta', str(theta))
        self.assertEqual(code, 1)
        self.assertEqual(last_json_line(err)['error'], 'DataError')

    def test_gen_data(self):
        path = self.dir / 'data' / 'gauss.csv'
        code, out, _ = invoke('gen-data', '--config', str(CONFIG_DIR / 'linear_ae.json'),
                              '--set', 'dataset.m=10', '--out', str(path))
        self.assertEqual(code, 0)
        self.assertEqual(json.loads(out)['m'], 10)
        self.assertEqual(len(path.read_text(encoding='utf-8').splitlines()), 11)


def run_tests():
    """Run all tests"""
    loader = unittest.TestLoader()
    suite = unittest.TestSuite()

    suite.addTests(loader.loadTestsFromTestCase(TestErrors))
    suite.addTests(loader.loadTestsFromTestCase(TestCommands))

    runner = unittest.TextTestRunner(verbosity=2)
    return runner.run(suite)


if __name__ == '__main__':
    result = run_tests()
    sys.exit(0 if result.wasSuccessful() else 1)
