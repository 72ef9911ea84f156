"""
Tests for the command line interface
"""

import unittest
import sys
import os
import tempfile

import pandas as pd
from click.testing import CliRunner

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from run import cli

QUICK = ['--epochs', '2', '--n-per-class', '40', '--eval-per-class', '30', '--hidden', '6',
         '--milestones', '', '--batch-size', '16', '--resolution', '8']


class TestCli(unittest.TestCase):
    """train / sweep / compare / export-data / profile"""

    def setUp(self):
        self.runner = CliRunner()
        self.tmp = tempfile.TemporaryDirectory()
        self.out = self.tmp.name

    def tearDown(self):
        self.tmp.cleanup()

    def test_train_writes_outputs(self):
        """train prints the summary and writes one metrics row per epoch"""
        result = self.runner.invoke(cli, ['train', *QUICK, '--out', self.out])
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertIn('top1=', result.output)
        metrics = pd.read_csv(os.path.join(self.out, 'metrics.csv'))
        self.assertEqual(metrics['epoch'].tolist(), [0, 1])

    def test_config_error_exit_code(self):
        """An out-of-range tau exits with the configuration code"""
        result = self.runner.invoke(cli, ['train', *QUICK, '--tau', '1.5', '--out', self.out])
        self.assertEqual(result.exit_code, 2)

    def test_data_error_exit_code(self):
        """A missing CIFAR-10 path exits with the data code"""
        result = self.runner.invoke(cli, ['train', '--dataset', 'cifar10', '--data-path',
                                          os.path.join(self.out, 'missing.bin'), '--out', self.out])
        self.assertEqual(result.exit_code, 3)

    def test_training_fault_exit_code(self):
        """A diverging run exits with the training-fault code"""
        result = self.runner.invoke(cli, ['train', *QUICK, '--method', 'erm', '--lr', '1e6',
                                          '--weight-decay', '1e6', '--epochs', '20', '--out', self.out])
        self.assertEqual(result.exit_code, 4)

    def test_sweep(self):
        """sweep writes one row per value, keyed by the swept parameter"""
        result = self.runner.invoke(cli, ['sweep', *QUICK, '--param', 'tau', '--values', '0,0.5',
                                          '--workers', '1', '--out', self.out])
        self.assertEqual(result.exit_code, 0, result.output)
        table = pd.read_csv(os.path.join(self.out, 'sweep.csv'))
        self.assertEqual(table['tau'].tolist(), [0.0, 0.5])

    def test_tau_sweep_requires_remix(self):
        """tau has no effect on plain mixup, so the sweep is a configuration error"""
        result = self.runner.invoke(cli, ['sweep', *QUICK, '--method', 'mixup', '--param', 'tau',
                                          '--values', '0,0.5', '--workers', '1', '--out', self.out])
        self.assertEqual(result.exit_code, 2)
        self.assertFalse(os.path.exists(os.path.join(self.out, 'sweep.csv')))

    def test_compare(self):
        """compare writes a summary row per method in the requested order"""
        result = self.runner.invoke(cli, ['compare', *QUICK, '--methods', 'erm,remix', '--seeds', '0',
                                          '--workers', '1', '--out', self.out])
        self.assertEqual(result.exit_code, 0, result.output)
        summary = pd.read_csv(os.path.join(self.out, 'compare_summary.csv'))
        self.assertEqual(summary['method'].tolist(), ['erm', 'remix'])

    def test_export_data(self):
        """export-data writes the imbalanced training set"""
        path = os.path.join(self.out, 'moons.csv')
        result = self.runner.invoke(cli, ['export-data', '--n-per-class', '50', '--rho', '10', '--path', path])
        self.assertEqual(result.exit_code, 0, result.output)
        frame = pd.read_csv(path)
        self.assertEqual(frame['label'].value_counts().sort_index().tolist(), [50, 5])

    def test_profile(self):
        """profile prints the per-class counts"""
        result = self.runner.invoke(cli, ['profile', '--imbalance', 'longtail', '--rho', '10',
                                          '--n-per-class', '1000'])
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertIn('class=1 count=100', result.output)


if __name__ == '__main__':
    unittest.main()
