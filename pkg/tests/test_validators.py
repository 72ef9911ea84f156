"""
Tests for option validation, parsers and error types
"""

import unittest
import sys
import os

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from utils.trainer import default_options
from utils.validators import (
    DataFormatError, PlanValidator, TrainingFault, ValidationError, handle_cli_errors, parse_milestones,
    parse_values, parse_widths,
)


class TestPlanValidator(unittest.TestCase):
    """cerberus-backed option checks"""

    def setUp(self):
        self.validator = PlanValidator()

    def test_defaults_are_valid(self):
        """Config defaults pass the plan schema"""
        document = self.validator.validate(default_options())
        self.assertEqual(document['method'], 'remix')

    def test_field_errors_reported(self):
        """Every failing field is reported"""
        with self.assertRaises(ValidationError) as ctx:
            self.validator.validate(default_options(kappa=0.5, dataset='mnist'))
        fields = [d['field'] for d in ctx.exception.details]
        self.assertEqual(fields, ['dataset', 'kappa'])
        self.assertEqual(ctx.exception.exit_code, 2)

    def test_unknown_option_rejected(self):
        """Unknown options are rejected"""
        with self.assertRaises(ValidationError):
            self.validator.validate(default_options(learning_rate=0.1))

    def test_non_finite_rejected(self):
        """NaN and infinite values are rejected"""
        with self.assertRaises(ValidationError):
            self.validator.validate(default_options(rho=float('inf')))

    def test_step_mu_bounds(self):
        """mu must lie strictly between 0 and 1"""
        with self.assertRaises(ValidationError):
            self.validator.validate(default_options(imbalance='step', mu=1.0))


class TestParsers(unittest.TestCase):
    """String option parsers"""

    def test_milestones(self):
        """Milestone strings parse to epoch and multiplier pairs"""
        self.assertEqual(parse_milestones('100:0.1,150:0.01'), [(100, 0.1), (150, 0.01)])
        self.assertEqual(parse_milestones(''), [])
        with self.assertRaises(ValidationError):
            parse_milestones('100-0.1')

    def test_widths(self):
        """Hidden width strings parse to positive integers"""
        self.assertEqual(parse_widths('64, 32'), (64, 32))
        with self.assertRaises(ValidationError):
            parse_widths('64,0')

    def test_values(self):
        """Value lists parse to floats"""
        self.assertEqual(parse_values('0.1,0.2'), [0.1, 0.2])
        with self.assertRaises(ValidationError):
            parse_values('0.1,abc')


class TestErrors(unittest.TestCase):
    """Error context and exit codes"""

    def test_format_error_offset_in_message(self):
        """Format errors mention their byte offset"""
        error = DataFormatError("Bad record", 3073, 'x.bin')
        self.assertEqual(error.offset, 3073)
        self.assertIn('byte offset 3073', error.message)
        self.assertEqual(error.exit_code, 3)

    def test_training_fault_context(self):
        """Training faults carry epoch and batch"""
        fault = TrainingFault("Non-finite loss", epoch=3, batch=7)
        self.assertEqual(fault.message, "Non-finite loss (epoch 3, batch 7)")
        self.assertEqual(fault.to_dict()['batch'], 7)

    def test_error_timestamps_are_utc(self):
        """Error payloads carry timezone-aware UTC timestamps"""
        for error in (ValidationError("bad"), DataFormatError("bad", 0), TrainingFault("nan")):
            self.assertTrue(error.to_dict()['timestamp'].endswith('+00:00'))

    def test_cli_error_exit_codes(self):
        """Each error family maps to its exit code"""
        @handle_cli_errors
        def fails(error):
            raise error

        for error, code in ((ValidationError("bad"), 2), (DataFormatError("bad", 0), 3),
                            (TrainingFault("nan"), 4)):
            with self.assertRaises(SystemExit) as ctx:
                fails(error)
            self.assertEqual(ctx.exception.code, code)


if __name__ == '__main__':
    unittest.main()
