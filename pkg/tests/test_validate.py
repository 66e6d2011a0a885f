#!/usr/bin/env python3
"""
Tests for scripts/validate.py

Covers the package check, the writable-output check and config
validation, including the exit code of main().
"""

import json
import shutil
import sys
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

# Add scripts directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / 'scripts'))

import validate
from validate import find_configs, main, validate_config, validate_output_dir, validate_packages


class TestValidatePackages(unittest.TestCase):
    """Import check of the numerical stack"""

    def test_installed_packages(self):
        self.assertTrue(validate_packages(('json',)))

    @patch('validate.importlib.import_module', side_effect=ImportError('no module'))
    def test_missing_package(self, mock_import):
        with patch('builtins.print') as mock_print:
            self.assertFalse(validate_packages(('numpy',)))
        printed = ' '.join(str(c.args[0]) for c in mock_print.call_args_list if c.args)
        self.assertIn('numpy', printed)
        self.assertIn('pip install', printed)


class TestValidateOutputDir(unittest.TestCase):
    """Writable output directory check"""

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_creates_logs_dir(self):
        output_dir = self.temp_dir / 'run'
        self.assertTrue(validate_output_dir(output_dir))
        self.assertTrue((output_dir / 'logs').is_dir())
        self.assertFalse((output_dir / 'logs' / '.write_test').exists())

    def test_unwritable(self):
        blocker = self.temp_dir / 'file'
        blocker.write_text('not a directory')
        self.assertFalse(validate_output_dir(blocker))


class TestValidateConfig(unittest.TestCase):
    """Config loading through the validator"""

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def _write(self, document):
        path = self.temp_dir / 'run.json'
        path.write_text(json.dumps(document))
        return path

    def test_valid_config(self):
        path = self._write({'system': {'name': 'pps'}, 'model': {'family': 'loop'}})
        self.assertTrue(validate_config(path))

    def test_invalid_field(self):
        path = self._write({'model': {'N': -3}})
        with patch('builtins.print') as mock_print:
            self.assertFalse(validate_config(path))
        self.assertIn("model.N", str(mock_print.call_args_list[0]))

    def test_invalid_json(self):
        path = self.temp_dir / 'run.json'
        path.write_text('{ nope')
        self.assertFalse(validate_config(path))

    def test_warnings_do_not_fail(self):
        path = self._write({'model': {'grid_points': 16}})
        self.assertTrue(validate_config(path))

    def test_find_configs_skips_schema(self):
        (self.temp_dir / 'a.json').write_text('{}')
        (self.temp_dir / 'run.schema.json').write_text('{}')
        (self.temp_dir / 'notes.txt').write_text('')
        self.assertEqual([p.name for p in find_configs(self.temp_dir)], ['a.json'])

    def test_repository_configs_found(self):
        names = [p.name for p in find_configs()]
        self.assertIn('isochrone_sweep.json', names)
        self.assertNotIn('run.schema.json', names)


class TestMain(unittest.TestCase):
    """Exit code of the validator"""

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_shipped_configs_pass(self):
        with patch('builtins.print'):
            self.assertEqual(main(['--output', str(self.temp_dir)]), 0)

    def test_bad_config_fails(self):
        path = self.temp_dir / 'bad.json'
        path.write_text(json.dumps({'system': {'name': 'kepler'}}))
        with patch('builtins.print'):
            self.assertEqual(main([str(path), '--output', str(self.temp_dir)]), 1)

    def test_missing_package_skips_configs(self):
        with patch.object(validate, 'validate_packages', return_value=False), \
                patch.object(validate, 'validate_config') as mock_config, \
                patch('builtins.print'):
            self.assertEqual(main(['--output', str(self.temp_dir)]), 1)
        mock_config.assert_not_called()


if __name__ == '__main__':
    unittest.main()
