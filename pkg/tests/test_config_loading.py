#!/usr/bin/env python3
"""
Tests for run config loading and validation.

Verifies that bad config files and overrides fail with a ValueError naming
the offending field, instead of surfacing as a crash deep inside a fit.
"""

import json
import os
import shutil
import sys
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

# Add src directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from torusfit.core.model import harmonic_torus, make_mask
from torusfit.utils.config import (
    DEFAULT_CONFIG,
    apply_overrides,
    deep_merge,
    load_config,
    parse_override,
)

REPO_CONFIG_DIR = Path(__file__).parent.parent / 'config'


class TestConfigFileErrors(unittest.TestCase):
    """Unreadable config files raise a clean ValueError."""

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())
        self.config_path = self.temp_dir / 'run.json'

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_invalid_json(self):
        self.config_path.write_text('{ invalid json content }')
        with self.assertRaises(ValueError) as ctx:
            load_config(self.config_path)
        self.assertIn('Invalid JSON', str(ctx.exception))

    def test_missing_file(self):
        with self.assertRaises(ValueError) as ctx:
            load_config(self.temp_dir / 'missing.json')
        self.assertIn('not found', str(ctx.exception))

    def test_not_an_object(self):
        self.config_path.write_text('[1, 2, 3]')
        with self.assertRaises(ValueError) as ctx:
            load_config(self.config_path)
        self.assertIn('JSON object', str(ctx.exception))


class TestFieldValidation(unittest.TestCase):
    """Invalid fields are reported by their dotted name."""

    def assertFieldError(self, field, overrides):
        with self.assertRaises(ValueError) as ctx:
            load_config(overrides=overrides)
        self.assertIn(f"Invalid config field '{field}'", str(ctx.exception))

    def test_unknown_key(self):
        self.assertFieldError('model.colour', ['model.colour=red'])

    def test_unknown_section(self):
        self.assertFieldError('plots', ['plots.dpi=300'])

    def test_schema_version(self):
        self.assertFieldError('schema_version', ['schema_version=2'])

    def test_unknown_system(self):
        self.assertFieldError('system.name', ['system.name=kepler'])

    def test_invalid_system_parameter(self):
        self.assertFieldError('system.params.c3', ['system.name=pps', 'system.params={"c3": 0}'])

    def test_family_dimension_mismatch(self):
        self.assertFieldError('model.family', ['system.name=isochrone'])

    def test_model_n(self):
        self.assertFieldError('model.N', ['model.N=0'])

    def test_reduction_needs_parity_family(self):
        self.assertFieldError('model.symmetry_reduction', ['model.family=general'])

    def test_reduction_needs_even_grid(self):
        self.assertFieldError('model.grid_points', ['model.grid_points=33'])

    def test_weights_length(self):
        self.assertFieldError('objective.weights', ['objective.weights=[1, 1, 1]'])

    def test_negative_weight(self):
        self.assertFieldError('objective.weights[1]', ['objective.weights=[1, -1, 1, 1, 0]'])

    def test_actions_label_needs_actions(self):
        self.assertFieldError('objective.actions', ['objective.label=actions'])

    def test_actions_label_needs_action_weight(self):
        self.assertFieldError('objective.weights', [
            'objective.label=actions', 'objective.actions=[0.5, 0.5]', 'objective.weights=[1, 1, 1, 1, 0]',
        ])

    def test_action_vector_length(self):
        self.assertFieldError('objective.actions', ['objective.label=actions', 'objective.actions=[0.5]'])

    def test_frequency_label_needs_frequencies(self):
        self.assertFieldError('objective.frequencies', ['objective.label=frequencies'])

    def test_solver_field(self):
        self.assertFieldError('solver.max_iterations', ['solver.max_iterations=-1'])

    def test_sweep_solver_unknown_key(self):
        self.assertFieldError('sweep.solver.bogus', ['sweep.solver={"bogus": 1}'])

    def test_probe_spacing(self):
        self.assertFieldError('probe.spacing[1]', ['probe.spacing=[0.05, 0]'])

    def test_probe_max_index(self):
        self.assertFieldError('probe.max_index[0]', ['probe.max_index=[-1, 3]'])

    def test_probe_workers(self):
        self.assertFieldError('probe.workers', ['probe.workers=0'])

    def test_sweep_omega(self):
        self.assertFieldError('sweep.omega[0]', ['sweep.omega=[-1.0]'])

    def test_section_crossings(self):
        self.assertFieldError('section.crossings', ['section.crossings=0'])


class TestOverrides(unittest.TestCase):
    """--set dotted.key=VALUE handling."""

    def test_json_value(self):
        self.assertEqual(parse_override('model.N=12'), (['model', 'N'], 12))
        self.assertEqual(parse_override('probe.spacing=[0.1, 0.2]'), (['probe', 'spacing'], [0.1, 0.2]))

    def test_bare_string(self):
        self.assertEqual(parse_override('system.name=pps'), (['system', 'name'], 'pps'))

    def test_missing_equals(self):
        with self.assertRaises(ValueError):
            parse_override('model.N')

    def test_empty_key(self):
        with self.assertRaises(ValueError):
            parse_override('model..N=3')

    def test_not_a_section(self):
        with self.assertRaises(ValueError) as ctx:
            apply_overrides(DEFAULT_CONFIG, ['model.N.x=1'])
        self.assertIn("'N' is not a section", str(ctx.exception))

    def test_creates_null_section(self):
        config = apply_overrides(DEFAULT_CONFIG, ['system.params.c1=0.8'])
        self.assertEqual(config['system']['params'], {'c1': 0.8})
        self.assertIsNone(DEFAULT_CONFIG['system']['params'])

    def test_deep_merge_keeps_base(self):
        merged = deep_merge(DEFAULT_CONFIG, {'model': {'N': 8}})
        self.assertEqual(merged['model']['N'], 8)
        self.assertEqual(merged['model']['family'], 'box')
        self.assertEqual(DEFAULT_CONFIG['model']['N'], 16)


class TestRunConfig(unittest.TestCase):
    """Builders of RunConfig."""

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_defaults(self):
        config = load_config()
        self.assertEqual(config.system().name, 'logarithmic')
        grid = config.theta_grid()
        self.assertEqual((grid.n, grid.points, grid.reduced), (2, 32, True))
        self.assertEqual(config.initial_model().mask.size, make_mask('box', 16).size)
        self.assertEqual(config.objective_spec().weights, (1.0, 1.0, 1.0, 1.0, 0.0))
        self.assertEqual(config.theta0()[1], 1.5707963267948966)
        self.assertEqual(config.warnings, [])

    def test_label_default_weights(self):
        config = load_config(overrides=['objective.label=frequencies', 'objective.frequencies=[1, 1.1]'])
        spec = config.objective_spec()
        self.assertEqual(spec.weights, (1.0, 1.0, 0.0, 0.0, 0.0))
        self.assertEqual(spec.frequencies, (1.0, 1.1))

    def test_sweep_solver_options(self):
        config = load_config(overrides=['solver.max_iterations=42'])
        self.assertEqual(config.solver_options().max_iterations, 42)
        sweep = config.sweep_solver_options()
        self.assertEqual(sweep.objective_tolerance, 1e-24)
        self.assertEqual(sweep.max_iterations, 300)

    def test_probe_builders(self):
        config = load_config(overrides=['probe.spacing=0.1', 'probe.max_index=[4, 6]'])
        grid = config.action_grid()
        self.assertEqual(grid.spacing, (0.1, 0.1))
        self.assertEqual(grid.max_index, (4, 6))
        self.assertIsNone(config.probe_options().consistency_weight)
        spec = config.probe_spec()
        self.assertEqual(spec.label, 'actions')
        self.assertEqual(spec.weights[4], 1.0)
        mask = make_mask('box', 16)
        self.assertAlmostEqual(config.resolved_consistency_weight(harmonic_torus([1, 1], [1, 1], N=16)),
                               0.01 / len(mask.common_indices))

    def test_explicit_probe_weight(self):
        config = load_config(overrides=['probe.consistency_weight=0.001'])
        self.assertEqual(config.probe_options().consistency_weight, 0.001)
        self.assertEqual(config.probe_spec().consistency_weight, 0.001)

    def test_general_family_needs_model_file(self):
        config = load_config(overrides=['model.family=general', 'model.symmetry_reduction=false'])
        with self.assertRaises(ValueError) as ctx:
            config.initial_model()
        self.assertIn('model.initial_model', str(ctx.exception))

    def test_initial_model_file(self):
        path = harmonic_torus([0.3, 0.7], [1.0, 1.3], N=4).save(self.temp_dir / 'model.json')
        config = load_config(overrides=[f'model.initial_model={path}'])
        model = config.initial_model()
        self.assertEqual(model.N, 4)
        self.assertEqual(model.family, 'box')

    def test_initial_model_dimension(self):
        path = harmonic_torus([0.3], [1.0], N=4).save(self.temp_dir / 'model.json')
        config = load_config(overrides=[f'model.initial_model={path}'])
        with self.assertRaises(ValueError):
            config.initial_model()

    def test_undersampling_warning(self):
        with self.assertLogs('torusfit.config', level='WARNING') as logs:
            config = load_config(overrides=['model.grid_points=16'])
        self.assertEqual(len(config.warnings), 1)
        self.assertIn('undersamples', logs.output[0])

    def test_output_dir_from_environment(self):
        with patch.dict(os.environ, {'TORUSFIT_OUTPUT_DIR': str(self.temp_dir)}):
            self.assertEqual(load_config().output_dir, self.temp_dir)
            explicit = load_config(overrides=['output_dir=elsewhere'])
            self.assertEqual(explicit.output_dir, Path('elsewhere'))

    def test_output_dir_default(self):
        with patch.dict(os.environ, {}, clear=True):
            self.assertEqual(load_config().output_dir, Path('output'))

    def test_write_resolved(self):
        config = load_config(overrides=['model.N=8'])
        path = config.write_resolved(self.temp_dir)
        with open(path) as f:
            document = json.load(f)
        self.assertEqual(document['model']['N'], 8)
        self.assertEqual(document['schema_version'], 1)
        self.assertEqual(load_config(path).to_dict(), config.to_dict())


class TestShippedConfigs(unittest.TestCase):
    """Every config in config/ loads cleanly."""

    def test_all_configs_load(self):
        paths = sorted(p for p in REPO_CONFIG_DIR.glob('*.json') if not p.name.endswith('.schema.json'))
        self.assertGreater(len(paths), 0)
        for path in paths:
            with self.subTest(config=path.name):
                config = load_config(path)
                self.assertEqual(config.warnings, [])
                config.system()
                config.theta_grid()
