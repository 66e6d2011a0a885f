#!/usr/bin/env python3
"""
Tests for the torusfit command line.

Every run is small (oscillator tori with N=2, a one-cell isochrone sweep)
and writes into a temporary output directory without figures.
"""

import json
import sys
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
import pytest

# Add src directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from torusfit.cli.torusfit import build_parser, main
from torusfit.core.model import harmonic_torus
from torusfit.core.solver import FitReport
from torusfit.utils.io import read_csv
from torusfit.utils.metrics import METRICS_RETENTION_DAYS

HARMONIC = [
    'system.name=harmonic',
    'system.params={"frequencies": [1.0, 1.3]}',
    'model.N=2',
    'model.grid_points=8',
]


def _args(*overrides):
    args = []
    for override in overrides:
        args += ['--set', override]
    return args


@pytest.fixture
def seed_model(tmp_path):
    return harmonic_torus([0.2, 0.2], [1.0, 1.3], N=2).save(tmp_path / 'seed_model.json')


@pytest.fixture
def fitted(tmp_path):
    """A converged unlabelled fit in tmp_path/fit."""
    start = harmonic_torus([0.3, 0.7], [1.0, 1.3], N=2).save(tmp_path / 'start.json')
    output = tmp_path / 'fit'
    code = main(['fit', '--output', str(output), '--no-plots',
                 *_args(*HARMONIC, f'model.initial_model={start}')])
    assert code == 0
    return output


class TestParser:
    """Argument parsing"""

    def test_subcommands(self):
        parser = build_parser()
        for command in ['sweep-isochrone', 'fit', 'probe', 'section', 'validate']:
            args = parser.parse_args([command])
            assert args.command == command
            assert args.set == []
            assert not args.no_plots

    def test_command_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_repeatable_set(self):
        args = build_parser().parse_args(['fit', '--set', 'model.N=4', '--set', 'model.grid_points=8', '--section'])
        assert args.set == ['model.N=4', 'model.grid_points=8']
        assert args.section


class TestValidateCommand:
    def test_defaults_valid(self, tmp_path):
        assert main(['validate', '--output', str(tmp_path)]) == 0
        assert not (tmp_path / 'config.resolved.json').exists()

    def test_shipped_config(self, tmp_path):
        config = Path(__file__).parent.parent / 'config' / 'log_box_probe.json'
        assert main(['validate', '--config', str(config), '--output', str(tmp_path)]) == 0

    def test_invalid_override(self, tmp_path, capsys):
        assert main(['validate', '--output', str(tmp_path), '--set', 'model.N=0']) == 1
        assert "model.N" in capsys.readouterr().err

    def test_missing_config(self, tmp_path, capsys):
        assert main(['validate', '--config', str(tmp_path / 'missing.json')]) == 1
        assert 'not found' in capsys.readouterr().err


class TestFitCommand:
    """torusfit fit"""

    def test_writes_outputs(self, fitted):
        assert (fitted / 'model.json').exists()
        assert (fitted / 'config.resolved.json').exists()
        assert (fitted / 'logs' / 'metrics.jsonl').exists()
        assert list((fitted / 'logs').glob('torusfit_*.log'))

        report = FitReport.load(fitted / 'report.json')
        assert report.converged
        assert report.sigma < 1e-10
        np.testing.assert_allclose(report.omega, [1.0, 1.3], atol=1e-8)

    def test_resolved_config(self, fitted):
        with open(fitted / 'config.resolved.json') as f:
            document = json.load(f)
        assert document['system']['name'] == 'harmonic'
        assert document['model']['N'] == 2

    def test_metrics_line(self, fitted):
        lines = (fitted / 'logs' / 'metrics.jsonl').read_text().splitlines()
        entry = json.loads(lines[-1])
        assert entry['command'] == 'fit'
        assert entry['system'] == 'harmonic'
        assert entry['success'] is True

    def test_fit_with_section(self, tmp_path):
        start = harmonic_torus([0.3, 0.7], [1.0, 1.3], N=2).save(tmp_path / 'start.json')
        output = tmp_path / 'out'
        code = main(['fit', '--output', str(output), '--no-plots', '--section',
                     *_args(*HARMONIC, f'model.initial_model={start}', 'section.crossings=10')])
        assert code == 0
        with open(output / 'section.json') as f:
            section = json.load(f)
        assert section['within_bound'] is True
        assert section['integrated_crossings'] == 10
        assert section['hausdorff'] < 1e-6
        rows = read_csv(output / 'sections.csv')
        assert {row['source'] for row in rows} == {'integrated', 'constructed'}
        assert (output / 'trajectory.csv').exists()
        assert not (output / 'sections.svg').exists()

    def test_dimension_mismatch_fails(self, tmp_path):
        start = harmonic_torus([0.3], [1.0], N=2).save(tmp_path / 'start.json')
        code = main(['fit', '--output', str(tmp_path / 'out'), '--no-plots',
                     *_args(*HARMONIC, f'model.initial_model={start}')])
        assert code == 1

    def test_old_metrics_rotated_at_startup(self, tmp_path):
        output = tmp_path / 'out'
        stale = (datetime.now(timezone.utc).replace(tzinfo=None)
                 - timedelta(days=METRICS_RETENTION_DAYS + 1)).isoformat() + 'Z'
        (output / 'logs').mkdir(parents=True)
        (output / 'logs' / 'metrics.jsonl').write_text(json.dumps({'timestamp': stale, 'command': 'old'}) + '\n')
        start = harmonic_torus([0.3, 0.7], [1.0, 1.3], N=2).save(tmp_path / 'start.json')
        assert main(['fit', '--output', str(output), '--no-plots',
                     *_args(*HARMONIC, f'model.initial_model={start}')]) == 0
        lines = (output / 'logs' / 'metrics.jsonl').read_text().splitlines()
        assert [json.loads(line)['command'] for line in lines] == ['fit']


class TestSweepCommand:
    """torusfit sweep-isochrone"""

    def test_single_cell(self, tmp_path):
        code = main(['sweep-isochrone', '--output', str(tmp_path), '--no-plots',
                     *_args('system.name=isochrone', 'model.family=1d-odd', 'sweep.N=[8]',
                            'sweep.omega=[1.0]', 'sweep.grid_points=64', 'sweep.solver={"max_iterations": 20}')])
        assert code == 0
        rows = read_csv(tmp_path / 'sweep.csv')
        assert len(rows) == 1
        assert rows[0]['N'] == '8'
        assert float(rows[0]['omega']) == 1.0
        assert float(rows[0]['energy_expected']) == pytest.approx(-0.5 * 2.0 ** (2.0 / 3.0))
        assert rows[0]['converged'] in ('true', 'false')
        assert not (tmp_path / 'sigma.svg').exists()

    def test_needs_isochrone(self, tmp_path):
        assert main(['sweep-isochrone', '--output', str(tmp_path), '--no-plots']) == 1


class TestProbeCommand:
    """torusfit probe"""

    def test_probe_from_seed_model(self, tmp_path, seed_model):
        output = tmp_path / 'probe'
        code = main(['probe', '--output', str(output), '--no-plots',
                     '--seed-model', str(seed_model), '--seed-actions', '0.2,0.2',
                     *_args(*HARMONIC, 'probe.spacing=0.1', 'probe.max_index=2')])
        assert code == 0
        with open(output / 'probe.json') as f:
            document = json.load(f)
        assert document['seed_index'] == [2, 2]
        assert document['generations'][0] == [[2, 2]]
        assert document['summary']['accepted'] > 0
        assert (output / 'reports' / 'm2_2.json').exists()
        rows = read_csv(output / 'summary.csv')
        assert any(row['accepted'] == 'true' for row in rows)

    def test_probe_from_seed_report(self, tmp_path, fitted):
        output = tmp_path / 'probe'
        code = main(['probe', '--output', str(output), '--no-plots',
                     '--seed-report', str(fitted / 'report.json'),
                     *_args(*HARMONIC, 'probe.spacing=0.1', 'probe.max_index=[4, 8]')])
        assert code == 0
        with open(output / 'probe.json') as f:
            document = json.load(f)
        assert document['seed_index'] == [3, 7]

    def test_exclude_summary_overlap(self, tmp_path, seed_model):
        first = tmp_path / 'first'
        second = tmp_path / 'second'
        common = ['--no-plots', '--seed-model', str(seed_model), '--seed-actions', '0.2,0.2',
                  *_args(*HARMONIC, 'probe.spacing=0.1', 'probe.max_index=2')]
        assert main(['probe', '--output', str(first), *common]) == 0
        assert main(['probe', '--output', str(second), *common,
                     '--exclude-summary', str(first / 'summary.csv')]) == 0
        with open(second / 'probe.json') as f:
            document = json.load(f)
        assert [2, 2] in document['overlap']

    def test_missing_seed(self, tmp_path):
        assert main(['probe', '--output', str(tmp_path), '--no-plots', *_args(*HARMONIC)]) == 1

    def test_bad_seed_actions(self, tmp_path, seed_model):
        code = main(['probe', '--output', str(tmp_path), '--no-plots',
                     '--seed-model', str(seed_model), '--seed-actions', '0.2,abc', *_args(*HARMONIC)])
        assert code == 1


class TestSectionCommand:
    """torusfit section"""

    def test_from_report(self, tmp_path, fitted):
        output = tmp_path / 'section'
        code = main(['section', '--output', str(output), '--no-plots',
                     '--report', str(fitted / 'report.json'),
                     *_args(*HARMONIC, 'section.crossings=5')])
        assert code == 0
        with open(output / 'section.json') as f:
            document = json.load(f)
        assert document['integrated_crossings'] == 5
        assert document['within_bound'] is True

    def test_from_model_solves_frequencies(self, tmp_path, fitted):
        output = tmp_path / 'section'
        code = main(['section', '--output', str(output), '--no-plots',
                     '--model', str(fitted / 'model.json'),
                     *_args(*HARMONIC, 'section.crossings=5')])
        assert code == 0
        with open(output / 'section.json') as f:
            document = json.load(f)
        np.testing.assert_allclose(document['omega'], [1.0, 1.3], atol=1e-8)

    def test_needs_model(self, tmp_path):
        assert main(['section', '--output', str(tmp_path), '--no-plots', *_args(*HARMONIC)]) == 1

    def test_needs_2d(self, tmp_path):
        model = harmonic_torus([0.5], [1.0], N=2).save(tmp_path / 'model.json')
        code = main(['section', '--output', str(tmp_path / 'out'), '--no-plots', '--model', str(model),
                     *_args('system.name=isochrone', 'model.family=1d-odd')])
        assert code == 1
