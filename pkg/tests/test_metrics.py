#!/usr/bin/env python3
"""
Tests for torusfit.utils.metrics module.

Tests the FitMetricsCollector class and related functions for:
- Metric collection and storage under <output>/logs
- Fit report fields (reason, iterations, objective, sigma)
- Metrics aggregation and summary
- File rotation
"""

import json
import os
import time
from datetime import datetime, timedelta, timezone
from pathlib import Path
from types import SimpleNamespace
from unittest.mock import patch
import sys

import pytest

# Add src directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from torusfit.utils.metrics import (
    METRICS_RETENTION_DAYS,
    FitMetricsCollector,
    _append_metric,
    _get_metrics_path,
    get_metrics,
    get_metrics_summary,
    rotate_metrics,
)


@pytest.fixture
def temp_output_dir(tmp_path):
    """Point TORUSFIT_OUTPUT_DIR at a temporary directory."""
    with patch.dict(os.environ, {'TORUSFIT_OUTPUT_DIR': str(tmp_path)}):
        yield tmp_path


@pytest.fixture
def sample_report():
    """Stand-in for a FitReport."""
    return SimpleNamespace(iterations=42, reason='plateau', objective=3.5e-7, sigma=1.2e-5)


class TestMetricsPath:
    def test_under_logs(self, temp_output_dir):
        path = _get_metrics_path()
        assert path == temp_output_dir / 'logs' / 'metrics.jsonl'
        assert path.parent.is_dir()

    def test_explicit_output_dir(self, tmp_path):
        path = _get_metrics_path(tmp_path / 'run')
        assert path == tmp_path / 'run' / 'logs' / 'metrics.jsonl'


class TestFitMetricsCollector:
    """Tests for FitMetricsCollector class."""

    def test_basic_collection(self, temp_output_dir):
        """Test basic metrics collection flow."""
        collector = FitMetricsCollector(command='fit', system='logarithmic', family='box', label='unlabelled')
        collector.start()
        time.sleep(0.1)  # Simulate some work

        metric = collector.complete(success=True)

        assert metric['command'] == 'fit'
        assert metric['system'] == 'logarithmic'
        assert metric['family'] == 'box'
        assert metric['label'] == 'unlabelled'
        assert metric['success'] is True
        assert metric['duration_seconds'] >= 0.1
        assert metric['reason'] is None
        assert 'timestamp' in metric

    def test_collection_with_report(self, temp_output_dir, sample_report):
        """Report numbers end up in the metric line."""
        collector = FitMetricsCollector(command='fit').start()
        metric = collector.complete(success=True, report=sample_report)

        assert metric['iterations'] == 42
        assert metric['reason'] == 'plateau'
        assert metric['objective'] == 3.5e-7
        assert metric['sigma'] == 1.2e-5

    def test_recorded_report_used_on_exit(self, temp_output_dir, sample_report):
        with FitMetricsCollector(command='fit') as metrics:
            metrics.record_report(sample_report)

        entries = get_metrics(days=1)
        assert entries[0]['reason'] == 'plateau'

    def test_non_finite_objective_stored_as_null(self, temp_output_dir):
        report = SimpleNamespace(iterations=0, reason='degenerate', objective=float('inf'), sigma=float('nan'))
        metric = FitMetricsCollector(command='fit').start().complete(success=True, report=report)

        assert metric['objective'] is None
        assert metric['sigma'] is None
        line = _get_metrics_path().read_text().strip()
        assert json.loads(line)['objective'] is None

    def test_collection_with_error(self, temp_output_dir):
        """Test metrics collection on failure."""
        collector = FitMetricsCollector(command='probe')
        collector.start()

        metric = collector.complete(
            success=False,
            error_type='NonFiniteResidualError',
            error_message='Residuals are not finite at the starting point'
        )

        assert metric['success'] is False
        assert metric['error_type'] == 'NonFiniteResidualError'
        assert 'not finite' in metric['error_message']

    def test_collection_with_custom_data(self, temp_output_dir):
        """Test metrics collection with custom data."""
        collector = FitMetricsCollector(command='sweep-isochrone')
        collector.start()

        metric = collector.complete(success=True, custom_data={'N': 64, 'omega': 1.0})

        assert metric['custom'] == {'N': 64, 'omega': 1.0}

    def test_context_manager_exception(self, temp_output_dir):
        """Test context manager with exception."""
        with pytest.raises(ValueError):
            with FitMetricsCollector(command='fit'):
                raise ValueError("Dimension mismatch")

        metrics = get_metrics(days=1)
        assert len(metrics) == 1
        assert metrics[0]['success'] is False
        assert metrics[0]['error_type'] == 'ValueError'

    def test_double_complete_warning(self, temp_output_dir):
        """Test that double complete logs warning but doesn't crash."""
        collector = FitMetricsCollector(command='fit')
        collector.start()
        collector.complete(success=True)
        result = collector.complete(success=True)  # Second call
        assert result == {}
        assert len(get_metrics(days=1)) == 1

    def test_complete_without_start(self, temp_output_dir):
        """Test complete without start (duration should be 0)."""
        metric = FitMetricsCollector(command='fit').complete(success=True)
        assert metric['duration_seconds'] == 0

    def test_explicit_output_dir(self, tmp_path):
        with FitMetricsCollector(command='fit', output_dir=tmp_path / 'run'):
            pass
        assert (tmp_path / 'run' / 'logs' / 'metrics.jsonl').exists()


class TestMetricsRetrieval:
    """Tests for get_metrics and get_metrics_summary functions."""

    def test_get_metrics_empty(self, temp_output_dir):
        assert get_metrics(days=7) == []

    def test_get_metrics_filtered(self, temp_output_dir):
        with FitMetricsCollector(command='fit', system='pps'):
            pass
        with FitMetricsCollector(command='probe', system='logarithmic'):
            pass

        assert len(get_metrics(days=1)) == 2
        by_command = get_metrics(days=1, command='probe')
        assert [m['system'] for m in by_command] == ['logarithmic']
        by_system = get_metrics(days=1, system='pps')
        assert [m['command'] for m in by_system] == ['fit']

    def test_get_metrics_sorted_by_timestamp(self, temp_output_dir):
        """Test that metrics are sorted newest first."""
        with FitMetricsCollector(command='fit', system='first'):
            pass
        time.sleep(0.01)
        with FitMetricsCollector(command='fit', system='second'):
            pass

        metrics = get_metrics(days=1)
        assert [m['system'] for m in metrics] == ['second', 'first']

    def test_corrupt_lines_skipped(self, temp_output_dir):
        with FitMetricsCollector(command='fit'):
            pass
        with open(_get_metrics_path(), 'a') as f:
            f.write('{ not json\n\n')
        assert len(get_metrics(days=1)) == 1

    def test_get_metrics_summary_empty(self, temp_output_dir):
        summary = get_metrics_summary(days=7)
        assert summary['total_runs'] == 0
        assert summary['success_rate'] == 0

    def test_get_metrics_summary_with_data(self, temp_output_dir):
        """Test summary calculation."""
        for i in range(5):
            report = SimpleNamespace(iterations=10, reason='objective' if i < 3 else 'max-iter',
                                     objective=1e-9, sigma=1e-6)
            collector = FitMetricsCollector(command='fit', system='logarithmic')
            collector.start()
            collector.complete(success=(i < 4), report=report,
                               error_type=None if i < 4 else 'IntegrationError')

        summary = get_metrics_summary(days=1)

        assert summary['total_runs'] == 5
        assert summary['successful_runs'] == 4
        assert summary['failed_runs'] == 1
        assert summary['success_rate'] == 80.0
        assert summary['total_iterations'] == 50
        assert summary['by_command']['fit']['runs'] == 5
        assert summary['by_reason'] == {'objective': 3, 'max-iter': 2}
        assert summary['error_breakdown'] == {'IntegrationError': 1}


class TestMetricsRotation:
    """Tests for metrics file rotation."""

    def test_rotate_empty_file(self, temp_output_dir):
        assert rotate_metrics() == 0

    def test_rotate_removes_old_entries(self, temp_output_dir):
        """Test that rotation removes old entries."""
        old_timestamp = (datetime.now(timezone.utc).replace(tzinfo=None) - timedelta(days=METRICS_RETENTION_DAYS + 1)).isoformat() + 'Z'
        assert _append_metric({'timestamp': old_timestamp, 'command': 'old', 'success': True})

        with FitMetricsCollector(command='recent'):
            pass

        assert rotate_metrics() == 1

        metrics = get_metrics(days=METRICS_RETENTION_DAYS + 5)
        assert [m['command'] for m in metrics] == ['recent']

    def test_rotate_keeps_recent_entries(self, temp_output_dir):
        with FitMetricsCollector(command='fit'):
            pass
        assert rotate_metrics() == 0
        assert len(get_metrics(days=1)) == 1
