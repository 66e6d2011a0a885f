#!/usr/bin/env python3
"""
torusfit Metrics - Run Telemetry for Torus Fits

Records one JSON line per fit (or per sweep cell / probe run):
- Wall-clock duration
- System, family and label of the fit
- Termination reason, iterations, final objective and sigma(H)
- Success/failure with the exception type on failure

Metrics are stored in <output>/logs/metrics.jsonl, next to the run logs and
away from the result files (which stay byte-identical across reruns).
Entries older than METRICS_RETENTION_DAYS are dropped by rotate_metrics(),
which the CLI calls once at startup.

Usage:
    from torusfit.utils.metrics import FitMetricsCollector

    with FitMetricsCollector(command='fit', output_dir='output', system='logarithmic') as metrics:
        report = fit(...)
        metrics.record_report(report)
"""

import json
import logging
import os
import threading
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

METRICS_FILENAME = 'metrics.jsonl'
METRICS_RETENTION_DAYS = 30

logger = logging.getLogger('torusfit.metrics')

# Thread lock for file operations (probe fits finish on worker threads)
_file_lock = threading.Lock()


def _utc_now() -> datetime:
    """Naive UTC now; timestamps are written as ISO strings with a Z suffix."""
    return datetime.now(timezone.utc).replace(tzinfo=None)


def _get_metrics_path(output_dir: Optional[Union[str, Path]] = None) -> Path:
    """Path of the metrics file under <output>/logs."""
    root = Path(output_dir) if output_dir is not None else Path(os.environ.get('TORUSFIT_OUTPUT_DIR', 'output'))
    logs_dir = root / 'logs'
    logs_dir.mkdir(parents=True, exist_ok=True)
    return logs_dir / METRICS_FILENAME


def _read_entries(metrics_path: Path) -> List[Dict]:
    entries = []
    with open(metrics_path, 'r') as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            try:
                entries.append(json.loads(line))
            except json.JSONDecodeError:
                continue
    return entries


def _rotate_metrics_file(output_dir: Optional[Union[str, Path]] = None) -> int:
    """
    Drop entries older than METRICS_RETENTION_DAYS.

    Returns:
        Number of entries removed
    """
    metrics_path = _get_metrics_path(output_dir)
    if not metrics_path.exists():
        return 0

    cutoff_iso = (_utc_now() - timedelta(days=METRICS_RETENTION_DAYS)).isoformat() + 'Z'
    removed_count = 0
    kept = []

    try:
        with _file_lock:
            with open(metrics_path, 'r') as f:
                for line in f:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        entry = json.loads(line)
                    except json.JSONDecodeError:
                        kept.append(line)
                        continue
                    if entry.get('timestamp', '') >= cutoff_iso:
                        kept.append(line)
                    else:
                        removed_count += 1

            if removed_count > 0:
                temp_path = metrics_path.with_suffix('.tmp')
                with open(temp_path, 'w') as f:
                    for line in kept:
                        f.write(line + '\n')
                temp_path.replace(metrics_path)
                logger.info(f"Rotated metrics file: removed {removed_count} old entries")
    except IOError as e:
        logger.warning(f"Failed to rotate metrics file: {e}")

    return removed_count


def _append_metric(metric: Dict, output_dir: Optional[Union[str, Path]] = None) -> bool:
    """
    Append one entry to the metrics file.

    Returns:
        True if successful, False otherwise
    """
    metrics_path = _get_metrics_path(output_dir)
    try:
        with _file_lock:
            with open(metrics_path, 'a') as f:
                f.write(json.dumps(metric, sort_keys=True) + '\n')
        return True
    except IOError as e:
        logger.warning(f"Failed to append metric: {e}")
        return False


def _finite_or_none(value: Any) -> Optional[float]:
    try:
        value = float(value)
    except (TypeError, ValueError):
        return None
    return value if value == value and abs(value) != float('inf') else None


class FitMetricsCollector:
    """
    Times one fit-like unit of work and appends its metric line.

    Usage:
        metrics = FitMetricsCollector(command='probe', output_dir=out, system='pps', family='loop')
        metrics.start()
        # ... run ...
        metrics.complete(success=True, report=report)
    """

    def __init__(
        self,
        command: str,
        output_dir: Optional[Union[str, Path]] = None,
        system: Optional[str] = None,
        family: Optional[str] = None,
        label: Optional[str] = None,
    ):
        self.command = command
        self.output_dir = output_dir
        self.system = system
        self.family = family
        self.label = label

        self._start_time: Optional[datetime] = None
        self._end_time: Optional[datetime] = None
        self._report: Any = None
        self._completed = False

    def start(self) -> 'FitMetricsCollector':
        self._start_time = _utc_now()
        return self

    def record_report(self, report: Any) -> None:
        """Remember the FitReport whose numbers go into the metric line on exit."""
        self._report = report

    def complete(
        self,
        success: bool,
        report: Any = None,
        error_type: Optional[str] = None,
        error_message: Optional[str] = None,
        custom_data: Optional[Dict[str, Any]] = None,
    ) -> Dict:
        """
        Finish timing and write the metric line.

        Args:
            success: Whether the unit of work succeeded
            report: FitReport (or anything with iterations/reason/objective/sigma)
            error_type: Exception class name on failure
            error_message: Failure message
            custom_data: Extra fields stored under 'custom'

        Returns:
            The metric entry
        """
        if self._completed:
            logger.warning("FitMetricsCollector.complete() called multiple times")
            return {}
        self._completed = True
        self._end_time = _utc_now()

        if self._start_time:
            duration_seconds = (self._end_time - self._start_time).total_seconds()
        else:
            duration_seconds = 0
            logger.warning("FitMetricsCollector.complete() called without start()")

        report = report if report is not None else self._report
        metric = {
            'timestamp': self._end_time.isoformat() + 'Z',
            'command': self.command,
            'system': self.system,
            'family': self.family,
            'label': self.label,
            'duration_seconds': round(duration_seconds, 3),
            'success': success,
            'iterations': getattr(report, 'iterations', None),
            'reason': getattr(report, 'reason', None),
            'objective': _finite_or_none(getattr(report, 'objective', None)),
            'sigma': _finite_or_none(getattr(report, 'sigma', None)),
        }
        if error_type:
            metric['error_type'] = error_type
        if error_message:
            metric['error_message'] = error_message[:500]
        if custom_data:
            metric['custom'] = custom_data

        _append_metric(metric, self.output_dir)
        return metric

    def __enter__(self) -> 'FitMetricsCollector':
        return self.start()

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        """Record a failure when the block raised, success otherwise."""
        if not self._completed:
            if exc_type is not None:
                self.complete(
                    success=False,
                    error_type=exc_type.__name__,
                    error_message=str(exc_val) if exc_val else None,
                )
            else:
                self.complete(success=True)


def get_metrics(
    output_dir: Optional[Union[str, Path]] = None,
    days: int = 7,
    command: Optional[str] = None,
    system: Optional[str] = None,
) -> List[Dict]:
    """
    Load metric entries, optionally filtered.

    Args:
        output_dir: Run output root (default: $TORUSFIT_OUTPUT_DIR or ./output)
        days: Number of days to include
        command: Filter by CLI command
        system: Filter by system name

    Returns:
        Metric entries, newest first
    """
    metrics_path = _get_metrics_path(output_dir)
    if not metrics_path.exists():
        return []

    cutoff_iso = (_utc_now() - timedelta(days=days)).isoformat() + 'Z'
    try:
        entries = _read_entries(metrics_path)
    except IOError as e:
        logger.warning(f"Failed to load metrics: {e}")
        return []

    results = [
        e for e in entries
        if e.get('timestamp', '') >= cutoff_iso
        and (command is None or e.get('command') == command)
        and (system is None or e.get('system') == system)
    ]
    results.sort(key=lambda x: x.get('timestamp', ''), reverse=True)
    return results


def get_metrics_summary(output_dir: Optional[Union[str, Path]] = None, days: int = 7) -> Dict[str, Any]:
    """
    Aggregate metrics by command and by termination reason.

    Returns:
        Summary dictionary with totals and averages
    """
    metrics = get_metrics(output_dir, days=days)
    if not metrics:
        return {
            'period_days': days,
            'total_runs': 0,
            'successful_runs': 0,
            'failed_runs': 0,
            'success_rate': 0,
            'avg_duration_seconds': 0,
            'total_iterations': 0,
            'by_command': {},
            'by_reason': {},
            'error_breakdown': {},
        }

    total_runs = len(metrics)
    successful_runs = sum(1 for m in metrics if m.get('success'))
    total_duration = sum(m.get('duration_seconds', 0) for m in metrics)
    total_iterations = sum(m.get('iterations') or 0 for m in metrics)

    by_command: Dict[str, Dict] = {}
    for m in metrics:
        entry = by_command.setdefault(m.get('command') or 'unknown', {
            'runs': 0,
            'successes': 0,
            'duration_seconds': 0,
            'iterations': 0,
        })
        entry['runs'] += 1
        if m.get('success'):
            entry['successes'] += 1
        entry['duration_seconds'] += m.get('duration_seconds', 0)
        entry['iterations'] += m.get('iterations') or 0

    by_reason: Dict[str, int] = {}
    for m in metrics:
        reason = m.get('reason')
        if reason:
            by_reason[reason] = by_reason.get(reason, 0) + 1

    error_breakdown: Dict[str, int] = {}
    for m in metrics:
        if not m.get('success') and m.get('error_type'):
            error_breakdown[m['error_type']] = error_breakdown.get(m['error_type'], 0) + 1

    return {
        'period_days': days,
        'total_runs': total_runs,
        'successful_runs': successful_runs,
        'failed_runs': total_runs - successful_runs,
        'success_rate': round(successful_runs / total_runs * 100, 1),
        'avg_duration_seconds': round(total_duration / total_runs, 3),
        'total_iterations': total_iterations,
        'by_command': by_command,
        'by_reason': by_reason,
        'error_breakdown': error_breakdown,
    }


def rotate_metrics(output_dir: Optional[Union[str, Path]] = None) -> int:
    """Drop entries older than the retention period; returns the number removed."""
    return _rotate_metrics_file(output_dir)

