"""
Result file writers.

Every JSON document carries ``schema_version`` and is written with sorted
keys, so reruns of a deterministic command produce byte-identical files.
CSV floats use 17 significant digits.
"""

import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Union

import numpy as np

SCHEMA_VERSION = 1

logger = logging.getLogger('torusfit.io')


def format_value(value: Any) -> str:
    """Render one CSV cell."""
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), '.17g')
    if value is None:
        return ''
    return str(value)


def to_jsonable(value: Any) -> Any:
    """Convert numpy containers and scalars to plain JSON types (non-finite floats become null)."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def write_json(path: Union[str, Path], document: Dict[str, Any]) -> Path:
    """Write a JSON document with ``schema_version`` embedded."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {'schema_version': SCHEMA_VERSION, **to_jsonable(document)}
    with open(path, 'w') as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write('\n')
    logger.debug(f"Wrote {path}")
    return path


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    with open(path, 'r') as f:
        return json.load(f)


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Write a CSV file; the first line is a ``# schema_version=N`` comment."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as f:
        f.write(f"# schema_version={SCHEMA_VERSION}\n")
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    logger.debug(f"Wrote {path}")
    return path


def read_csv(path: Union[str, Path]) -> List[Dict[str, str]]:
    """Read a CSV written by write_csv into a list of string dicts."""
    with open(path, 'r', newline='') as f:
        lines = [line for line in f if not line.startswith('#')]
    return list(csv.DictReader(lines))
