"""
Run configuration

A run is described by one JSON document deep-merged over DEFAULT_CONFIG,
then patched with ``--set dotted.key=VALUE`` overrides. load_config
validates the result before anything is computed and raises ValueError
naming the offending field ("Invalid config field 'objective.weights': ...").

Usage:
    config = load_config('config/log_box_unlabelled.json', overrides=['model.N=12'])
    system = config.system()
    report = fit(system, config.theta_grid(), config.objective_spec(), config.initial_model(),
                 config.solver_options())
    config.write_resolved(config.output_dir)
"""

import copy
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from torusfit.core.dynamics import HamiltonianSystem, from_config
from torusfit.core.model import FAMILIES, ThetaGrid, TorusModel, initial_guess, make_mask
from torusfit.core.objective import DEFAULT_MAX_CONDITION, LABELS, ObjectiveSpec, probing_consistency_weight
from torusfit.core.probe import ActionGrid, ProbeOptions
from torusfit.core.solver import SolverOptions
from torusfit.utils.io import SCHEMA_VERSION, write_json

logger = logging.getLogger('torusfit.config')

PARITY_FAMILIES = ('box', 'loop', '1d-odd')

DEFAULT_WEIGHTS = {
    'unlabelled': [1.0, 1.0, 1.0, 1.0, 0.0],
    'actions': [1.0, 1.0, 1.0, 1.0, 1.0],
    'frequencies': [1.0, 1.0, 0.0, 0.0, 0.0],
}

DEFAULT_CONFIG: Dict[str, Any] = {
    'schema_version': SCHEMA_VERSION,
    'output_dir': None,
    'system': {
        'name': 'logarithmic',
        'params': None,
    },
    'model': {
        'family': 'box',
        'N': 16,
        'grid_points': 32,
        'symmetry_reduction': True,
        'initial_scale': 1.0,
        'initial_model': None,
    },
    'objective': {
        'label': 'unlabelled',
        'weights': None,
        'actions': None,
        'frequencies': None,
        'consistency_weight': 0.0,
        'energy_label': None,
        'max_condition': DEFAULT_MAX_CONDITION,
    },
    'solver': SolverOptions().to_dict(),
    'probe': {
        'spacing': 0.05,
        'max_index': 26,
        'threshold': 1e-6,
        'consistency_weight': 'auto',
        'workers': 1,
        'seed_report': None,
        'seed_model': None,
        'seed_actions': None,
        'exclude_summary': None,
    },
    'sweep': {
        'N': [16, 64, 128],
        'omega': [0.2, 0.4, 1.0, 2.0],
        'grid_points': 1024,
        'initial_scale': 1.0,
        'workers': 1,
        'solver': {
            'objective_tolerance': 1e-24,
            'max_iterations': 300,
        },
    },
    'section': {
        'theta0': None,
        'crossings': 200,
        'tolerance': 1e-13,
        'hausdorff_bound': 1e-2,
        'max_periods': 2000.0,
        'max_time': 1e5,
        'plot': True,
        'model': None,
        'report': None,
    },
}


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Merge ``override`` into a copy of ``base``; nested dicts merge, everything else replaces."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def parse_override(text: str) -> Tuple[List[str], Any]:
    """
    Split ``dotted.key=VALUE``; VALUE is parsed as JSON, falling back to a bare string.

    Raises:
        ValueError: No '=' or an empty key
    """
    if '=' not in text:
        raise ValueError(f"Invalid override '{text}': expected dotted.key=VALUE")
    key, raw = text.split('=', 1)
    path = [part for part in key.strip().split('.')]
    if not all(path):
        raise ValueError(f"Invalid override '{text}': empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_overrides(config: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    config = copy.deepcopy(config)
    for text in overrides or ():
        path, value = parse_override(text)
        node = config
        for part in path[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            if not isinstance(child, dict):
                raise ValueError(f"Invalid override '{text}': '{part}' is not a section")
            node = child
        node[path[-1]] = value
        logger.debug(f"Override {'.'.join(path)} = {value!r}")
    return config


def _field_error(name: str, message: str) -> ValueError:
    return ValueError(f"Invalid config field '{name}': {message}")


def _check_keys(config: Dict[str, Any], defaults: Dict[str, Any], prefix: str = '') -> None:
    for key, value in config.items():
        name = f"{prefix}{key}"
        if key not in defaults:
            raise _field_error(name, "unknown key")
        default = defaults[key]
        if name == 'sweep.solver':
            if not isinstance(value, dict):
                raise _field_error(name, "expected an object")
            unknown = sorted(set(value) - set(SolverOptions.__dataclass_fields__))
            if unknown:
                raise _field_error(f"{name}.{unknown[0]}", "unknown key")
        elif isinstance(default, dict) and key != 'params':
            if not isinstance(value, dict):
                raise _field_error(name, "expected an object")
            _check_keys(value, default, prefix=f"{name}.")


def _vector(config: Dict[str, Any], name: str, n: int, allow_none: bool = True) -> Optional[List[float]]:
    section, key = name.split('.')
    value = config[section][key]
    if value is None:
        if allow_none:
            return None
        raise _field_error(name, f"expected {n} numbers")
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise _field_error(name, f"expected {n} numbers, got {value!r}")
    try:
        values = [float(v) for v in value]
    except (TypeError, ValueError):
        raise _field_error(name, f"expected {n} numbers, got {value!r}")
    if not all(np.isfinite(values)):
        raise _field_error(name, f"values must be finite, got {value!r}")
    return values


def _positive(value: Any, name: str, strict: bool = True) -> float:
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise _field_error(name, f"expected a number, got {value!r}")
    if not np.isfinite(number) or (number <= 0 if strict else number < 0):
        raise _field_error(name, f"must be {'>' if strict else '>='} 0, got {value!r}")
    return number


def _finite(value: Any, name: str) -> float:
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise _field_error(name, f"expected a number, got {value!r}")
    if not np.isfinite(number):
        raise _field_error(name, f"must be finite, got {value!r}")
    return number


def _per_dimension(value: Any, name: str, n: int) -> List[Any]:
    """A scalar broadcast to n entries, or an n-list."""
    if isinstance(value, (list, tuple)):
        if len(value) != n:
            raise _field_error(name, f"expected a scalar or {n} values, got {value!r}")
        return list(value)
    return [value] * n


def validate_config(config: Dict[str, Any]) -> List[str]:
    """
    Check a merged config document.

    Returns:
        Warnings that do not block the run

    Raises:
        ValueError: The first invalid field, by name
    """
    warnings = []
    _check_keys(config, DEFAULT_CONFIG)
    if config.get('schema_version') != SCHEMA_VERSION:
        raise _field_error('schema_version', f"expected {SCHEMA_VERSION}, got {config.get('schema_version')!r}")

    params = config['system']['params']
    if params is not None and not isinstance(params, dict):
        raise _field_error('system.params', f"expected an object, got {params!r}")
    try:
        system = from_config(config['system']['name'], params)
    except (TypeError, ValueError) as e:
        raise ValueError(str(e).replace("Invalid system parameter '", "Invalid config field 'system.params."))
    n = system.n

    model = config['model']
    if model['family'] not in FAMILIES:
        raise _field_error('model.family', f"'{model['family']}' (expected one of {', '.join(FAMILIES)})")
    if not isinstance(model['N'], int) or isinstance(model['N'], bool) or model['N'] < 1:
        raise _field_error('model.N', f"must be an integer >= 1, got {model['N']!r}")
    try:
        make_mask(model['family'], model['N'], n)
    except ValueError as e:
        raise _field_error('model.family', f"{e} (system {system.name} has n={n})")
    points = model['grid_points']
    if not isinstance(points, int) or isinstance(points, bool) or points < 1:
        raise _field_error('model.grid_points', f"must be an integer >= 1, got {points!r}")
    if model['symmetry_reduction']:
        if model['family'] not in PARITY_FAMILIES:
            raise _field_error('model.symmetry_reduction',
                               f"only parity families ({', '.join(PARITY_FAMILIES)}) can use the reduced grid")
        if points % 2:
            raise _field_error('model.grid_points', f"must be even with symmetry reduction, got {points}")
    if points < 2 * model['N']:
        warnings.append(f"model.grid_points={points} is below 2N={2 * model['N']}; the grid undersamples the model")
    _positive(model['initial_scale'], 'model.initial_scale')

    objective = config['objective']
    label = objective['label']
    if label not in LABELS:
        raise _field_error('objective.label', f"'{label}' (expected one of {', '.join(LABELS)})")
    weights = objective['weights']
    if weights is not None:
        if not isinstance(weights, list) or len(weights) != 5:
            raise _field_error('objective.weights', f"expected 5 values, got {weights!r}")
        for i, w in enumerate(weights):
            _positive(w, f'objective.weights[{i}]', strict=False)
    effective = weights if weights is not None else DEFAULT_WEIGHTS[label]
    if not any(float(w) > 0 for w in effective):
        raise _field_error('objective.weights', "at least one error function must be active")
    if label == 'actions':
        if float(effective[4]) <= 0:
            raise _field_error('objective.weights', "the actions label needs lambda_5 > 0")
        _vector(config, 'objective.actions', n, allow_none=False)
    else:
        _vector(config, 'objective.actions', n)
    if label == 'frequencies':
        _vector(config, 'objective.frequencies', n, allow_none=False)
    else:
        _vector(config, 'objective.frequencies', n)
    _positive(objective['consistency_weight'], 'objective.consistency_weight', strict=False)
    if objective['energy_label'] is not None:
        _finite(objective['energy_label'], 'objective.energy_label')
    _positive(objective['max_condition'], 'objective.max_condition')

    try:
        SolverOptions.from_dict(config['solver'])
    except (TypeError, ValueError) as e:
        raise ValueError(str(e).replace("Invalid solver field '", "Invalid config field 'solver."))

    probe = config['probe']
    spacing = _per_dimension(probe['spacing'], 'probe.spacing', n)
    for h, s in enumerate(spacing):
        _positive(s, f'probe.spacing[{h}]')
    for h, m in enumerate(_per_dimension(probe['max_index'], 'probe.max_index', n)):
        if not isinstance(m, int) or isinstance(m, bool) or m < 0:
            raise _field_error(f'probe.max_index[{h}]', f"must be an integer >= 0, got {m!r}")
    _positive(probe['threshold'], 'probe.threshold', strict=False)
    if probe['consistency_weight'] != 'auto':
        _positive(probe['consistency_weight'], 'probe.consistency_weight', strict=False)
    if not isinstance(probe['workers'], int) or probe['workers'] < 1:
        raise _field_error('probe.workers', f"must be an integer >= 1, got {probe['workers']!r}")
    _vector(config, 'probe.seed_actions', n)

    sweep = config['sweep']
    for key in ('N', 'omega'):
        values = sweep[key]
        if not isinstance(values, list) or not values:
            raise _field_error(f'sweep.{key}', f"expected a nonempty list, got {values!r}")
        for i, v in enumerate(values):
            _positive(v, f'sweep.{key}[{i}]')
    if any(not isinstance(v, int) for v in sweep['N']):
        raise _field_error('sweep.N', f"expected integers, got {sweep['N']!r}")
    if not isinstance(sweep['grid_points'], int) or sweep['grid_points'] < 1:
        raise _field_error('sweep.grid_points', f"must be an integer >= 1, got {sweep['grid_points']!r}")
    _positive(sweep['initial_scale'], 'sweep.initial_scale')
    if not isinstance(sweep['workers'], int) or sweep['workers'] < 1:
        raise _field_error('sweep.workers', f"must be an integer >= 1, got {sweep['workers']!r}")
    try:
        SolverOptions.from_dict({**config['solver'], **(sweep['solver'] or {})})
    except (TypeError, ValueError) as e:
        raise ValueError(str(e).replace("Invalid solver field '", "Invalid config field 'sweep.solver."))

    section = config['section']
    if section['theta0'] is not None:
        _vector(config, 'section.theta0', n, allow_none=False)
    if not isinstance(section['crossings'], int) or section['crossings'] < 1:
        raise _field_error('section.crossings', f"must be an integer >= 1, got {section['crossings']!r}")
    for key in ('tolerance', 'hausdorff_bound', 'max_periods', 'max_time'):
        _positive(section[key], f'section.{key}')

    return warnings


@dataclass
class RunConfig:
    """Validated run configuration with builders for the library objects it describes."""
    data: Dict[str, Any]
    source: Optional[Path] = None
    warnings: List[str] = field(default_factory=list)

    def __getitem__(self, key: str) -> Any:
        return self.data[key]

    @property
    def output_dir(self) -> Path:
        root = self.data.get('output_dir') or os.environ.get('TORUSFIT_OUTPUT_DIR') or 'output'
        return Path(root)

    def system(self) -> HamiltonianSystem:
        return from_config(self.data['system']['name'], self.data['system']['params'])

    @property
    def n(self) -> int:
        return self.system().n

    def theta_grid(self) -> ThetaGrid:
        model = self.data['model']
        return ThetaGrid(n=self.n, points=model['grid_points'], reduced=bool(model['symmetry_reduction']))

    def initial_model(self) -> TorusModel:
        """The configured starting torus: model.initial_model if set, else the family's canned guess."""
        model = self.data['model']
        if model['initial_model']:
            loaded = TorusModel.load(model['initial_model'])
            if loaded.n != self.n:
                raise _field_error('model.initial_model', f"model has n={loaded.n}, system has n={self.n}")
            return loaded
        family = model['family']
        if family == 'general':
            raise _field_error('model.initial_model', "the general family needs an initial model file")
        return initial_guess(family, model['N'], scale=float(model['initial_scale']), n=self.n)

    def objective_spec(self) -> ObjectiveSpec:
        objective = self.data['objective']
        label = objective['label']
        weights = objective['weights'] if objective['weights'] is not None else DEFAULT_WEIGHTS[label]
        return ObjectiveSpec(
            weights=tuple(weights),
            label=label,
            actions=objective['actions'],
            frequencies=objective['frequencies'],
            consistency_weight=float(objective['consistency_weight']),
            energy_label=objective['energy_label'],
            max_condition=float(objective['max_condition']),
        )

    def solver_options(self) -> SolverOptions:
        return SolverOptions.from_dict(self.data['solver'])

    def sweep_solver_options(self) -> SolverOptions:
        return SolverOptions.from_dict({**self.data['solver'], **(self.data['sweep']['solver'] or {})})

    def action_grid(self) -> ActionGrid:
        probe = self.data['probe']
        n = self.n
        return ActionGrid(
            spacing=tuple(_per_dimension(probe['spacing'], 'probe.spacing', n)),
            max_index=tuple(_per_dimension(probe['max_index'], 'probe.max_index', n)),
        )

    def probe_options(self) -> ProbeOptions:
        probe = self.data['probe']
        rho = probe['consistency_weight']
        return ProbeOptions(
            threshold=float(probe['threshold']),
            consistency_weight=None if rho == 'auto' else float(rho),
            workers=int(probe['workers']),
        )

    def probe_spec(self) -> ObjectiveSpec:
        """Action-labelled template for probe fits (actions are replaced per lattice point)."""
        objective = self.data['objective']
        weights = objective['weights'] if objective['weights'] is not None else DEFAULT_WEIGHTS['actions']
        if float(weights[4]) <= 0:
            raise _field_error('objective.weights', "probing is action-labelled and needs lambda_5 > 0")
        rho = self.probe_options().consistency_weight
        return ObjectiveSpec(
            weights=tuple(weights),
            label='actions',
            actions=(0.0,) * self.n,
            consistency_weight=0.0 if rho is None else rho,
            max_condition=float(objective['max_condition']),
        )

    def resolved_consistency_weight(self, model: TorusModel) -> float:
        rho = self.probe_options().consistency_weight
        return probing_consistency_weight(model.mask) if rho is None else rho

    def theta0(self) -> Tuple[float, ...]:
        theta0 = self.data['section']['theta0']
        if theta0 is None:
            return (0.0, 0.5 * np.pi)
        return tuple(float(t) for t in theta0)

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self.data)

    def write_resolved(self, output_dir: Union[str, Path]) -> Path:
        """Write the resolved config (defaults + file + overrides) for provenance."""
        document = self.to_dict()
        document.pop('schema_version', None)
        return write_json(Path(output_dir) / 'config.resolved.json', document)


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Sequence[str]] = None) -> RunConfig:
    """
    Load, merge and validate a run config.

    Args:
        path: JSON config file (None uses the defaults alone)
        overrides: ``dotted.key=VALUE`` strings applied after the merge

    Raises:
        ValueError: Unreadable file, invalid JSON, or an invalid field
    """
    user: Dict[str, Any] = {}
    source = None
    if path is not None:
        source = Path(path)
        if not source.exists():
            raise ValueError(f"Config file not found: {source}")
        try:
            with open(source, 'r') as f:
                user = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"Invalid JSON in config file {source}: {e}")
        if not isinstance(user, dict):
            raise ValueError(f"Config file {source} must hold a JSON object")

    merged = apply_overrides(deep_merge(DEFAULT_CONFIG, user), overrides or [])
    warnings = validate_config(merged)
    for message in warnings:
        logger.warning(message)
    return RunConfig(data=merged, source=source, warnings=warnings)
