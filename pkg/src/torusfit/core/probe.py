"""
Action-grid probing

Starting from an unlabelled torus (J*, T*) the probe fits the lattice point
nearest to J*, then grows the accepted region one generation at a time:
every still-unvisited neighbour (including diagonals) of an accepted point
is fitted from that point's torus, and the good ones form the next
generation. Each lattice point is fitted at most once; the run ends when a
generation comes back empty.

Parents are assigned to candidates before any fit of a generation starts
(lowest objective wins, ties go to the lexicographically smaller parent),
so running the fits of a generation in parallel changes nothing.

Usage:
    lattice = ActionGrid(spacing=(0.05, 0.05), max_index=(26, 26))
    state = probe(system, theta_grid, lattice, seed.actions, seed.model, options=ProbeOptions(workers=4))
    write_probe_outputs(state, 'output/probe')
"""

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from torusfit.core.dynamics import HamiltonianSystem
from torusfit.core.errors import DegenerateTorusError, NonFiniteResidualError
from torusfit.core.model import ThetaGrid, TorusModel
from torusfit.core.objective import ObjectiveSpec, probing_consistency_weight
from torusfit.core.solver import FitReport, SolverOptions, fit
from torusfit.utils.io import write_csv

logger = logging.getLogger('torusfit.probe')

Index = Tuple[int, ...]

DEFAULT_THRESHOLD = 1e-6

# construct(index, label, seed) -> fit result; accept(result) -> good torus?
Constructor = Callable[[Index, np.ndarray, Any], Any]
Acceptor = Callable[[Any], bool]


@dataclass(frozen=True)
class ActionGrid:
    """Rectangular lattice J_h = m_h * spacing_h, m_h = 0..max_index_h."""
    spacing: Tuple[float, ...]
    max_index: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, 'spacing', tuple(float(s) for s in self.spacing))
        object.__setattr__(self, 'max_index', tuple(int(m) for m in self.max_index))
        if len(self.spacing) != len(self.max_index):
            raise ValueError(
                f"Invalid probe field 'spacing': {len(self.spacing)} values for "
                f"{len(self.max_index)} max_index entries"
            )
        if not self.spacing:
            raise ValueError("Invalid probe field 'spacing': at least one dimension is needed")
        if any(not np.isfinite(s) or s <= 0 for s in self.spacing):
            raise ValueError(f"Invalid probe field 'spacing': values must be > 0, got {list(self.spacing)}")
        if any(m < 0 for m in self.max_index):
            raise ValueError(f"Invalid probe field 'max_index': values must be >= 0, got {list(self.max_index)}")

    @property
    def n(self) -> int:
        return len(self.spacing)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(m + 1 for m in self.max_index)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def indices(self) -> List[Index]:
        """All lattice indices in lexicographic order."""
        return [tuple(int(v) for v in idx) for idx in np.ndindex(*self.shape)]

    def contains(self, index: Sequence[int]) -> bool:
        return len(index) == self.n and all(0 <= m <= top for m, top in zip(index, self.max_index))

    def actions(self, index: Sequence[int]) -> np.ndarray:
        return np.array([m * s for m, s in zip(index, self.spacing)])

    def nearest_point(self, actions: Sequence[float]) -> Index:
        """
        Lattice index closest to ``actions`` (Euclidean); ties go to the smaller index.

        The lattice is a product grid, so the nearest point is found per
        component. Points outside the lattice are clamped to its bounds.
        """
        actions = np.asarray(actions, dtype=float)
        if actions.shape != (self.n,) or not np.all(np.isfinite(actions)):
            raise ValueError(f"Expected {self.n} finite actions, got {actions.tolist()}")
        index = []
        for value, step, top in zip(actions, self.spacing, self.max_index):
            low = int(np.floor(value / step))
            best = low
            if abs((low + 1) * step - value) < abs(value - low * step) - 1e-12 * step:
                best = low + 1
            index.append(min(max(best, 0), top))
        return tuple(index)

    def adjacent_points(self, index: Sequence[int]) -> List[Index]:
        """Moore neighbourhood of ``index`` clipped to the lattice, in lexicographic order."""
        index = tuple(int(m) for m in index)
        if not self.contains(index):
            raise ValueError(f"Index {index} is outside the lattice {self.shape}")
        neighbours = []
        for offset in np.ndindex(*([3] * self.n)):
            shift = tuple(o - 1 for o in offset)
            if not any(shift):
                continue
            candidate = tuple(m + s for m, s in zip(index, shift))
            if self.contains(candidate):
                neighbours.append(candidate)
        return neighbours


def nearest_point(grid: ActionGrid, actions: Sequence[float]) -> Index:
    return grid.nearest_point(actions)


def adjacent_points(grid: ActionGrid, index: Sequence[int]) -> List[Index]:
    return grid.adjacent_points(index)


@dataclass(frozen=True)
class ProbeOptions:
    """
    Probing settings.

    Attributes:
        threshold: A torus is good when its total objective is below this
        consistency_weight: rho for the probe fits; None means 0.01 / #C
        workers: Parallel fits per generation (1 runs them in order)
    """
    threshold: float = DEFAULT_THRESHOLD
    consistency_weight: Optional[float] = None
    workers: int = 1

    def __post_init__(self):
        if not self.threshold >= 0:
            raise ValueError(f"Invalid probe field 'threshold': must be >= 0, got {self.threshold}")
        if self.consistency_weight is not None and not self.consistency_weight >= 0:
            raise ValueError(
                f"Invalid probe field 'consistency_weight': must be >= 0, got {self.consistency_weight}"
            )
        if self.workers < 1:
            raise ValueError(f"Invalid probe field 'workers': must be >= 1, got {self.workers}")


@dataclass
class ProbeRecord:
    """One fitted lattice point."""
    index: Index
    actions: np.ndarray
    generation: int
    parent: Optional[Index]
    accepted: bool
    result: Any = None
    error: Optional[str] = None


@dataclass
class ProbeState:
    """
    Bookkeeping of a probe run.

    ``generations[i]`` holds the indices accepted in generation i (S_i); the
    trailing empty generation that ends the run is not stored.
    """
    grid: ActionGrid
    threshold: float
    generations: List[List[Index]] = field(default_factory=list)
    records: Dict[Index, ProbeRecord] = field(default_factory=dict)
    unvisited: Set[Index] = field(default_factory=set)

    @property
    def accepted(self) -> Dict[Index, Any]:
        return {idx: rec.result for idx, rec in sorted(self.records.items()) if rec.accepted}

    @property
    def rejected(self) -> Set[Index]:
        return {idx for idx, rec in self.records.items() if not rec.accepted}

    @property
    def fitted(self) -> List[Index]:
        return sorted(self.records)

    def summary(self) -> Dict[str, int]:
        return {
            'fitted': len(self.records),
            'accepted': sum(1 for rec in self.records.values() if rec.accepted),
            'generations': len(self.generations),
            'unvisited': len(self.unvisited),
        }


def _rank(result: Any) -> float:
    value = getattr(result, 'objective', None)
    if value is None or not np.isfinite(value):
        return float('inf')
    return float(value)


def _assign_parents(state: ProbeState, parents: Sequence[Index]) -> Dict[Index, Index]:
    """Unvisited neighbours of the parents, each mapped to its best parent."""
    order = sorted(parents, key=lambda idx: (_rank(state.records[idx].result), idx))
    assignment: Dict[Index, Index] = {}
    for parent in order:
        for candidate in state.grid.adjacent_points(parent):
            if candidate in state.unvisited and candidate not in assignment:
                assignment[candidate] = parent
    return dict(sorted(assignment.items()))


def _construct(construct: Constructor, accept: Acceptor, index: Index, label: np.ndarray,
               seed: Any) -> Tuple[Any, bool, Optional[str]]:
    try:
        result = construct(index, label, seed)
    except (DegenerateTorusError, NonFiniteResidualError, np.linalg.LinAlgError) as e:
        logger.debug(f"Fit at {index} failed: {e}")
        return None, False, f"{type(e).__name__}: {e}"
    return result, bool(accept(result)), None


def _seed_of(result: Any) -> Any:
    return getattr(result, 'model', result)


def wavefront_probe(grid: ActionGrid, seed_actions: Sequence[float], seed: Any,
                    construct: Constructor, accept: Acceptor, threshold: float = DEFAULT_THRESHOLD,
                    workers: int = 1) -> ProbeState:
    """
    Run the probing wavefront with any constructor and goodness test.

    ``construct`` receives the lattice index, its action label and the
    seed (a torus model, or whatever the parent result's ``model`` is);
    ``accept`` decides whether the result joins the accepted region.
    Constructor failures (degenerate or non-finite tori) count as rejections.
    """
    state = ProbeState(grid=grid, threshold=threshold, unvisited=set(grid.indices()))
    start = grid.nearest_point(seed_actions)
    result, good, error = _construct(construct, accept, start, grid.actions(start), seed)
    state.records[start] = ProbeRecord(start, grid.actions(start), 0, None, good, result, error)
    state.unvisited.discard(start)
    logger.info(f"Probe seed J*={np.round(np.asarray(seed_actions, dtype=float), 6).tolist()} "
                f"-> index {start}, {'accepted' if good else 'rejected'}")
    if not good:
        return state
    state.generations.append([start])

    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        while state.generations[-1]:
            generation = len(state.generations)
            assignment = _assign_parents(state, state.generations[-1])
            for candidate in assignment:
                state.unvisited.discard(candidate)

            outcomes: Dict[Index, Tuple[Any, bool, Optional[str]]] = {}
            jobs = [
                (candidate, grid.actions(candidate), _seed_of(state.records[parent].result))
                for candidate, parent in assignment.items()
            ]
            if executor is None:
                for candidate, label, parent_seed in jobs:
                    outcomes[candidate] = _construct(construct, accept, candidate, label, parent_seed)
            else:
                future_to_index = {
                    executor.submit(_construct, construct, accept, candidate, label, parent_seed): candidate
                    for candidate, label, parent_seed in jobs
                }
                for future in as_completed(future_to_index):
                    outcomes[future_to_index[future]] = future.result()

            accepted = []
            for candidate, parent in assignment.items():
                result, good, error = outcomes[candidate]
                state.records[candidate] = ProbeRecord(
                    candidate, grid.actions(candidate), generation, parent, good, result, error
                )
                if good:
                    accepted.append(candidate)
            logger.info(f"Generation {generation}: fitted {len(assignment)}, accepted {len(accepted)}")
            if not accepted:
                break
            state.generations.append(accepted)
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    logger.info(f"Probe finished: {state.summary()}")
    return state


def is_good_torus(report: FitReport, threshold: float) -> bool:
    """Objective below the threshold, finite consistency metric and a regular frequency solve."""
    return (
        report.reason != 'degenerate'
        and np.isfinite(report.objective)
        and report.objective <= threshold
        and np.isfinite(report.consistency)
    )


def probe(system: HamiltonianSystem, theta_grid: ThetaGrid, action_grid: ActionGrid,
          seed_actions: Sequence[float], seed_model: TorusModel, spec: Optional[ObjectiveSpec] = None,
          options: Optional[ProbeOptions] = None, solver_options: Optional[SolverOptions] = None) -> ProbeState:
    """
    Probe the action lattice with action-labelled fits seeded from neighbours.

    Args:
        system: Hamiltonian to construct tori for
        theta_grid: Angle grid of every fit
        action_grid: Lattice of action labels
        seed_actions: J* of the seed torus (usually from an unlabelled fit)
        seed_model: T*, starting torus of the first fit; fixes the family
        spec: Template objective; its actions are replaced per lattice point
        options: Threshold, consistency weight and worker count
        solver_options: Levenberg-Marquardt settings; the objective
            tolerance is tightened to a tenth of the threshold

    Returns:
        ProbeState with one record per fitted index
    """
    options = options or ProbeOptions()
    solver_options = solver_options or SolverOptions()
    if action_grid.n != seed_model.n:
        raise ValueError(f"Action grid has {action_grid.n} dimensions, seed model has {seed_model.n}")
    rho = options.consistency_weight
    if rho is None:
        rho = probing_consistency_weight(seed_model.mask)
    template = spec or ObjectiveSpec.action_labelled(seed_actions)
    template = replace(template, label='actions', actions=tuple(float(a) for a in seed_actions),
                       consistency_weight=rho)

    per_point_target = options.threshold / (10.0 * theta_grid.size)
    if per_point_target > 0 and per_point_target < solver_options.objective_tolerance:
        solver_options = replace(solver_options, objective_tolerance=per_point_target)
    logger.info(
        f"Probe: system={system.name} family={seed_model.family} lattice={action_grid.shape} "
        f"threshold={options.threshold:g} rho={rho:.3e} workers={options.workers}"
    )

    def construct(index: Index, label: np.ndarray, seed: TorusModel) -> FitReport:
        return fit(system, theta_grid, template.with_actions(label), seed, solver_options)

    def accept(report: FitReport) -> bool:
        return is_good_torus(report, options.threshold)

    return wavefront_probe(action_grid, seed_actions, seed_model, construct, accept,
                           threshold=options.threshold, workers=options.workers)


def _index_name(index: Index) -> str:
    return '_'.join(str(m) for m in index)


def summary_rows(state: ProbeState) -> Tuple[List[str], List[List[Any]]]:
    """Header and rows of the per-index summary, sorted by index."""
    n = state.grid.n
    header = ([f'm{h + 1}' for h in range(n)] + [f'J{h + 1}' for h in range(n)]
              + [f'omega{h + 1}' for h in range(n)]
              + ['sigma', 'objective', 'accepted', 'generation', 'parent', 'reason', 'error'])
    rows = []
    for index in state.fitted:
        record = state.records[index]
        result = record.result
        omega = getattr(result, 'omega', None)
        omega = list(np.asarray(omega, dtype=float)) if omega is not None else [float('nan')] * n
        rows.append(
            list(index) + list(record.actions) + omega + [
                float(getattr(result, 'sigma', float('nan'))),
                float(getattr(result, 'objective', float('nan'))),
                record.accepted,
                record.generation,
                _index_name(record.parent) if record.parent is not None else '',
                getattr(result, 'reason', ''),
                record.error or '',
            ]
        )
    return header, rows


def write_probe_outputs(state: ProbeState, output_dir: Union[str, Path]) -> Path:
    """
    Write reports/m<m1>_<m2>.json for every fitted index and summary.csv.

    Returns:
        Path of the summary CSV
    """
    output_dir = Path(output_dir)
    for index in state.fitted:
        result = state.records[index].result
        if isinstance(result, FitReport):
            result.save(output_dir / 'reports' / f'm{_index_name(index)}.json')
    header, rows = summary_rows(state)
    path = write_csv(output_dir / 'summary.csv', header, rows)
    logger.info(f"Probe outputs written to {output_dir} ({len(rows)} fitted points)")
    return path


def accepted_from_summary(rows: Sequence[Dict[str, str]]) -> Set[Index]:
    """Accepted indices of a summary.csv read back with read_csv."""
    accepted = set()
    for row in rows:
        if row.get('accepted') != 'true':
            continue
        keys = sorted((k for k in row if k.startswith('m') and k[1:].isdigit()), key=lambda k: int(k[1:]))
        accepted.add(tuple(int(row[k]) for k in keys))
    return accepted
