"""
Poincare sections of integrated orbits and constructed tori

A section point is recorded where q_2 crosses zero upwards (q_2 = 0 with
p_2 > 0) and is stored as (x, xdot) = (q_1, p_1). Crossings of an
integrated orbit are bracketed by its accepted steps, located on the
cubic Hermite interpolant of the bracketing step and then polished by
re-integrating from the step start with Newton corrections in time.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq
from scipy.spatial import cKDTree
from scipy.spatial.distance import directed_hausdorff

from torusfit.core.dynamics import HamiltonianSystem
from torusfit.core.errors import IntegrationError, SectionError
from torusfit.core.model import TorusModel
from torusfit.utils.io import write_csv
from torusfit.verify.integrator import GBSIntegrator, Trajectory

logger = logging.getLogger('torusfit.sections')

CROSSING_TOLERANCE = 1e-10
SOURCES = ('integrated', 'constructed')


@dataclass
class SectionSet:
    """Section crossings: points (K, 2) as (x, xdot), their times and where they came from."""
    points: np.ndarray
    times: np.ndarray
    source: str

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        if self.source not in SOURCES:
            raise ValueError(f"Unknown section source '{self.source}'")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class SectionComparison:
    hausdorff: float
    mean_nearest: float

    def to_dict(self) -> Dict[str, float]:
        return {'hausdorff': self.hausdorff, 'mean_nearest': self.mean_nearest}


def _upward_brackets(values: np.ndarray) -> np.ndarray:
    """Indices i with values[i] < 0 <= values[i + 1]."""
    return np.flatnonzero((values[:-1] < 0) & (values[1:] >= 0))


def _polish(integrator: GBSIntegrator, y0: np.ndarray, t0: float, t_guess: float,
            coordinate: int, tol: float) -> Tuple[float, np.ndarray]:
    """Newton iteration on q_c(t) = 0 by re-integrating from (t0, y0)."""
    t = t_guess
    y = integrator.advance(y0, t - t0)
    for _ in range(8):
        value = y[coordinate]
        rate = integrator.rhs(y)[coordinate]
        if abs(value) < tol or rate == 0:
            break
        dt = -value / rate
        y = integrator.advance(y, dt)
        t += dt
    return t, y


def _refine_crossings(trajectory: Trajectory, coordinate: int,
                      tol: float) -> List[Tuple[float, np.ndarray]]:
    states = np.concatenate([trajectory.q, trajectory.p], axis=1)
    rates = np.concatenate([trajectory.q_dot, trajectory.p_dot], axis=1)
    integrator = None
    if trajectory.system is not None:
        integrator = GBSIntegrator(trajectory.system, rtol=trajectory.rtol, atol=trajectory.atol)

    crossings = []
    for i in _upward_brackets(trajectory.q[:, coordinate]):
        t0, t1 = trajectory.t[i], trajectory.t[i + 1]
        spline = CubicHermiteSpline([t0, t1], states[i:i + 2], rates[i:i + 2])
        value0 = states[i, coordinate]
        value1 = states[i + 1, coordinate]
        if value1 == 0.0:
            t_root = t1
        else:
            t_root = brentq(lambda s: float(spline(s)[coordinate]), t0, t1, xtol=1e-15, rtol=4.5e-16)
        y = spline(t_root)
        if integrator is not None and value0 != 0.0:
            try:
                t_root, y = _polish(integrator, states[i], t0, t_root, coordinate, tol)
            except IntegrationError as e:
                logger.warning(f"Dropping crossing near t={t_root:.6g}: polish failed: {e}")
                continue
        if abs(y[coordinate]) >= tol:
            logger.warning(f"Dropping crossing at t={t_root:.6g}: |q|={abs(y[coordinate]):.2e} above {tol:.1e}")
            continue
        crossings.append((float(t_root), np.asarray(y, dtype=float)))
    return crossings


def crossing_times(trajectory: Trajectory, coordinate: int = 0,
                   tol: float = CROSSING_TOLERANCE) -> np.ndarray:
    """Times of the upward zero crossings of q[coordinate] (e.g. to measure a 1D period)."""
    return np.array([t for t, _ in _refine_crossings(trajectory, coordinate, tol)])


def section_from_orbit(trajectory: Trajectory, tol: float = CROSSING_TOLERANCE) -> SectionSet:
    """Section points q_2 = 0, p_2 > 0 of an integrated 2D orbit; empty when it never crosses."""
    if trajectory.n != 2:
        raise ValueError("Poincare sections need a 2D system")
    points, times = [], []
    for t, y in _refine_crossings(trajectory, coordinate=1, tol=tol):
        if y[3] > 0:
            points.append((y[0], y[2]))
            times.append(t)
    return SectionSet(points=np.array(points).reshape(-1, 2), times=np.array(times), source='integrated')


def orbit_section(system: HamiltonianSystem, q0: Sequence[float], p0: Sequence[float],
                  crossings: int = 200, tolerance: float = 1e-13, max_time: float = 1e5,
                  max_step: float = np.inf) -> Tuple[Trajectory, SectionSet]:
    """
    Integrate until ``crossings`` upward q_2 crossings have happened (or ``max_time``).

    Returns:
        The trajectory and its section
    """
    if system.n != 2:
        raise ValueError("Poincare sections need a 2D system")
    if crossings < 1:
        raise ValueError(f"crossings must be >= 1, got {crossings}")
    count = {'seen': 0, 'last': float(np.asarray(q0, dtype=float)[1])}

    def stop(t: float, y: np.ndarray, f: np.ndarray) -> bool:
        if count['last'] < 0 <= y[1] and y[3] > 0:
            count['seen'] += 1
        count['last'] = float(y[1])
        return count['seen'] >= crossings

    integrator = GBSIntegrator(system, rtol=tolerance, atol=tolerance, max_step=max_step)
    trajectory = integrator.integrate(q0, p0, max_time, stop=stop)
    section = section_from_orbit(trajectory)
    if len(section) < crossings:
        logger.warning(f"Orbit reached t={trajectory.t[-1]:.6g} with {len(section)} of {crossings} crossings")
    return trajectory, section


def constructed_orbit(model: TorusModel, omega: Sequence[float], theta0: Sequence[float],
                      times: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Phase points q(theta0 + omega t), p(theta0 + omega t) at the given times."""
    thetas = np.asarray(theta0, dtype=float)[None, :] + np.outer(times, np.asarray(omega, dtype=float))
    return model.evaluate(thetas)


def section_from_model(model: TorusModel, omega: Sequence[float], theta0: Sequence[float] = (0.0, 0.5 * np.pi),
                       crossings: int = 200, max_periods: float = 2000.0,
                       samples_per_period: int = 64, chunk: int = 4096) -> SectionSet:
    """
    Section of a constructed torus followed along theta(t) = theta0 + omega t.

    Raises:
        SectionError: No crossing within ``max_periods`` periods of the slowest frequency
    """
    if model.n != 2:
        raise ValueError("Poincare sections need a 2D model")
    omega = np.asarray(omega, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    if not np.all(np.isfinite(omega)) or not np.any(omega != 0):
        raise SectionError(f"Cannot follow a torus with frequencies {omega.tolist()}")
    fastest = float(np.max(np.abs(omega)))
    slowest = float(np.min(np.abs(omega[omega != 0])))
    dt = 2.0 * np.pi / fastest / samples_per_period
    t_budget = max_periods * 2.0 * np.pi / slowest

    def q2(t: float) -> float:
        return float(model.evaluate(theta0 + omega * t)[0][1])

    points, times = [], []
    start = 0.0
    previous_value: Optional[float] = None
    while len(times) < crossings and start < t_budget:
        grid = start + dt * np.arange(chunk + 1)
        values = model.evaluate(theta0[None, :] + np.outer(grid, omega))[0][:, 1]
        if previous_value is not None:
            values[0] = previous_value
        for i in _upward_brackets(values):
            t_root = grid[i + 1] if values[i + 1] == 0.0 else brentq(
                q2, grid[i], grid[i + 1], xtol=1e-15, rtol=4.5e-16)
            q, p = model.evaluate(theta0 + omega * t_root)
            dq, _ = model.derivatives(theta0 + omega * t_root)
            if float(dq[1] @ omega) <= 0:
                continue
            points.append((q[0], p[0]))
            times.append(t_root)
            if len(times) >= crossings:
                break
        previous_value = float(values[-1])
        start = float(grid[-1])

    if not times:
        raise SectionError(f"No section crossing within {max_periods:g} periods (t <= {t_budget:.6g})")
    if len(times) < crossings:
        logger.warning(f"Constructed section has {len(times)} of {crossings} crossings")
    return SectionSet(points=np.array(points), times=np.array(times), source='constructed')


def compare_sections(a: SectionSet, b: SectionSet) -> SectionComparison:
    """Symmetric Hausdorff and mean nearest-neighbour distance in the (x, xdot) plane."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("compare_sections needs two nonempty section sets")
    hausdorff = max(directed_hausdorff(a.points, b.points)[0], directed_hausdorff(b.points, a.points)[0])
    d_ab, _ = cKDTree(b.points).query(a.points)
    d_ba, _ = cKDTree(a.points).query(b.points)
    mean_nearest = 0.5 * (float(np.mean(d_ab)) + float(np.mean(d_ba)))
    return SectionComparison(hausdorff=float(hausdorff), mean_nearest=mean_nearest)


def trajectory_to_csv(trajectory: Trajectory, path: Union[str, Path]) -> Path:
    n = trajectory.n
    header = ['t'] + [f'q{j + 1}' for j in range(n)] + [f'p{j + 1}' for j in range(n)] + ['H']
    rows = (
        [t, *q, *p, h]
        for t, q, p, h in zip(trajectory.t, trajectory.q, trajectory.p, trajectory.energy)
    )
    return write_csv(path, header, rows)


def section_to_csv(sections: Sequence[SectionSet], path: Union[str, Path]) -> Path:
    rows = (
        [section.source, t, x, xdot]
        for section in sections
        for t, (x, xdot) in zip(section.times, section.points)
    )
    return write_csv(path, ['source', 't', 'x', 'xdot'], rows)
