"""
Levenberg-Marquardt torus fitting

The minimiser is model-agnostic: it sees a problem object with
``residuals(x)`` and ``residuals_and_jacobian(x)`` plus a flat starting
vector. ``fit`` wires a TorusObjective into it and turns the result into a
FitReport whose numbers are recomputed from the final model.

Stopping rules, checked in order before each step:
- objective: per-grid-point objective <= objective_tolerance
- gradient: max |J^T r| <= gradient_tolerance
- plateau (unlabelled only): the objective fell by less than
  plateau_rtol (relative) over the last plateau_window accepted steps while
  the per-point objective is below plateau_objective ("valley bottom")
- max-iter: max_iterations step attempts
- step: the proposed step is below step_tolerance * (|x| + step_tolerance)
A degenerate frequency solve at the start ends the fit with reason
"degenerate"; a degenerate trial point is just a rejected step.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Protocol, Tuple, Union

import numpy as np
from scipy import linalg

from torusfit.core.dynamics import HamiltonianSystem
from torusfit.core.errors import DegenerateTorusError, NonFiniteResidualError
from torusfit.core.model import ThetaGrid, TorusModel
from torusfit.core.objective import Diagnostics, ObjectiveSpec, TorusObjective
from torusfit.utils.io import write_json

logger = logging.getLogger('torusfit.solver')

REASONS = ('objective', 'gradient', 'plateau', 'max-iter', 'step', 'degenerate')


class LeastSquaresProblem(Protocol):
    def residuals(self, x: np.ndarray) -> np.ndarray:
        ...

    def residuals_and_jacobian(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        ...


@dataclass(frozen=True)
class SolverOptions:
    """Damping schedule and stopping tolerances of the Levenberg-Marquardt loop."""
    initial_damping: float = 1e-3
    damping_increase: float = 2.0
    damping_decrease: float = 1.0 / 3.0
    max_iterations: int = 500
    gradient_tolerance: float = 1e-10
    step_tolerance: float = 1e-12
    objective_tolerance: float = 1e-8
    plateau_window: int = 5
    plateau_rtol: float = 1e-2
    plateau_objective: float = 1e-4
    convergence_threshold: float = 1e-6

    def __post_init__(self):
        for name in ('initial_damping', 'gradient_tolerance', 'step_tolerance', 'objective_tolerance',
                     'plateau_rtol', 'plateau_objective', 'convergence_threshold'):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"Invalid solver field '{name}': must be > 0, got {value}")
        if not self.damping_increase > 1:
            raise ValueError(f"Invalid solver field 'damping_increase': must be > 1, got {self.damping_increase}")
        if not 0 < self.damping_decrease < 1:
            raise ValueError(f"Invalid solver field 'damping_decrease': must be in (0, 1), got {self.damping_decrease}")
        if self.max_iterations < 0:
            raise ValueError(f"Invalid solver field 'max_iterations': must be >= 0, got {self.max_iterations}")
        if self.plateau_window < 2:
            raise ValueError(f"Invalid solver field 'plateau_window': must be >= 2, got {self.plateau_window}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SolverOptions':
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


@dataclass
class LMResult:
    x: np.ndarray
    objective: float
    iterations: int
    reason: str
    history: List[float] = field(default_factory=list)


def levenberg_marquardt(problem: LeastSquaresProblem, x0: np.ndarray, options: SolverOptions,
                        scale: int = 1, plateau: bool = False) -> LMResult:
    """
    Minimise |r(x)|^2.

    Args:
        problem: Residual and Jacobian callbacks
        x0: Starting vector
        options: Damping and stopping settings
        scale: Count the objective is divided by for the per-point rules
        plateau: Enable the valley-bottom stop

    Raises:
        NonFiniteResidualError: Residuals at x0 are not finite
    """
    x = np.array(x0, dtype=float)
    try:
        r, jac = problem.residuals_and_jacobian(x)
    except DegenerateTorusError as e:
        logger.info(f"Degenerate starting torus: {e}")
        return LMResult(x=x, objective=float('inf'), iterations=0, reason='degenerate')
    if not np.all(np.isfinite(r)):
        raise NonFiniteResidualError("Residuals are not finite at the starting point")

    f = float(r @ r)
    grad = jac.T @ r
    normal = jac.T @ jac
    diag_max = float(np.max(np.diag(normal))) if normal.size else 0.0
    damping = options.initial_damping * diag_max if diag_max > 0 else options.initial_damping
    history = [f]
    reason = 'max-iter'
    iterations = 0

    while True:
        per_point = f / scale
        if per_point <= options.objective_tolerance:
            reason = 'objective'
            break
        if not grad.size or float(np.max(np.abs(grad))) <= options.gradient_tolerance:
            reason = 'gradient'
            break
        window = options.plateau_window
        if plateau and len(history) > window and per_point < options.plateau_objective:
            previous = history[-window - 1]
            if (previous - f) < options.plateau_rtol * previous:
                reason = 'plateau'
                break
        if iterations >= options.max_iterations:
            reason = 'max-iter'
            break
        iterations += 1

        system = normal + damping * np.eye(normal.shape[0])
        try:
            step = linalg.cho_solve(linalg.cho_factor(system), -grad)
        except linalg.LinAlgError:
            damping *= options.damping_increase
            continue
        x_norm = float(np.linalg.norm(x))
        if float(np.linalg.norm(step)) <= options.step_tolerance * (x_norm + options.step_tolerance):
            reason = 'step'
            break

        trial = x + step
        try:
            r_trial = problem.residuals(trial)
            f_trial = float(r_trial @ r_trial)
        except DegenerateTorusError:
            f_trial = float('inf')

        if np.isfinite(f_trial) and f_trial < f:
            try:
                r_new, jac_new = problem.residuals_and_jacobian(trial)
            except DegenerateTorusError:
                damping *= options.damping_increase
                continue
            x, r, jac = trial, r_new, jac_new
            f = float(r @ r)
            grad = jac.T @ r
            normal = jac.T @ jac
            damping *= options.damping_decrease
            history.append(f)
            logger.debug(f"iter {iterations}: accepted, objective={f:.6e}, damping={damping:.3e}")
        else:
            damping *= options.damping_increase
            logger.debug(f"iter {iterations}: rejected, trial={f_trial:.6e}, damping={damping:.3e}")

    return LMResult(x=x, objective=f, iterations=iterations, reason=reason, history=history)


@dataclass
class FitReport:
    """
    Outcome of one torus fit.

    objective, sigma, omega, actions (grid-mean J), energy (grid-mean H) and
    consistency are recomputed from ``model``, not carried over from the
    solver loop.
    """
    model: TorusModel
    objective: float
    sigma: float
    omega: np.ndarray
    actions: np.ndarray
    energy: float
    consistency: float
    iterations: int
    reason: str
    spec: ObjectiveSpec
    options: SolverOptions
    grid_size: int
    system: Dict[str, Any] = field(default_factory=dict)

    @property
    def per_point(self) -> float:
        return self.objective / self.grid_size

    @property
    def converged(self) -> bool:
        return self.reason != 'degenerate' and self.per_point <= self.options.convergence_threshold

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': 'fit-report',
            'objective': self.objective,
            'per_point_objective': self.per_point,
            'sigma': self.sigma,
            'omega': list(np.asarray(self.omega, dtype=float)),
            'actions': list(np.asarray(self.actions, dtype=float)),
            'energy': self.energy,
            'consistency': self.consistency,
            'iterations': self.iterations,
            'reason': self.reason,
            'converged': self.converged,
            'grid_size': self.grid_size,
            'system': self.system,
            'spec': self.spec.to_dict(),
            'options': self.options.to_dict(),
            'model': self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'FitReport':
        def _float(value):
            return float('nan') if value is None else float(value)

        return cls(
            model=TorusModel.from_dict(data['model']),
            objective=float('inf') if data.get('objective') is None else float(data['objective']),
            sigma=_float(data.get('sigma')),
            omega=np.array([_float(v) for v in data.get('omega', [])]),
            actions=np.array([_float(v) for v in data.get('actions', [])]),
            energy=_float(data.get('energy')),
            consistency=_float(data.get('consistency')),
            iterations=int(data.get('iterations', 0)),
            reason=data.get('reason', 'max-iter'),
            spec=ObjectiveSpec.from_dict(data['spec']),
            options=SolverOptions.from_dict(data.get('options', {})),
            grid_size=int(data['grid_size']),
            system=data.get('system', {}),
        )

    def save(self, path: Union[str, Path]) -> Path:
        return write_json(path, self.to_dict())

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'FitReport':
        with open(path, 'r') as f:
            return cls.from_dict(json.load(f))


def _report(model: TorusModel, diag: Diagnostics, result: LMResult, spec: ObjectiveSpec,
            options: SolverOptions, system: HamiltonianSystem) -> FitReport:
    return FitReport(
        model=model,
        objective=diag.objective,
        sigma=diag.sigma,
        omega=np.asarray(diag.omega, dtype=float),
        actions=np.asarray(diag.actions, dtype=float),
        energy=diag.energy,
        consistency=diag.consistency,
        iterations=result.iterations,
        reason=result.reason,
        spec=spec,
        options=options,
        grid_size=diag.grid_size,
        system=system.describe(),
    )


def fit(system: HamiltonianSystem, grid: ThetaGrid, spec: ObjectiveSpec, init: TorusModel,
        options: Optional[SolverOptions] = None) -> FitReport:
    """
    Fit a torus by Levenberg-Marquardt from ``init``.

    The plateau stop is active only for unlabelled specs.

    Raises:
        NonFiniteResidualError: Residuals at ``init`` are not finite
        ValueError: Dimension mismatch between system, grid, spec and model
    """
    options = options or SolverOptions()
    objective = TorusObjective(system, grid, spec, init.mask)
    logger.info(
        f"Fit start: system={system.name} family={init.family} N={init.N} "
        f"label={spec.label} grid={grid.size}"
    )
    result = levenberg_marquardt(
        objective, init.coefficients, options,
        scale=grid.size, plateau=(spec.label == 'unlabelled'),
    )
    model = init.with_coefficients(result.x)
    report = _report(model, objective.diagnostics(result.x), result, spec, options, system)
    logger.info(
        f"Fit end: reason={report.reason} iterations={report.iterations} "
        f"objective={report.objective:.3e} sigma={report.sigma:.3e}"
    )
    return report


def fit_unlabelled(system: HamiltonianSystem, grid: ThetaGrid, init: TorusModel,
                   options: Optional[SolverOptions] = None, consistency_weight: float = 0.0) -> FitReport:
    """Unlabelled construction (E1-E4, unit weights, grid-mean Hbar) stopping at the valley bottom."""
    return fit(system, grid, ObjectiveSpec.unlabelled(consistency_weight=consistency_weight), init, options)
