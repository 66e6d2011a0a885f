"""
Torus objective - residuals, frequency solve and analytic Jacobian

For every grid angle theta_m the residual block is

    E1 = (dp/dtheta) omega + dH/dq          (n rows)
    E2 = (dq/dtheta) omega - dH/dp          (n rows)
    E3 = dH/dq . dq/dtheta + dH/dp . dp/dtheta   (n rows, dH/dtheta = 0)
    E4 = H - Hbar                           (1 row)
    E5 = J(theta) - Jbar                    (n rows)

each scaled by sqrt(lambda_i); blocks with lambda_i = 0 are omitted. After
the grid blocks come sqrt(rho)-scaled consistency rows, the real and
imaginary parts of alpha_k - i (k.omega) beta_k for k in X & Y.

Unless frequencies are the label, omega is the least-squares solution of
E1 = E2 = 0 over the grid, computed from a QR factorisation of the stacked
matrix A; its coefficient dependence enters the Jacobian through

    d omega = (A^T A)^-1 [dA^T (b - A omega) + A^T (db - dA omega)].

Hbar and Jbar are grid means unless given as labels; as means they are
differentiated like everything else.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from torusfit.core.dynamics import HamiltonianSystem
from torusfit.core.errors import DegenerateTorusError
from torusfit.core.model import (
    CoefficientMask,
    FourierBasis,
    ThetaGrid,
    TorusModel,
    action_jacobian,
    action_values,
)

logger = logging.getLogger('torusfit.objective')

LABELS = ('unlabelled', 'actions', 'frequencies')
DEFAULT_MAX_CONDITION = 1e12


def _vector(values: Optional[Sequence[float]]) -> Optional[Tuple[float, ...]]:
    return None if values is None else tuple(float(v) for v in values)


@dataclass(frozen=True)
class ObjectiveSpec:
    """
    Which error functions are active and how the torus is labelled.

    Attributes:
        weights: lambda_1..lambda_5; zero switches a term off
        label: unlabelled, actions (needs ``actions`` and lambda_5 > 0),
            or frequencies (needs ``frequencies``; omega is then fixed)
        consistency_weight: rho, weight of the consistency rows (0 disables)
        energy_label: fixed Hbar instead of the grid mean
        max_condition: limit on cond(A^T A) before the torus counts as degenerate
    """
    weights: Tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 0.0)
    label: str = 'unlabelled'
    actions: Optional[Tuple[float, ...]] = None
    frequencies: Optional[Tuple[float, ...]] = None
    consistency_weight: float = 0.0
    energy_label: Optional[float] = None
    max_condition: float = DEFAULT_MAX_CONDITION

    def __post_init__(self):
        object.__setattr__(self, 'weights', tuple(float(w) for w in self.weights))
        object.__setattr__(self, 'actions', _vector(self.actions))
        object.__setattr__(self, 'frequencies', _vector(self.frequencies))
        if len(self.weights) != 5:
            raise ValueError(f"Invalid objective field 'weights': expected 5 values, got {len(self.weights)}")
        if any(not np.isfinite(w) or w < 0 for w in self.weights):
            raise ValueError(f"Invalid objective field 'weights': values must be finite and >= 0, got {self.weights}")
        if not any(self.weights):
            raise ValueError("Invalid objective field 'weights': at least one error function must be active")
        if self.label not in LABELS:
            raise ValueError(f"Invalid objective field 'label': '{self.label}' (expected one of {', '.join(LABELS)})")
        if self.label == 'actions':
            if self.actions is None:
                raise ValueError("Invalid objective field 'actions': the actions label needs an action vector")
            if self.weights[4] <= 0:
                raise ValueError("Invalid objective field 'weights': the actions label needs lambda_5 > 0")
        if self.label == 'frequencies' and self.frequencies is None:
            raise ValueError("Invalid objective field 'frequencies': the frequencies label needs a frequency vector")
        if self.consistency_weight < 0 or not np.isfinite(self.consistency_weight):
            raise ValueError(f"Invalid objective field 'consistency_weight': must be >= 0, got {self.consistency_weight}")
        if self.max_condition <= 0:
            raise ValueError(f"Invalid objective field 'max_condition': must be > 0, got {self.max_condition}")

    @classmethod
    def unlabelled(cls, consistency_weight: float = 0.0, **kwargs) -> 'ObjectiveSpec':
        """E1-E4 with unit weights, grid-mean Hbar."""
        return cls(weights=(1.0, 1.0, 1.0, 1.0, 0.0), consistency_weight=consistency_weight, **kwargs)

    @classmethod
    def action_labelled(cls, actions: Sequence[float], consistency_weight: float = 0.0,
                        **kwargs) -> 'ObjectiveSpec':
        """E1-E5 with unit weights and Jbar fixed to ``actions``."""
        kwargs.setdefault('weights', (1.0, 1.0, 1.0, 1.0, 1.0))
        return cls(label='actions', actions=actions, consistency_weight=consistency_weight, **kwargs)

    @classmethod
    def frequency_labelled(cls, frequencies: Sequence[float], **kwargs) -> 'ObjectiveSpec':
        """E1 and E2 with omega fixed (the one-dimensional protocol)."""
        kwargs.setdefault('weights', (1.0, 1.0, 0.0, 0.0, 0.0))
        return cls(label='frequencies', frequencies=frequencies, **kwargs)

    @property
    def solves_frequencies(self) -> bool:
        return self.label != 'frequencies'

    def with_actions(self, actions: Sequence[float]) -> 'ObjectiveSpec':
        return ObjectiveSpec(**{**asdict(self), 'actions': actions})

    def with_consistency(self, rho: float) -> 'ObjectiveSpec':
        return ObjectiveSpec(**{**asdict(self), 'consistency_weight': rho})

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for key in ('weights', 'actions', 'frequencies'):
            if data[key] is not None:
                data[key] = list(data[key])
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ObjectiveSpec':
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def probing_consistency_weight(mask: CoefficientMask) -> float:
    """rho = 0.01 / #C with C = X & Y; zero when C is empty."""
    count = len(mask.common_indices)
    return 0.01 / count if count else 0.0


@dataclass(frozen=True)
class FrequencySolve:
    """Stacked flow equations A omega = b (rows from dp/dtheta then dq/dtheta per point)."""
    matrix: np.ndarray
    rhs: np.ndarray
    omega: np.ndarray
    r_factor: np.ndarray

    @property
    def residual(self) -> np.ndarray:
        return self.matrix @ self.omega - self.rhs


def _solve_stacked(matrix: np.ndarray, rhs: np.ndarray, max_condition: float) -> FrequencySolve:
    if not (np.all(np.isfinite(matrix)) and np.all(np.isfinite(rhs))):
        raise DegenerateTorusError("Frequency equations contain non-finite entries")
    q_factor, r_factor = linalg.qr(matrix, mode='economic')
    with np.errstate(divide='ignore', invalid='ignore'):
        cond = np.linalg.cond(r_factor)
    if not np.isfinite(cond) or cond ** 2 > max_condition:
        raise DegenerateTorusError(
            f"Frequency normal matrix is degenerate (condition {cond ** 2:.3e} > {max_condition:.1e})"
        )
    omega = linalg.solve_triangular(r_factor, q_factor.T @ rhs)
    return FrequencySolve(matrix=matrix, rhs=rhs, omega=omega, r_factor=r_factor)


def frequency_system(model: TorusModel, grid: ThetaGrid, system: HamiltonianSystem,
                     max_condition: float = DEFAULT_MAX_CONDITION) -> FrequencySolve:
    """Assemble and solve the stacked flow equations of a model on a grid."""
    basis = FourierBasis(model.mask, grid.thetas)
    q, p = basis.evaluate(model.coefficients)
    dq, dp = basis.derivatives(model.coefficients)
    matrix = np.concatenate([dp, dq], axis=1).reshape(-1, model.n)
    rhs = np.concatenate([-system.grad_q(q, p), system.grad_p(q, p)], axis=1).reshape(-1)
    return _solve_stacked(matrix, rhs, max_condition)


def solve_frequencies(model: TorusModel, grid: ThetaGrid, system: HamiltonianSystem,
                      max_condition: float = DEFAULT_MAX_CONDITION) -> np.ndarray:
    """Least-squares omega of the model's flow equations; raises DegenerateTorusError."""
    return frequency_system(model, grid, system, max_condition).omega


def sigma_H(model: TorusModel, grid: ThetaGrid, system: HamiltonianSystem) -> float:
    """Population standard deviation of H over the grid."""
    q, p = model.evaluate(grid.thetas)
    return float(np.std(system.energy(q, p)))


@dataclass
class Diagnostics:
    """Objective value and torus properties of one model."""
    objective: float
    sigma: float
    omega: np.ndarray
    actions: np.ndarray
    energy: float
    consistency: float
    grid_size: int
    degenerate: bool = False

    @property
    def per_point(self) -> float:
        return self.objective / self.grid_size


@dataclass
class _State:
    """Everything evaluated at one coefficient vector."""
    q: np.ndarray
    p: np.ndarray
    dq: np.ndarray
    dp: np.ndarray
    energy: np.ndarray
    hq: np.ndarray
    hp: np.ndarray
    omega: np.ndarray
    solve: Optional[FrequencySolve] = None
    actions: Optional[np.ndarray] = None


class TorusObjective:
    """
    Residual map x -> R(x) of one (system, grid, spec, mask) combination.

    Exposes the callbacks the least-squares solver needs:
    ``residuals(x)`` and ``residuals_and_jacobian(x)``.
    """

    def __init__(self, system: HamiltonianSystem, grid: ThetaGrid, spec: ObjectiveSpec,
                 mask: CoefficientMask):
        if not system.n == grid.n == mask.n:
            raise ValueError(
                f"Dimension mismatch: system n={system.n}, grid n={grid.n}, model n={mask.n}"
            )
        for name in ('actions', 'frequencies'):
            value = getattr(spec, name)
            if value is not None and len(value) != mask.n:
                raise ValueError(f"Invalid objective field '{name}': expected {mask.n} values, got {len(value)}")
        self.system = system
        self.grid = grid
        self.spec = spec
        self.mask = mask
        self.basis = FourierBasis(mask, grid.thetas)
        self._dq_dx, self._dp_dx = self.basis.value_jacobians()
        self._ddq_dx, self._ddp_dx = self.basis.derivative_jacobians()
        self._sqrt_weights = np.sqrt(np.array(spec.weights))
        self._consistency = mask.consistency_operator if spec.consistency_weight > 0 else None

    @property
    def grid_size(self) -> int:
        return self.grid.size

    @property
    def labelled(self) -> bool:
        return self.spec.label != 'unlabelled'

    def _state(self, x: np.ndarray, need_actions: bool) -> _State:
        q, p = self.basis.evaluate(x)
        dq, dp = self.basis.derivatives(x)
        energy = self.system.energy(q, p)
        hq = self.system.grad_q(q, p)
        hp = self.system.grad_p(q, p)
        solve = None
        if self.spec.solves_frequencies:
            matrix = np.concatenate([dp, dq], axis=1).reshape(-1, self.mask.n)
            rhs = np.concatenate([-hq, hp], axis=1).reshape(-1)
            solve = _solve_stacked(matrix, rhs, self.spec.max_condition)
            omega = solve.omega
        else:
            omega = np.array(self.spec.frequencies)
        actions = action_values(self.mask, x, self.grid.thetas) if need_actions else None
        return _State(q=q, p=p, dq=dq, dp=dp, energy=energy, hq=hq, hp=hp, omega=omega,
                      solve=solve, actions=actions)

    def _energy_reference(self, state: _State) -> float:
        if self.spec.energy_label is not None:
            return float(self.spec.energy_label)
        return float(np.mean(state.energy))

    def _action_reference(self, state: _State) -> np.ndarray:
        if self.spec.label == 'actions':
            return np.array(self.spec.actions)
        return np.mean(state.actions, axis=0)

    def _blocks(self, state: _State) -> np.ndarray:
        w = self._sqrt_weights
        omega = state.omega
        blocks = []
        if w[0]:
            blocks.append(w[0] * (np.einsum('mjh,h->mj', state.dp, omega) + state.hq))
        if w[1]:
            blocks.append(w[1] * (np.einsum('mjh,h->mj', state.dq, omega) - state.hp))
        if w[2]:
            e3 = np.einsum('mj,mjh->mh', state.hq, state.dq) + np.einsum('mj,mjh->mh', state.hp, state.dp)
            blocks.append(w[2] * e3)
        if w[3]:
            blocks.append(w[3] * (state.energy - self._energy_reference(state))[:, None])
        if w[4]:
            blocks.append(w[4] * (state.actions - self._action_reference(state)))
        return np.concatenate(blocks, axis=1)

    def _consistency_rows(self, x: np.ndarray, omega: np.ndarray) -> np.ndarray:
        if self._consistency is None:
            return np.zeros(0)
        return np.sqrt(self.spec.consistency_weight) * self._consistency.residuals(x, omega)

    def residuals(self, x: np.ndarray) -> np.ndarray:
        """Residual vector; raises DegenerateTorusError when omega cannot be solved."""
        state = self._state(x, need_actions=bool(self._sqrt_weights[4]))
        return np.concatenate([self._blocks(state).reshape(-1), self._consistency_rows(x, state.omega)])

    def _hamiltonian_jacobians(self, state: _State) -> Tuple[np.ndarray, np.ndarray]:
        """d(dH/dq)/dx and d(dH/dp)/dx, shape (M, n, S)."""
        hqq = self.system.hess_qq(state.q, state.p)
        hqp = self.system.hess_qp(state.q, state.p)
        hpp = self.system.hess_pp(state.q, state.p)
        dhq = np.einsum('mji,mis->mjs', hqq, self._dq_dx) + np.einsum('mji,mis->mjs', hqp, self._dp_dx)
        dhp = np.einsum('mij,mis->mjs', hqp, self._dq_dx) + np.einsum('mji,mis->mjs', hpp, self._dp_dx)
        return dhq, dhp

    def _omega_jacobian(self, state: _State, dhq: np.ndarray, dhp: np.ndarray) -> np.ndarray:
        """d omega / dx, shape (n, S); zero when omega is a label."""
        n, size = self.mask.n, self.mask.size
        if state.solve is None:
            return np.zeros((n, size))
        m = self.grid.size
        matrix = state.solve.matrix.reshape(m, 2 * n, n)
        residual = (state.solve.rhs - state.solve.matrix @ state.omega).reshape(m, 2 * n)
        d_matrix = np.concatenate([self._ddp_dx, self._ddq_dx], axis=1)
        d_rhs = np.concatenate([-dhq, dhp], axis=1)
        d_flow = d_rhs - np.einsum('mrgs,g->mrs', d_matrix, state.omega)
        rhs = np.einsum('mrhs,mr->hs', d_matrix, residual) + np.einsum('mrh,mrs->hs', matrix, d_flow)
        return linalg.cho_solve((state.solve.r_factor, False), rhs)

    def residuals_and_jacobian(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Residuals and their analytic Jacobian d R / d x."""
        w = self._sqrt_weights
        state = self._state(x, need_actions=bool(w[4]))
        dhq, dhp = self._hamiltonian_jacobians(state)
        d_omega = self._omega_jacobian(state, dhq, dhp)
        omega = state.omega

        blocks = []
        if w[0]:
            d_e1 = (np.einsum('mjhs,h->mjs', self._ddp_dx, omega)
                    + np.einsum('mjh,hs->mjs', state.dp, d_omega) + dhq)
            blocks.append(w[0] * d_e1)
        if w[1]:
            d_e2 = (np.einsum('mjhs,h->mjs', self._ddq_dx, omega)
                    + np.einsum('mjh,hs->mjs', state.dq, d_omega) - dhp)
            blocks.append(w[1] * d_e2)
        if w[2]:
            d_e3 = (np.einsum('mjs,mjh->mhs', dhq, state.dq)
                    + np.einsum('mj,mjhs->mhs', state.hq, self._ddq_dx)
                    + np.einsum('mjs,mjh->mhs', dhp, state.dp)
                    + np.einsum('mj,mjhs->mhs', state.hp, self._ddp_dx))
            blocks.append(w[2] * d_e3)
        if w[3]:
            d_h = np.einsum('mj,mjs->ms', state.hq, self._dq_dx) + np.einsum('mj,mjs->ms', state.hp, self._dp_dx)
            if self.spec.energy_label is None:
                d_h = d_h - d_h.mean(axis=0)
            blocks.append(w[3] * d_h[:, None, :])
        if w[4]:
            d_j = action_jacobian(self.mask, x, self.grid.thetas)
            if self.spec.label != 'actions':
                d_j = d_j - d_j.mean(axis=0)
            blocks.append(w[4] * d_j)

        jac = np.concatenate(blocks, axis=1).reshape(-1, self.mask.size)
        res = self._blocks(state).reshape(-1)
        if self._consistency is not None:
            scale = np.sqrt(self.spec.consistency_weight)
            rows = scale * self._consistency.residuals(x, omega)
            d_rows = scale * (self._consistency.matrix(omega)
                              + self._consistency.omega_columns(x) @ d_omega)
            res = np.concatenate([res, rows])
            jac = np.concatenate([jac, d_rows], axis=0)
        return res, jac

    def diagnostics(self, x: np.ndarray) -> Diagnostics:
        """Objective, sigma(H), omega, mean J, mean H and the consistency metric at x."""
        try:
            state = self._state(x, need_actions=True)
        except DegenerateTorusError as e:
            q, p = self.basis.evaluate(x)
            energy = self.system.energy(q, p)
            actions = action_values(self.mask, x, self.grid.thetas)
            logger.debug(f"Diagnostics on a degenerate torus: {e}")
            nan = np.full(self.mask.n, np.nan)
            return Diagnostics(objective=float('inf'), sigma=float(np.std(energy)), omega=nan,
                               actions=actions.mean(axis=0), energy=float(energy.mean()),
                               consistency=float('nan'), grid_size=self.grid.size, degenerate=True)
        residual = np.concatenate([self._blocks(state).reshape(-1), self._consistency_rows(x, state.omega)])
        rows = self.mask.consistency_operator.residuals(x, state.omega)
        energy = state.energy
        return Diagnostics(
            objective=float(residual @ residual),
            sigma=float(np.std(energy)),
            omega=state.omega,
            actions=state.actions.mean(axis=0),
            energy=float(energy.mean()),
            consistency=float(rows @ rows),
            grid_size=self.grid.size,
        )


def residuals(model: TorusModel, grid: ThetaGrid, system: HamiltonianSystem,
              spec: ObjectiveSpec) -> np.ndarray:
    return TorusObjective(system, grid, spec, model.mask).residuals(model.coefficients)


def jacobian(model: TorusModel, grid: ThetaGrid, system: HamiltonianSystem,
             spec: ObjectiveSpec) -> np.ndarray:
    return TorusObjective(system, grid, spec, model.mask).residuals_and_jacobian(model.coefficients)[1]


def evaluate_diagnostics(model: TorusModel, grid: ThetaGrid, system: HamiltonianSystem,
                         spec: ObjectiveSpec) -> Diagnostics:
    return TorusObjective(system, grid, spec, model.mask).diagnostics(model.coefficients)
