"""
Gragg-Bulirsch-Stoer orbit integrator

Each macro step of size H runs Gragg's modified midpoint rule with
2, 4, 6, ... substeps and extrapolates the results to zero substep size
(Aitken-Neville in h^2). The step is accepted as soon as two successive
diagonal entries agree to the requested tolerance; the next step size
follows from the error of the accepted column.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from torusfit.core.dynamics import HamiltonianSystem
from torusfit.core.errors import IntegrationError

logger = logging.getLogger('torusfit.integrator')

SAFETY = 0.94
TARGET_ERROR = 0.65
MIN_FACTOR = 0.02
MAX_FACTOR = 4.0

# stop(t, y, f) -> True ends the integration after the current step
StopCallback = Callable[[float, np.ndarray, np.ndarray], bool]


@dataclass
class Trajectory:
    """Accepted steps of one integration: times, phase points, energies and Hamilton's vector field."""
    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    energy: np.ndarray
    q_dot: np.ndarray
    p_dot: np.ndarray
    system: Optional[HamiltonianSystem] = field(default=None, repr=False)
    rtol: float = 1e-13
    atol: float = 1e-13

    @property
    def n(self) -> int:
        return self.q.shape[1]

    @property
    def energy_sigma(self) -> float:
        return float(np.std(self.energy))

    @property
    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.energy - self.energy[0])))

    def __len__(self) -> int:
        return self.t.size


class GBSIntegrator:
    """
    Adaptive extrapolation integrator for Hamilton's equations.

    Args:
        system: Hamiltonian to integrate
        rtol: Relative tolerance per step (default 1e-13)
        atol: Absolute tolerance per step
        max_columns: Largest extrapolation column (substeps 2, 4, ..., 2 * max_columns)
        max_step: Upper bound on the macro step size
        max_steps: Budget of macro steps per integration
    """

    def __init__(self, system: HamiltonianSystem, rtol: float = 1e-13, atol: float = 1e-13,
                 max_columns: int = 8, max_step: float = np.inf, max_steps: int = 1_000_000):
        if not rtol > 0 or not atol > 0:
            raise ValueError(f"Integrator tolerances must be > 0, got rtol={rtol}, atol={atol}")
        if max_columns < 2:
            raise ValueError(f"max_columns must be >= 2, got {max_columns}")
        self.system = system
        self.n = system.n
        self.rtol = float(rtol)
        self.atol = float(atol)
        self.max_columns = int(max_columns)
        self.max_step = float(max_step)
        self.max_steps = int(max_steps)
        self._substeps = [2 * (j + 1) for j in range(self.max_columns)]

    def rhs(self, y: np.ndarray) -> np.ndarray:
        q, p = y[:self.n], y[self.n:]
        q_dot, p_dot = self.system.vector_field(q, p)
        return np.concatenate([q_dot, p_dot])

    def _midpoint(self, y: np.ndarray, f0: np.ndarray, big_step: float, substeps: int) -> np.ndarray:
        h = big_step / substeps
        z_prev = y
        z = y + h * f0
        for _ in range(1, substeps):
            z_prev, z = z, z_prev + 2.0 * h * self.rhs(z)
        return 0.5 * (z_prev + z + h * self.rhs(z))

    def _error(self, y: np.ndarray, y_new: np.ndarray, diff: np.ndarray) -> float:
        scale = self.atol + self.rtol * np.maximum(np.abs(y), np.abs(y_new))
        return float(np.sqrt(np.mean((diff / scale) ** 2)))

    def step(self, y: np.ndarray, f0: np.ndarray, big_step: float) -> Tuple[bool, np.ndarray, float]:
        """
        Attempt one macro step.

        Returns:
            (accepted, new state, suggested next step size)
        """
        table: List[np.ndarray] = []
        err = np.inf
        for j, substeps in enumerate(self._substeps):
            row = [self._midpoint(y, f0, big_step, substeps)]
            for k in range(1, j + 1):
                ratio = (substeps / self._substeps[j - k]) ** 2
                row.append(row[k - 1] + (row[k - 1] - table[k - 1]) / (ratio - 1.0))
            if j >= 1:
                err = self._error(y, row[j], row[j] - row[j - 1])
                if err <= 1.0:
                    factor = MAX_FACTOR if err == 0 else SAFETY * (TARGET_ERROR / err) ** (1.0 / (2 * j + 1))
                    return True, row[j], big_step * min(MAX_FACTOR, max(MIN_FACTOR, factor))
            table = row
        j = self.max_columns - 1
        factor = SAFETY * (TARGET_ERROR / err) ** (1.0 / (2 * j + 1)) if np.isfinite(err) else MIN_FACTOR
        return False, y, big_step * min(1.0, max(MIN_FACTOR, factor))

    def advance(self, y: np.ndarray, duration: float) -> np.ndarray:
        """State after ``duration`` (may be negative), without recording a trajectory."""
        if duration == 0:
            return np.array(y, dtype=float)
        sign = 1.0 if duration > 0 else -1.0
        y = np.array(y, dtype=float)
        t = 0.0
        remaining = abs(duration)
        tiny = 1e-15 * remaining
        big_step = min(remaining, self.max_step, self._initial_step(y))
        for _ in range(self.max_steps):
            if remaining <= tiny:
                return y
            h = min(big_step, remaining, self.max_step)
            accepted, y_new, big_step = self.step(y, self.rhs(y), sign * h)
            big_step = abs(big_step)
            if accepted:
                y = y_new
                t += h
                remaining -= h
            elif big_step < 1e-14 * max(1.0, t):
                raise IntegrationError(f"Step size underflow at t={t:.6e} (h={big_step:.3e})")
        raise IntegrationError(f"Step budget of {self.max_steps} exhausted")

    def _initial_step(self, y: np.ndarray) -> float:
        f = self.rhs(y)
        return 0.1 * (1.0 + float(np.linalg.norm(y))) / (float(np.linalg.norm(f)) + 1e-12)

    def integrate(self, q0: np.ndarray, p0: np.ndarray, t_end: float,
                  stop: Optional[StopCallback] = None) -> Trajectory:
        """
        Integrate from t = 0 to ``t_end``, or until ``stop`` returns True.

        Raises:
            IntegrationError: Step size underflow or exhausted step budget
        """
        if not t_end > 0:
            raise ValueError(f"t_end must be > 0, got {t_end}")
        y = np.concatenate([np.atleast_1d(np.asarray(q0, dtype=float)),
                            np.atleast_1d(np.asarray(p0, dtype=float))])
        if y.size != 2 * self.n:
            raise ValueError(f"Initial point has {y.size} entries, system needs {2 * self.n}")
        f = self.rhs(y)
        t = 0.0
        times, states, rates = [t], [y], [f]
        big_step = min(self.max_step, t_end, self._initial_step(y))

        steps = 0
        while t < t_end:
            if steps >= self.max_steps:
                raise IntegrationError(f"Step budget of {self.max_steps} exhausted at t={t:.6e}")
            steps += 1
            h = min(big_step, t_end - t, self.max_step)
            accepted, y_new, big_step = self.step(y, f, h)
            if not accepted:
                if big_step < 1e-14 * max(1.0, t):
                    raise IntegrationError(f"Step size underflow at t={t:.6e} (h={big_step:.3e})")
                continue
            t = t_end if h == t_end - t else t + h
            y = y_new
            f = self.rhs(y)
            times.append(t)
            states.append(y)
            rates.append(f)
            if stop is not None and stop(t, y, f):
                break

        states_arr = np.array(states)
        rates_arr = np.array(rates)
        q = states_arr[:, :self.n]
        p = states_arr[:, self.n:]
        trajectory = Trajectory(
            t=np.array(times), q=q, p=p, energy=self.system.energy(q, p),
            q_dot=rates_arr[:, :self.n], p_dot=rates_arr[:, self.n:],
            system=self.system, rtol=self.rtol, atol=self.atol,
        )
        logger.debug(f"Integrated to t={t:.6g} in {len(trajectory) - 1} steps, "
                     f"energy sigma={trajectory.energy_sigma:.3e}")
        return trajectory


def integrate_orbit(system: HamiltonianSystem, q0: np.ndarray, p0: np.ndarray, t_end: float,
                    tolerance: float = 1e-13, max_step: float = np.inf) -> Trajectory:
    """Integrate one orbit with the GBS method at equal relative and absolute tolerance."""
    if not tolerance > 0:
        raise ValueError(f"tolerance must be > 0, got {tolerance}")
    return GBSIntegrator(system, rtol=tolerance, atol=tolerance, max_step=max_step).integrate(q0, p0, t_end)
