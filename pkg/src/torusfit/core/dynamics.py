"""
Hamiltonian systems

All systems are kinetic-plus-potential, H = |p|^2 / 2 + Phi(q), and are
evaluated on arrays of phase points with shape (..., n). Second
derivatives are analytic everywhere; the objective Jacobian needs them.

Systems:
- harmonic(frequencies): Phi = sum_i w_i^2 q_i^2 / 2
- isochrone(c1, c2), 1D: Phi = -c1 / (c2 + sqrt(c2^2 + q^2))
- logarithmic(c1, c2), 2D: Phi = ln(q1^2 + q2^2/c1^2 + c2^2) / 2
- pps(c1, c2, c3), 2D: perfect prolate spheroid, a Staeckel potential in
  elliptic coordinates u with u1 + u2 = -c1 - c2 + |q|^2 and
  u1 u2 = c1 c2 - c2 q1^2 - c1 q2^2
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, Sequence, Tuple

import numpy as np

logger = logging.getLogger('torusfit.dynamics')

SYSTEMS = ('harmonic', 'isochrone', 'logarithmic', 'pps')

# Default parameters per system
DEFAULT_PARAMETERS: Dict[str, Dict[str, Any]] = {
    'harmonic': {'frequencies': [1.0, 1.0]},
    'isochrone': {'c1': 1.0, 'c2': 0.15},
    'logarithmic': {'c1': 0.9, 'c2': 1.0},
    'pps': {'c1': -1.0, 'c2': -0.25, 'c3': 1.0},
}

DISCRIMINANT_TOLERANCE = 1e-14


class HamiltonianSystem(ABC):
    """Value, gradients and Hessian blocks of H(q, p)."""

    name: str = 'system'
    n: int = 0

    @abstractmethod
    def energy(self, q: np.ndarray, p: np.ndarray) -> np.ndarray:
        """H, shape (...)."""

    @abstractmethod
    def grad_q(self, q: np.ndarray, p: np.ndarray) -> np.ndarray:
        """dH/dq, shape (..., n)."""

    @abstractmethod
    def grad_p(self, q: np.ndarray, p: np.ndarray) -> np.ndarray:
        """dH/dp, shape (..., n)."""

    @abstractmethod
    def hess_qq(self, q: np.ndarray, p: np.ndarray) -> np.ndarray:
        """d2H/dq_i dq_j, shape (..., n, n)."""

    @abstractmethod
    def hess_qp(self, q: np.ndarray, p: np.ndarray) -> np.ndarray:
        """[..., i, j] = d2H/dq_i dp_j."""

    @abstractmethod
    def hess_pp(self, q: np.ndarray, p: np.ndarray) -> np.ndarray:
        """d2H/dp_i dp_j, shape (..., n, n)."""

    @abstractmethod
    def params(self) -> Dict[str, Any]:
        """Parameter record for reports and configs."""

    def vector_field(self, q: np.ndarray, p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Hamilton's equations: (dq/dt, dp/dt) = (dH/dp, -dH/dq)."""
        return self.grad_p(q, p), -self.grad_q(q, p)

    def describe(self) -> Dict[str, Any]:
        return {'name': self.name, 'n': self.n, 'params': self.params()}


class SeparableSystem(HamiltonianSystem):
    """H = |p|^2 / 2 + Phi(q)."""

    @abstractmethod
    def potential(self, q: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def potential_gradient(self, q: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def potential_hessian(self, q: np.ndarray) -> np.ndarray:
        ...

    def energy(self, q, p):
        p = np.asarray(p, dtype=float)
        return 0.5 * np.sum(p * p, axis=-1) + self.potential(np.asarray(q, dtype=float))

    def grad_q(self, q, p):
        return self.potential_gradient(np.asarray(q, dtype=float))

    def grad_p(self, q, p):
        return np.array(p, dtype=float)

    def hess_qq(self, q, p):
        return self.potential_hessian(np.asarray(q, dtype=float))

    def hess_qp(self, q, p):
        shape = np.shape(q)[:-1] + (self.n, self.n)
        return np.zeros(shape)

    def hess_pp(self, q, p):
        shape = np.shape(q)[:-1] + (self.n, self.n)
        return np.broadcast_to(np.eye(self.n), shape).copy()


class HarmonicSystem(SeparableSystem):
    """Uncoupled oscillators; the integrable reference system."""

    name = 'harmonic'

    def __init__(self, frequencies: Sequence[float] = (1.0, 1.0)):
        self.frequencies = np.array([float(w) for w in frequencies])
        if self.frequencies.ndim != 1 or self.frequencies.size not in (1, 2):
            raise ValueError("Invalid system parameter 'frequencies': expected 1 or 2 values")
        if np.any(self.frequencies <= 0):
            raise ValueError("Invalid system parameter 'frequencies': all values must be > 0")
        self.n = int(self.frequencies.size)

    def potential(self, q):
        return 0.5 * np.sum((self.frequencies * q) ** 2, axis=-1)

    def potential_gradient(self, q):
        return self.frequencies ** 2 * q

    def potential_hessian(self, q):
        shape = np.shape(q)[:-1] + (self.n, self.n)
        return np.broadcast_to(np.diag(self.frequencies ** 2), shape).copy()

    def params(self):
        return {'frequencies': self.frequencies.tolist()}


class IsochroneSystem(SeparableSystem):
    """
    One-dimensional isochrone.

    Phi'(q) = c1 q / (s (c2 + s)^2) with s = sqrt(c2^2 + q^2). Converged tori
    obey H = -(2 c1 omega)^(2/3) / 2.
    """

    name = 'isochrone'
    n = 1

    def __init__(self, c1: float = 1.0, c2: float = 0.15):
        if c1 <= 0:
            raise ValueError(f"Invalid system parameter 'c1': isochrone needs c1 > 0, got {c1}")
        if c2 <= 0:
            raise ValueError(f"Invalid system parameter 'c2': isochrone needs c2 > 0, got {c2}")
        self.c1 = float(c1)
        self.c2 = float(c2)

    def _s(self, q):
        return np.sqrt(self.c2 ** 2 + q[..., 0] ** 2)

    def potential(self, q):
        return -self.c1 / (self.c2 + self._s(q))

    def potential_gradient(self, q):
        s = self._s(q)
        return (self.c1 * q[..., 0] / (s * (self.c2 + s) ** 2))[..., None]

    def potential_hessian(self, q):
        x = q[..., 0]
        s = self._s(q)
        c2 = self.c2
        value = self.c1 / (s * (c2 + s) ** 2) * (1.0 - x ** 2 * (c2 + 3.0 * s) / (s ** 2 * (c2 + s)))
        return value[..., None, None]

    def energy_for_frequency(self, omega: float) -> float:
        return -0.5 * (2.0 * self.c1 * omega) ** (2.0 / 3.0)

    def params(self):
        return {'c1': self.c1, 'c2': self.c2}


class LogarithmicSystem(SeparableSystem):
    """Near-integrable logarithmic potential."""

    name = 'logarithmic'
    n = 2

    def __init__(self, c1: float = 0.9, c2: float = 1.0):
        if c1 <= 0:
            raise ValueError(f"Invalid system parameter 'c1': logarithmic needs c1 > 0, got {c1}")
        if c2 <= 0:
            raise ValueError(f"Invalid system parameter 'c2': logarithmic needs c2 > 0, got {c2}")
        self.c1 = float(c1)
        self.c2 = float(c2)

    def _d(self, q):
        return q[..., 0] ** 2 + q[..., 1] ** 2 / self.c1 ** 2 + self.c2 ** 2

    def potential(self, q):
        return 0.5 * np.log(self._d(q))

    def potential_gradient(self, q):
        d = self._d(q)
        return np.stack([q[..., 0] / d, q[..., 1] / (self.c1 ** 2 * d)], axis=-1)

    def potential_hessian(self, q):
        d = self._d(q)
        x, y = q[..., 0], q[..., 1]
        e = self.c1 ** 2
        hxx = 1.0 / d - 2.0 * x ** 2 / d ** 2
        hxy = -2.0 * x * y / (e * d ** 2)
        hyy = 1.0 / (e * d) - 2.0 * y ** 2 / (e ** 2 * d ** 2)
        return np.stack([np.stack([hxx, hxy], axis=-1), np.stack([hxy, hyy], axis=-1)], axis=-2)

    def params(self):
        return {'c1': self.c1, 'c2': self.c2}


@dataclass(frozen=True)
class EllipticCoords:
    """Elliptic coordinates with u2 <= u1 (length^2 units)."""
    u1: np.ndarray
    u2: np.ndarray


def _discriminant(q: np.ndarray, a: float, b: float) -> np.ndarray:
    """(u1 - u2)^2 written as a sum of squares: (a - b + x - y)^2 + 4xy with x = q1^2, y = q2^2."""
    x = q[..., 0] ** 2
    y = q[..., 1] ** 2
    return (a - b + x - y) ** 2 + 4.0 * x * y


def elliptic_coords(q: np.ndarray, c1: float, c2: float) -> EllipticCoords:
    """
    Map Cartesian q to elliptic coordinates (u1, u2).

    u1, u2 are the roots of t^2 - (sum) t + (product) with
    sum = -c1 - c2 + |q|^2 and product = c1 c2 - c2 q1^2 - c1 q2^2.

    Raises:
        ValueError: Invalid parameters, or a discriminant below -1e-14
    """
    if not c1 < c2 < 0:
        raise ValueError(f"Elliptic coordinates need c1 < c2 < 0, got c1={c1}, c2={c2}")
    q = np.asarray(q, dtype=float)
    x = q[..., 0] ** 2
    y = q[..., 1] ** 2
    total = -c1 - c2 + x + y
    product = c1 * c2 - c2 * x - c1 * y
    disc = _discriminant(q, -c1, -c2)
    if np.any(disc < -DISCRIMINANT_TOLERANCE):
        raise ValueError(f"Negative elliptic discriminant {float(np.min(disc)):.3e}")
    disc = np.where(np.abs(disc) < DISCRIMINANT_TOLERANCE, 0.0, disc)
    root = np.sqrt(disc)
    u1 = 0.5 * (total + root)
    # product / u1 keeps u2 accurate when it is small; u1 >= -c1 > 0
    u2 = product / u1
    return EllipticCoords(u1=u1, u2=u2)


# Series of G(z) = z T(z), T(z) = arctan(sqrt z)/sqrt z: G = sum_{n>=1} (-1)^(n+1) z^n / (2n - 1)
_SERIES_TERMS = 40
_SERIES_RADIUS = 0.25
_SMALL_Z = 1e-3


def _series_coefficient(n: int) -> float:
    return (-1.0) ** (n + 1) / (2 * n - 1)


def _t_function(z: np.ndarray) -> np.ndarray:
    """T(z) = arctan(sqrt z)/sqrt z for z > 0, artanh(sqrt(-z))/sqrt(-z) for z < 0."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < _SMALL_Z
    pos = (z > 0) & ~small
    neg = (z < 0) & ~small
    zs = z[small]
    out[small] = 1.0 - zs / 3.0 + zs ** 2 / 5.0 - zs ** 3 / 7.0 + zs ** 4 / 9.0 - zs ** 5 / 11.0
    r = np.sqrt(z[pos])
    out[pos] = np.arctan(r) / r
    r = np.sqrt(-z[neg])
    out[neg] = np.arctanh(r) / r
    return out


def _g_derivatives(z: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """G, G', G'' of G(z) = z T(z)."""
    z = np.asarray(z, dtype=float)
    t = _t_function(z)
    g = z * t
    g1 = np.empty_like(z)
    g2 = np.empty_like(z)
    small = np.abs(z) < _SMALL_Z
    zs = z[small]
    g1[small] = 1.0 - 2.0 * zs / 3.0 + 3.0 * zs ** 2 / 5.0 - 4.0 * zs ** 3 / 7.0 + 5.0 * zs ** 4 / 9.0
    g2[small] = -2.0 / 3.0 + 6.0 * zs / 5.0 - 12.0 * zs ** 2 / 7.0 + 20.0 * zs ** 3 / 9.0 - 30.0 * zs ** 4 / 11.0
    big = ~small
    zb, tb = z[big], t[big]
    g1[big] = 0.5 * tb + 0.5 / (1.0 + zb)
    g2[big] = (1.0 - (1.0 + zb) * tb) / (4.0 * zb * (1.0 + zb)) - 0.5 / (1.0 + zb) ** 2
    return g, g1, g2


def _divided_difference_series(s: np.ndarray, p: np.ndarray) -> Tuple[np.ndarray, ...]:
    """
    D = (G(z1) - G(z2)) / (z1 - z2) and its (s, p) derivatives from the series

        D = sum_n c_n h_{n-1},  h_k = s h_{k-1} - p h_{k-2}

    with s = z1 + z2, p = z1 z2 (complete homogeneous symmetric polynomials).
    """
    zero = np.zeros_like(s)
    h_prev, h = zero, np.ones_like(s)
    hs_prev, hs = zero, zero.copy()
    hp_prev, hp = zero, zero.copy()
    hss_prev, hss = zero, zero.copy()
    hsp_prev, hsp = zero, zero.copy()
    hpp_prev, hpp = zero, zero.copy()
    d = np.zeros_like(s)
    ds, dp, dss, dsp, dpp = (np.zeros_like(s) for _ in range(5))
    for n in range(1, _SERIES_TERMS + 1):
        c = _series_coefficient(n)
        d += c * h
        ds += c * hs
        dp += c * hp
        dss += c * hss
        dsp += c * hsp
        dpp += c * hpp
        h_next = s * h - p * h_prev
        hs_next = h + s * hs - p * hs_prev
        hp_next = s * hp - h_prev - p * hp_prev
        hss_next = 2.0 * hs + s * hss - p * hss_prev
        hsp_next = hp + s * hsp - hs_prev - p * hsp_prev
        hpp_next = s * hpp - 2.0 * hp_prev - p * hpp_prev
        h_prev, h = h, h_next
        hs_prev, hs = hs, hs_next
        hp_prev, hp = hp, hp_next
        hss_prev, hss = hss, hss_next
        hsp_prev, hsp = hsp, hsp_next
        hpp_prev, hpp = hpp, hpp_next
    return d, ds, dp, dss, dsp, dpp


def _divided_difference_closed(z1: np.ndarray, z2: np.ndarray) -> Tuple[np.ndarray, ...]:
    """Same quantities as the series from closed forms; needs z1 - z2 bounded away from 0."""
    delta = z1 - z2
    g1, g1p, g1pp = _g_derivatives(z1)
    g2, g2p, g2pp = _g_derivatives(z2)
    d = (g1 - g2) / delta
    d1 = (g1p - d) / delta
    d2 = (d - g2p) / delta
    d11 = (g1pp - 2.0 * d1) / delta
    d22 = (2.0 * d2 - g2pp) / delta
    d12 = (d1 - d2) / delta

    z1s, z2s = z1 / delta, -z2 / delta
    z1p, z2p = -1.0 / delta, 1.0 / delta
    cube = delta ** 3
    z1ss = -2.0 * z1 * z2 / cube
    z1sp = (z1 + z2) / cube
    z1pp = -2.0 / cube
    spread = d1 - d2

    ds = d1 * z1s + d2 * z2s
    dp = d1 * z1p + d2 * z2p
    dss = d11 * z1s ** 2 + 2.0 * d12 * z1s * z2s + d22 * z2s ** 2 + spread * z1ss
    dsp = d11 * z1s * z1p + d12 * (z1s * z2p + z2s * z1p) + d22 * z2s * z2p + spread * z1sp
    dpp = d11 * z1p ** 2 + 2.0 * d12 * z1p * z2p + d22 * z2p ** 2 + spread * z1pp
    return d, ds, dp, dss, dsp, dpp


class PPSSystem(SeparableSystem):
    """
    Perfect prolate spheroid.

    With a = -c1, b = -c2 and z = (u + c1)/(-c1), the potential is

        Phi = 2 pi c2 c3 * (G(z1) - G(z2)) / (z1 - z2)

    where G(z) = sqrt(z) arctan(sqrt z) for z >= 0 and
    -sqrt(-z) artanh(sqrt(-z)) for z < 0. The divided difference is
    evaluated in the symmetric variables s = z1 + z2 = (b - a + |q|^2)/a and
    p = z1 z2 = -(a - b) q1^2 / a^2, which are polynomial in q. Near the
    foci and the origin (max |z| < 0.25) a power series in (s, p) is used,
    elsewhere the closed form.
    """

    name = 'pps'
    n = 2

    def __init__(self, c1: float = -1.0, c2: float = -0.25, c3: float = 1.0,
                 finite_difference: bool = False):
        if not c1 < c2:
            raise ValueError(f"Invalid system parameter 'c1': pps needs c1 < c2, got c1={c1}, c2={c2}")
        if not c2 < 0:
            raise ValueError(f"Invalid system parameter 'c2': pps needs c2 < 0, got {c2}")
        if c3 <= 0:
            raise ValueError(f"Invalid system parameter 'c3': pps needs c3 > 0, got {c3}")
        self.c1 = float(c1)
        self.c2 = float(c2)
        self.c3 = float(c3)
        self.finite_difference = finite_difference
        self._a = -self.c1
        self._b = -self.c2
        self._scale = 2.0 * np.pi * self.c2 * self.c3

    def _symmetric(self, q):
        a, b = self._a, self._b
        x = q[..., 0] ** 2
        y = q[..., 1] ** 2
        s = (b - a + x + y) / a
        p = -(a - b) * x / a ** 2
        return s, p

    def _roots(self, q):
        """z1 >= 0 >= z2, computed without cancellation."""
        s, p = self._symmetric(q)
        disc = _discriminant(q, self._a, self._b)
        disc = np.where(np.abs(disc) < DISCRIMINANT_TOLERANCE, 0.0, disc)
        delta = np.sqrt(disc) / self._a
        big = np.where(s >= 0, 0.5 * (s + delta), 0.5 * (s - delta))
        safe = np.where(big == 0.0, 1.0, big)
        other = np.where(big == 0.0, 0.0, p / safe)
        z1 = np.where(s >= 0, big, other)
        z2 = np.where(s >= 0, other, big)
        return s, p, z1, z2

    def _divided_difference(self, q):
        q = np.asarray(q, dtype=float)
        s, p, z1, z2 = self._roots(q)
        s, p, z1, z2 = (np.atleast_1d(v) for v in (s, p, z1, z2))
        series = np.maximum(np.abs(z1), np.abs(z2)) < _SERIES_RADIUS
        parts = [np.empty_like(s) for _ in range(6)]
        if np.any(series):
            for out, value in zip(parts, _divided_difference_series(s[series], p[series])):
                out[series] = value
        closed = ~series
        if np.any(closed):
            for out, value in zip(parts, _divided_difference_closed(z1[closed], z2[closed])):
                out[closed] = value
        shape = np.shape(q)[:-1]
        return [part.reshape(shape) for part in parts]

    def elliptic(self, q: np.ndarray) -> EllipticCoords:
        return elliptic_coords(q, self.c1, self.c2)

    def potential(self, q):
        d = self._divided_difference(q)[0]
        return self._scale * d

    def potential_gradient(self, q):
        q = np.asarray(q, dtype=float)
        if self.finite_difference:
            return self._finite_difference_gradient(q)
        _, ds, dp, _, _, _ = self._divided_difference(q)
        a, b = self._a, self._b
        gx = ds * 2.0 * q[..., 0] / a + dp * (-2.0 * (a - b) * q[..., 0] / a ** 2)
        gy = ds * 2.0 * q[..., 1] / a
        return self._scale * np.stack([gx, gy], axis=-1)

    def potential_hessian(self, q):
        q = np.asarray(q, dtype=float)
        _, ds, dp, dss, dsp, dpp = self._divided_difference(q)
        a, b = self._a, self._b
        sx, sy = 2.0 * q[..., 0] / a, 2.0 * q[..., 1] / a
        px = -2.0 * (a - b) * q[..., 0] / a ** 2
        hxx = dss * sx * sx + 2.0 * dsp * sx * px + dpp * px * px + ds * 2.0 / a + dp * (-2.0 * (a - b) / a ** 2)
        hxy = dss * sx * sy + dsp * px * sy
        hyy = dss * sy * sy + ds * 2.0 / a
        hess = np.stack([np.stack([hxx, hxy], axis=-1), np.stack([hxy, hyy], axis=-1)], axis=-2)
        return self._scale * hess

    def _finite_difference_gradient(self, q, step: float = 1e-6):
        grad = np.empty_like(q)
        for i in range(self.n):
            h = step * (1.0 + np.abs(q[..., i]))
            e = np.zeros(self.n)
            e[i] = 1.0
            plus = self.potential(q + h[..., None] * e)
            minus = self.potential(q - h[..., None] * e)
            grad[..., i] = (plus - minus) / (2.0 * h)
        return grad

    def params(self):
        return {'c1': self.c1, 'c2': self.c2, 'c3': self.c3}


def harmonic(frequencies: Sequence[float] = (1.0, 1.0)) -> HarmonicSystem:
    return HarmonicSystem(frequencies)


def isochrone(c1: float = 1.0, c2: float = 0.15) -> IsochroneSystem:
    return IsochroneSystem(c1, c2)


def logarithmic(c1: float = 0.9, c2: float = 1.0) -> LogarithmicSystem:
    return LogarithmicSystem(c1, c2)


def pps(c1: float = -1.0, c2: float = -0.25, c3: float = 1.0) -> PPSSystem:
    return PPSSystem(c1, c2, c3)


def from_config(name: str, params: Dict[str, Any] = None) -> HamiltonianSystem:
    """
    Build a system by name, filling missing parameters with the defaults.

    Raises:
        ValueError: Unknown system, unknown parameter, or invalid parameter value
    """
    if name not in SYSTEMS:
        raise ValueError(f"Invalid config field 'system.name': unknown system '{name}' "
                         f"(expected one of {', '.join(SYSTEMS)})")
    merged = dict(DEFAULT_PARAMETERS[name])
    for key, value in (params or {}).items():
        if key not in merged:
            raise ValueError(f"Invalid config field 'system.params.{key}': not a parameter of {name}")
        merged[key] = value
    builders = {
        'harmonic': lambda: HarmonicSystem(merged['frequencies']),
        'isochrone': lambda: IsochroneSystem(merged['c1'], merged['c2']),
        'logarithmic': lambda: LogarithmicSystem(merged['c1'], merged['c2']),
        'pps': lambda: PPSSystem(merged['c1'], merged['c2'], merged['c3']),
    }
    system = builders[name]()
    logger.debug(f"System {name} with {system.params()}")
    return system
