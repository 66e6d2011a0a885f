"""
Torus model - Fourier surfaces mapping angles to phase space

A model torus is stored in trigonometric form,

    p_j(theta) = sum_k a_{j,k} cos(k.theta) + b_{j,k} sin(k.theta)
    q_j(theta) = sum_l c_{j,l} cos(l.theta) + d_{j,l} sin(l.theta)

where every amplitude that may be nonzero owns one slot of a
CoefficientMask. Orbit families fix which slots exist:

- 1d-odd: a and d over the odd harmonics 1, 3, 5, ... <= N
- box:    a_1, d_1 on (odd, even) indices; a_2, d_2 on (even, odd)
- loop:   b_1, c_1, a_2, d_2 on (even, odd) indices
- general: every table on every half-space index (sine tables skip k = 0)

Index enumeration ("half-space lexicographic"): for n = 1 the indices are
k = 0..N; for n = 2 they are (k1, k2) with k1 = 0..N, k2 = -N..N, keeping
k1 > 0 or (k1 == 0 and k2 >= 0), in lexicographic order. No stored set ever
holds both k and -k. The flat coefficient vector is ordered table by table
(a, b, c, d), component by component, then by this enumeration.

Usage:
    from torusfit.core.model import ThetaGrid, initial_guess

    model = initial_guess('box', N=16)
    grid = ThetaGrid(n=2, points=32, reduced=True)
    q, p = model.evaluate(grid.thetas)
"""

import json
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse

from torusfit.utils.io import SCHEMA_VERSION, write_json

logger = logging.getLogger('torusfit.model')

FAMILIES = ('box', 'loop', '1d-odd', 'general')
TABLES = ('a', 'b', 'c', 'd')
MOMENTUM_TABLES = ('a', 'b')
COSINE_TABLES = ('a', 'c')
INDEX_ENUMERATION = 'half-space-lexicographic'

Index = Tuple[int, ...]

# Pair rules for the action integral: (momentum table, coordinate table) ->
# (factor, trig) for the sum harmonic (k_h + l_h = 0) and the difference
# harmonic (k_h == l_h). Each term is factor * l_h * trig(m.theta).
_ACTION_SUM_RULES = {
    ('a', 'c'): (-0.5, 'sin'),
    ('a', 'd'): (0.5, 'cos'),
    ('b', 'c'): (0.5, 'cos'),
    ('b', 'd'): (0.5, 'sin'),
}
_ACTION_DIFF_RULES = {
    ('a', 'c'): (0.5, 'sin'),
    ('a', 'd'): (0.5, 'cos'),
    ('b', 'c'): (-0.5, 'cos'),
    ('b', 'd'): (0.5, 'sin'),
}


def half_space_indices(N: int, n: int) -> List[Index]:
    """Enumerate the half-space multi-indices with |k_i| <= N."""
    if n == 1:
        return [(k,) for k in range(N + 1)]
    if n == 2:
        return [
            (k1, k2)
            for k1 in range(N + 1)
            for k2 in range(-N, N + 1)
            if k1 > 0 or k2 >= 0
        ]
    raise ValueError(f"Unsupported dimension n={n} (expected 1 or 2)")


def _parity(index: Index) -> Tuple[str, ...]:
    return tuple('odd' if k % 2 else 'even' for k in index)


@dataclass(frozen=True)
class MaskBlock:
    """The indices retained for one component of one amplitude table."""
    table: str
    component: int
    indices: Tuple[Index, ...]


@dataclass(frozen=True)
class CoefficientMask:
    """
    Which Fourier amplitudes a model may use, and in what order they are flattened.

    Blocks are stored in flat-vector order: tables a, b, c, d, and
    components ascending inside each table.
    """
    family: str
    N: int
    n: int
    blocks: Tuple[MaskBlock, ...]

    @property
    def size(self) -> int:
        return sum(len(block.indices) for block in self.blocks)

    @cached_property
    def slot_tables(self) -> np.ndarray:
        return np.array([b.table for b in self.blocks for _ in b.indices])

    @cached_property
    def slot_components(self) -> np.ndarray:
        return np.array([b.component for b in self.blocks for _ in b.indices], dtype=int)

    @cached_property
    def slot_indices(self) -> np.ndarray:
        rows = [idx for b in self.blocks for idx in b.indices]
        return np.array(rows, dtype=int).reshape(len(rows), self.n)

    @cached_property
    def cosine_slots(self) -> np.ndarray:
        return np.isin(self.slot_tables, COSINE_TABLES)

    @cached_property
    def momentum_slots(self) -> np.ndarray:
        return np.isin(self.slot_tables, MOMENTUM_TABLES)

    @cached_property
    def momentum_selector(self) -> np.ndarray:
        """(S, n) matrix with a one where slot s contributes to p_j."""
        sel = np.zeros((self.size, self.n))
        rows = np.flatnonzero(self.momentum_slots)
        sel[rows, self.slot_components[rows]] = 1.0
        return sel

    @cached_property
    def coordinate_selector(self) -> np.ndarray:
        """(S, n) matrix with a one where slot s contributes to q_j."""
        sel = np.zeros((self.size, self.n))
        rows = np.flatnonzero(~self.momentum_slots)
        sel[rows, self.slot_components[rows]] = 1.0
        return sel

    @cached_property
    def slot_lookup(self) -> Dict[Tuple[str, int, Index], int]:
        lookup = {}
        slot = 0
        for block in self.blocks:
            for idx in block.indices:
                lookup[(block.table, block.component, idx)] = slot
                slot += 1
        return lookup

    @cached_property
    def momentum_indices(self) -> Tuple[Index, ...]:
        """X: every index used by a momentum table."""
        found = {idx for b in self.blocks if b.table in MOMENTUM_TABLES for idx in b.indices}
        return tuple(sorted(found))

    @cached_property
    def coordinate_indices(self) -> Tuple[Index, ...]:
        """Y: every index used by a coordinate table."""
        found = {idx for b in self.blocks if b.table not in MOMENTUM_TABLES for idx in b.indices}
        return tuple(sorted(found))

    @cached_property
    def common_indices(self) -> Tuple[Index, ...]:
        """C = X & Y."""
        return tuple(sorted(set(self.momentum_indices) & set(self.coordinate_indices)))

    @cached_property
    def action_terms(self) -> List['_ActionTerms']:
        return [_build_action_terms(self, h) for h in range(self.n)]

    @cached_property
    def consistency_operator(self) -> '_ConsistencyOperator':
        return _build_consistency_operator(self)

    def slot(self, table: str, component: int, index: Sequence[int]) -> Optional[int]:
        """Flat position of an amplitude, or None when the mask excludes it."""
        return self.slot_lookup.get((table, component, tuple(int(k) for k in index)))

    def counts(self) -> Dict[str, int]:
        """Number of slots per table."""
        counts = {t: 0 for t in TABLES}
        for block in self.blocks:
            counts[block.table] += len(block.indices)
        return counts


def make_mask(family: str, N: int, n: Optional[int] = None) -> CoefficientMask:
    """
    Build the coefficient mask of an orbit family.

    Args:
        family: One of box, loop, 1d-odd, general
        N: Harmonic cutoff, |k_i| <= N
        n: Number of degrees of freedom (inferred from the family when omitted)

    Returns:
        The mask; ``mask.size`` is the total coefficient count

    Raises:
        ValueError: Unknown family, family/dimension mismatch, or N < 1
    """
    if family not in FAMILIES:
        raise ValueError(f"Unknown model family '{family}' (expected one of {', '.join(FAMILIES)})")
    if n is None:
        n = 1 if family == '1d-odd' else 2
    if N < 1:
        raise ValueError(f"Harmonic cutoff N must be >= 1, got {N}")
    if family == '1d-odd' and n != 1:
        raise ValueError(f"Family '1d-odd' requires n=1, got n={n}")
    if family in ('box', 'loop') and n != 2:
        raise ValueError(f"Family '{family}' requires n=2, got n={n}")

    indices = half_space_indices(N, n)
    odd_even = tuple(k for k in indices if _parity(k) == ('odd', 'even'))
    even_odd = tuple(k for k in indices if _parity(k) == ('even', 'odd'))
    nonzero = tuple(k for k in indices if any(k))

    if family == '1d-odd':
        odd = tuple(k for k in indices if k[0] % 2)
        layout = [('a', 0, odd), ('d', 0, odd)]
    elif family == 'box':
        layout = [('a', 0, odd_even), ('a', 1, even_odd), ('d', 0, odd_even), ('d', 1, even_odd)]
    elif family == 'loop':
        layout = [('a', 1, even_odd), ('b', 0, even_odd), ('c', 0, even_odd), ('d', 1, even_odd)]
    else:
        layout = []
        for table in TABLES:
            for j in range(n):
                layout.append((table, j, tuple(indices) if table in COSINE_TABLES else nonzero))

    blocks = tuple(MaskBlock(table, j, idx) for table, j, idx in layout)
    mask = CoefficientMask(family=family, N=N, n=n, blocks=blocks)
    logger.debug(f"Mask {family} N={N} n={n}: {mask.size} slots")
    return mask


@dataclass(frozen=True)
class ThetaGrid:
    """
    Equally spaced angle lattice.

    With ``reduced`` set only the points with theta_i < pi are kept; each
    kept point then stands for 2**n points of the full lattice. The
    reduction is exact only for parity-masked families (box, loop, 1d-odd),
    where shifting an angle by pi reflects the torus through a symmetry of H.
    """
    n: int
    points: int
    reduced: bool = False

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError(f"ThetaGrid dimension must be 1 or 2, got {self.n}")
        if self.points < 1:
            raise ValueError(f"ThetaGrid needs at least one point per dimension, got {self.points}")
        if self.reduced and self.points % 2:
            raise ValueError(f"Symmetry reduction needs an even point count, got {self.points}")

    @cached_property
    def thetas(self) -> np.ndarray:
        count = self.points // 2 if self.reduced else self.points
        axis = 2.0 * np.pi * np.arange(count) / self.points
        mesh = np.meshgrid(*([axis] * self.n), indexing='ij')
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def size(self) -> int:
        return self.thetas.shape[0]

    @property
    def multiplicity(self) -> int:
        return 2 ** self.n if self.reduced else 1

    def full(self) -> 'ThetaGrid':
        return ThetaGrid(n=self.n, points=self.points, reduced=False)


class FourierBasis:
    """Basis functions and angle derivatives of a mask sampled at fixed angles."""

    def __init__(self, mask: CoefficientMask, thetas: np.ndarray):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        if thetas.shape[1] != mask.n:
            raise ValueError(f"Angles have dimension {thetas.shape[1]}, mask expects {mask.n}")
        self.mask = mask
        self.thetas = thetas
        k = mask.slot_indices.astype(float)
        phase = thetas @ k.T
        cos_phase, sin_phase = np.cos(phase), np.sin(phase)
        self.values = np.where(mask.cosine_slots, cos_phase, sin_phase)
        slope = np.where(mask.cosine_slots, -sin_phase, cos_phase)
        self.derivs = slope[:, :, None] * k[None, :, :]
        self.p_select = mask.momentum_selector
        self.q_select = mask.coordinate_selector

    @property
    def size(self) -> int:
        return self.thetas.shape[0]

    def evaluate(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Return q, p with shape (M, n)."""
        weighted = self.values * x
        return weighted @ self.q_select, weighted @ self.p_select

    def derivatives(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Return dq/dtheta, dp/dtheta with shape (M, n, n); [m, j, h] = d(.)_j / d theta_h."""
        dq = np.einsum('msh,s,sj->mjh', self.derivs, x, self.q_select)
        dp = np.einsum('msh,s,sj->mjh', self.derivs, x, self.p_select)
        return dq, dp

    def value_jacobians(self) -> Tuple[np.ndarray, np.ndarray]:
        """d q_j / d x_s and d p_j / d x_s, shape (M, n, S)."""
        dq = self.values[:, None, :] * self.q_select.T[None, :, :]
        dp = self.values[:, None, :] * self.p_select.T[None, :, :]
        return dq, dp

    def derivative_jacobians(self) -> Tuple[np.ndarray, np.ndarray]:
        """d(dq_j/dtheta_h) / d x_s and the momentum analogue, shape (M, n, n, S)."""
        d = self.derivs.transpose(0, 2, 1)[:, None, :, :]
        dq = d * self.q_select.T[None, :, None, :]
        dp = d * self.p_select.T[None, :, None, :]
        return dq, dp


@dataclass(frozen=True)
class _ActionTerms:
    p_slots: np.ndarray
    q_slots: np.ndarray
    weights: np.ndarray
    harmonics: np.ndarray
    shifts: np.ndarray

    def trig(self, thetas: np.ndarray) -> np.ndarray:
        return np.cos(thetas @ self.harmonics.T - self.shifts)


def _build_action_terms(mask: CoefficientMask, h: int) -> _ActionTerms:
    """Collect the bilinear terms of J_h = <sum_j p_j dq_j/dtheta_h> averaged over theta_h."""
    p_slots, q_slots, weights, harmonics, shifts = [], [], [], [], []
    idx = mask.slot_indices
    for j in range(mask.n):
        ps = np.flatnonzero(mask.momentum_slots & (mask.slot_components == j))
        qs = np.flatnonzero(~mask.momentum_slots & (mask.slot_components == j))
        if ps.size == 0 or qs.size == 0:
            continue
        kh = idx[ps, h][:, None]
        lh = idx[qs, h][None, :]
        for rules, hit, sign in (
            (_ACTION_SUM_RULES, (kh + lh == 0) & (lh != 0), 1),
            (_ACTION_DIFF_RULES, (kh == lh) & (lh != 0), -1),
        ):
            si, ti = np.nonzero(hit)
            for s, t in zip(ps[si], qs[ti]):
                factor, trig = rules[(mask.slot_tables[s], mask.slot_tables[t])]
                p_slots.append(s)
                q_slots.append(t)
                weights.append(factor * idx[t, h])
                harmonics.append(idx[s] + sign * idx[t])
                shifts.append(0.5 * np.pi if trig == 'sin' else 0.0)
    return _ActionTerms(
        p_slots=np.array(p_slots, dtype=int),
        q_slots=np.array(q_slots, dtype=int),
        weights=np.array(weights, dtype=float),
        harmonics=np.array(harmonics, dtype=float).reshape(len(p_slots), mask.n),
        shifts=np.array(shifts, dtype=float),
    )


def action_values(mask: CoefficientMask, x: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    """Model actions J(theta) at each angle tuple, shape (M, n)."""
    thetas = np.atleast_2d(thetas)
    out = np.zeros((thetas.shape[0], mask.n))
    for h, terms in enumerate(mask.action_terms):
        if terms.weights.size:
            out[:, h] = terms.trig(thetas) @ (terms.weights * x[terms.p_slots] * x[terms.q_slots])
    return out


def action_jacobian(mask: CoefficientMask, x: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    """d J_h(theta_m) / d x_s, shape (M, n, S)."""
    thetas = np.atleast_2d(thetas)
    out = np.zeros((thetas.shape[0], mask.n, mask.size))
    for h, terms in enumerate(mask.action_terms):
        count = terms.weights.size
        if not count:
            continue
        weighted = terms.trig(thetas) * terms.weights
        rows = np.arange(count)
        ones = np.ones(count)
        pick_p = sparse.csr_matrix((ones, (rows, terms.p_slots)), shape=(count, mask.size))
        pick_q = sparse.csr_matrix((ones, (rows, terms.q_slots)), shape=(count, mask.size))
        out[:, h, :] = (
            pick_p.T @ (weighted * x[terms.q_slots]).T + pick_q.T @ (weighted * x[terms.p_slots]).T
        ).T
    return out


@dataclass(frozen=True)
class _ConsistencyOperator:
    """
    Rows of alpha_k - i (k.omega) beta_k as a linear map of the coefficients.

    rows(x, omega) = base @ x + sum_h omega_h * (slope[h] @ x)
    """
    base: np.ndarray
    slope: np.ndarray

    @property
    def rows(self) -> int:
        return self.base.shape[0]

    def matrix(self, omega: np.ndarray) -> np.ndarray:
        return self.base + np.tensordot(omega, self.slope, axes=1)

    def residuals(self, x: np.ndarray, omega: np.ndarray) -> np.ndarray:
        return self.matrix(omega) @ x

    def omega_columns(self, x: np.ndarray) -> np.ndarray:
        """d rows / d omega, shape (R, n)."""
        return np.stack([s @ x for s in self.slope], axis=1) if self.rows else np.zeros((0, len(self.slope)))


def _build_consistency_operator(mask: CoefficientMask) -> _ConsistencyOperator:
    base_rows: List[np.ndarray] = []
    slope_rows: List[np.ndarray] = []
    for k in mask.common_indices:
        kvec = np.array(k, dtype=float)
        zero = not any(k)
        for j in range(mask.n):
            sa, sb = mask.slot('a', j, k), mask.slot('b', j, k)
            sc, sd = mask.slot('c', j, k), mask.slot('d', j, k)
            # real part: (a - (k.w) d) / 2, or a itself for the constant harmonic
            if sa is not None or sd is not None:
                base = np.zeros(mask.size)
                slope = np.zeros((mask.n, mask.size))
                if sa is not None:
                    base[sa] = 1.0 if zero else 0.5
                if sd is not None:
                    slope[:, sd] = -0.5 * kvec
                base_rows.append(base)
                slope_rows.append(slope)
            # imaginary part: -(b + (k.w) c) / 2
            if not zero and (sb is not None or sc is not None):
                base = np.zeros(mask.size)
                slope = np.zeros((mask.n, mask.size))
                if sb is not None:
                    base[sb] = -0.5
                if sc is not None:
                    slope[:, sc] = -0.5 * kvec
                base_rows.append(base)
                slope_rows.append(slope)
    if base_rows:
        base = np.array(base_rows)
        slope = np.stack(slope_rows, axis=1)
    else:
        base = np.zeros((0, mask.size))
        slope = np.zeros((mask.n, 0, mask.size))
    return _ConsistencyOperator(base=base, slope=slope)


@dataclass(frozen=True, eq=False)
class TorusModel:
    """An immutable Fourier torus: a mask plus its flat coefficient vector."""
    mask: CoefficientMask
    coefficients: np.ndarray

    def __post_init__(self):
        x = np.array(self.coefficients, dtype=float)
        if x.shape != (self.mask.size,):
            raise ValueError(
                f"Expected {self.mask.size} coefficients for mask {self.mask.family} "
                f"N={self.mask.N}, got shape {x.shape}"
            )
        x.setflags(write=False)
        object.__setattr__(self, 'coefficients', x)

    @property
    def n(self) -> int:
        return self.mask.n

    @property
    def N(self) -> int:
        return self.mask.N

    @property
    def family(self) -> str:
        return self.mask.family

    @classmethod
    def zeros(cls, mask: CoefficientMask) -> 'TorusModel':
        return cls(mask, np.zeros(mask.size))

    def with_coefficients(self, x: np.ndarray) -> 'TorusModel':
        return TorusModel(self.mask, x)

    def scaled(self, factor: float) -> 'TorusModel':
        return TorusModel(self.mask, self.coefficients * factor)

    def coefficient(self, table: str, component: int, index: Sequence[int]) -> float:
        """Amplitude of a term; zero when the mask excludes it. Components are 0-based."""
        slot = self.mask.slot(table, component, index)
        return 0.0 if slot is None else float(self.coefficients[slot])

    def coefficient_table(self) -> List[Tuple[str, int, Index, float]]:
        """Rows of (table, component, index, value) in flat-vector order."""
        rows = []
        slot = 0
        for block in self.mask.blocks:
            for idx in block.indices:
                rows.append((block.table, block.component, idx, float(self.coefficients[slot])))
                slot += 1
        return rows

    def _basis(self, theta: np.ndarray) -> Tuple[FourierBasis, bool]:
        theta = np.asarray(theta, dtype=float)
        single = theta.ndim <= 1
        return FourierBasis(self.mask, theta.reshape(-1, self.n)), single

    def evaluate(self, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Phase-space point(s) (q, p) at angle tuple(s) theta."""
        basis, single = self._basis(theta)
        q, p = basis.evaluate(self.coefficients)
        return (q[0], p[0]) if single else (q, p)

    def derivatives(self, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Angle derivatives (dq/dtheta, dp/dtheta), [..., j, h] = d(.)_j / d theta_h."""
        basis, single = self._basis(theta)
        dq, dp = basis.derivatives(self.coefficients)
        return (dq[0], dp[0]) if single else (dq, dp)

    def actions(self, theta: np.ndarray) -> np.ndarray:
        """Model actions J(theta); component h does not depend on theta_h."""
        theta = np.asarray(theta, dtype=float)
        values = action_values(self.mask, self.coefficients, theta.reshape(-1, self.n))
        return values[0] if theta.ndim <= 1 else values

    def consistency(self, omega: Sequence[float]) -> float:
        """sum over k in X & Y of |alpha_k - i (k.omega) beta_k|^2."""
        rows = self.mask.consistency_operator.residuals(self.coefficients, np.asarray(omega, dtype=float))
        return float(rows @ rows)

    def to_dict(self) -> Dict:
        tables: Dict[str, List[Dict]] = {t: [] for t in TABLES}
        slot = 0
        for block in self.mask.blocks:
            count = len(block.indices)
            tables[block.table].append({
                'component': block.component + 1,
                'indices': [list(idx) for idx in block.indices],
                'values': [float(v) for v in self.coefficients[slot:slot + count]],
            })
            slot += count
        return {
            'schema_version': SCHEMA_VERSION,
            'kind': 'torus-model',
            'n': self.n,
            'N': self.N,
            'family': self.family,
            'index_enumeration': INDEX_ENUMERATION,
            'tables': tables,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'TorusModel':
        if data.get('index_enumeration', INDEX_ENUMERATION) != INDEX_ENUMERATION:
            raise ValueError(f"Unsupported index enumeration '{data.get('index_enumeration')}'")
        mask = make_mask(data['family'], int(data['N']), int(data['n']))
        x = np.zeros(mask.size)
        for table, blocks in data.get('tables', {}).items():
            for block in blocks:
                component = int(block['component']) - 1
                for idx, value in zip(block['indices'], block['values']):
                    slot = mask.slot(table, component, idx)
                    if slot is None:
                        raise ValueError(
                            f"Coefficient {table}_{component + 1},{tuple(idx)} lies outside "
                            f"the {mask.family} mask"
                        )
                    x[slot] = value
        return cls(mask, x)

    def save(self, path: Union[str, Path]) -> Path:
        return write_json(path, self.to_dict())

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'TorusModel':
        with open(path, 'r') as f:
            return cls.from_dict(json.load(f))


def _model_from_terms(mask: CoefficientMask, terms: Dict[Tuple[str, int, Index], float]) -> TorusModel:
    x = np.zeros(mask.size)
    for (table, component, idx), value in terms.items():
        slot = mask.slot(table, component, idx)
        if slot is None:
            raise ValueError(f"Term {table}_{component + 1},{idx} not in the {mask.family} mask (N={mask.N})")
        x[slot] = value
    return TorusModel(mask, x)


def initial_guess(family: str, N: int = 16, scale: float = 1.0, n: Optional[int] = None) -> TorusModel:
    """
    Canned starting torus for an orbit family.

    - 1d-odd: q = scale sin(theta), p = scale cos(theta)
    - box: independent unit oscillators, q_i = sin(theta_i), p_i = cos(theta_i) (omega = (1, 1))
    - loop: q_1 = cos t2 + cos(2t1+t2)/20 - cos(-2t1+t2)/2,
            q_2 = 3/2 sin t2 + sin(2t1+t2)/10 - sin(-2t1+t2)/2,
            p = (dq/dtheta) omega with omega = (1/2, 1/2)

    Every amplitude is multiplied by ``scale``.
    """
    if family == '1d-odd':
        mask = make_mask(family, N, 1)
        terms = {('a', 0, (1,)): 1.0, ('d', 0, (1,)): 1.0}
    elif family == 'box':
        mask = make_mask(family, N, 2)
        terms = {
            ('a', 0, (1, 0)): 1.0, ('a', 1, (0, 1)): 1.0,
            ('d', 0, (1, 0)): 1.0, ('d', 1, (0, 1)): 1.0,
        }
    elif family == 'loop':
        if N < 2:
            raise ValueError(f"The loop initial guess needs N >= 2, got {N}")
        mask = make_mask(family, N, 2)
        # cos(-2t1+t2) = cos(2t1-t2), sin(-2t1+t2) = -sin(2t1-t2)
        coordinate = {
            ('c', 0, (0, 1)): 1.0, ('c', 0, (2, 1)): 1.0 / 20.0, ('c', 0, (2, -1)): -0.5,
            ('d', 1, (0, 1)): 1.5, ('d', 1, (2, 1)): 1.0 / 10.0, ('d', 1, (2, -1)): 0.5,
        }
        omega = np.array([0.5, 0.5])
        terms = dict(coordinate)
        for (table, component, idx), value in coordinate.items():
            rate = float(np.dot(idx, omega))
            if table == 'c':
                terms[('b', component, idx)] = -value * rate
            else:
                terms[('a', component, idx)] = value * rate
    elif family in FAMILIES:
        raise ValueError(f"No canned initial guess for family '{family}'")
    else:
        raise ValueError(f"Unknown model family '{family}'")
    return _model_from_terms(mask, terms).scaled(scale)


def harmonic_torus(actions: Sequence[float], frequencies: Sequence[float], N: int = 1) -> TorusModel:
    """Exact torus of uncoupled oscillators: q_i = sqrt(2J_i/w_i) sin, p_i = sqrt(2J_i w_i) cos."""
    actions = [float(a) for a in actions]
    frequencies = [float(w) for w in frequencies]
    if len(actions) != len(frequencies):
        raise ValueError("actions and frequencies must have the same length")
    n = len(actions)
    mask = make_mask('1d-odd' if n == 1 else 'box', N, n)
    terms = {}
    for j, (J, w) in enumerate(zip(actions, frequencies)):
        unit = tuple(1 if i == j else 0 for i in range(n))
        terms[('a', j, unit)] = np.sqrt(2.0 * J * w)
        terms[('d', j, unit)] = np.sqrt(2.0 * J / w)
    return _model_from_terms(mask, terms)


# Functional API

def evaluate(model: TorusModel, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return model.evaluate(theta)


def evaluate_derivatives(model: TorusModel, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return model.derivatives(theta)


def model_actions(model: TorusModel, theta: np.ndarray) -> np.ndarray:
    return model.actions(theta)


def consistency_metric(model: TorusModel, omega: Sequence[float]) -> float:
    return model.consistency(omega)
