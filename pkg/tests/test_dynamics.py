#!/usr/bin/env python3
"""
Tests for torusfit.core.dynamics.

Every system is checked against finite differences of itself (potential
-> gradient -> Hessian) on arrays of phase points, plus the closed-form
facts the experiments rely on.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add src directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from torusfit.core.dynamics import (
    DEFAULT_PARAMETERS,
    SYSTEMS,
    HarmonicSystem,
    IsochroneSystem,
    LogarithmicSystem,
    PPSSystem,
    elliptic_coords,
    from_config,
    harmonic,
    isochrone,
    logarithmic,
    pps,
)


def _points(n, count=12, seed=7, scale=1.5):
    rng = np.random.default_rng(seed)
    return rng.uniform(-scale, scale, size=(count, n))


def _fd_gradient(system, q, step=1e-6):
    grad = np.empty_like(q)
    for i in range(system.n):
        e = np.zeros(system.n)
        e[i] = step
        grad[:, i] = (system.potential(q + e) - system.potential(q - e)) / (2 * step)
    return grad


def _fd_hessian(system, q, step=1e-5):
    hess = np.empty(q.shape + (system.n,))
    for i in range(system.n):
        e = np.zeros(system.n)
        e[i] = step
        hess[:, :, i] = (system.potential_gradient(q + e) - system.potential_gradient(q - e)) / (2 * step)
    return hess


ALL_SYSTEMS = [
    pytest.param(harmonic((1.0, 1.3)), id='harmonic'),
    pytest.param(harmonic((0.7,)), id='harmonic-1d'),
    pytest.param(isochrone(), id='isochrone'),
    pytest.param(logarithmic(), id='logarithmic'),
    pytest.param(pps(), id='pps'),
]


class TestDerivatives:
    """Analytic derivatives against finite differences."""

    @pytest.mark.parametrize("system", ALL_SYSTEMS)
    def test_gradient(self, system):
        q = _points(system.n)
        np.testing.assert_allclose(system.potential_gradient(q), _fd_gradient(system, q), atol=1e-7)

    @pytest.mark.parametrize("system", ALL_SYSTEMS)
    def test_hessian(self, system):
        q = _points(system.n)
        hess = system.potential_hessian(q)
        np.testing.assert_allclose(hess, _fd_hessian(system, q), rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(hess, np.swapaxes(hess, -1, -2), atol=1e-12)

    @pytest.mark.parametrize("system", ALL_SYSTEMS)
    def test_hamiltonian_gradients(self, system):
        q = _points(system.n)
        p = _points(system.n, seed=11)
        np.testing.assert_allclose(system.grad_p(q, p), p)
        np.testing.assert_allclose(system.grad_q(q, p), system.potential_gradient(q))
        assert system.hess_qp(q, p).shape == (len(q), system.n, system.n)
        assert np.all(system.hess_qp(q, p) == 0)
        np.testing.assert_allclose(system.hess_pp(q, p)[0], np.eye(system.n))

    @pytest.mark.parametrize("system", ALL_SYSTEMS)
    def test_energy_is_kinetic_plus_potential(self, system):
        q = _points(system.n)
        p = _points(system.n, seed=3)
        np.testing.assert_allclose(system.energy(q, p), 0.5 * np.sum(p ** 2, axis=-1) + system.potential(q))

    @pytest.mark.parametrize("system", ALL_SYSTEMS)
    def test_vector_field(self, system):
        q = _points(system.n)
        p = _points(system.n, seed=5)
        q_dot, p_dot = system.vector_field(q, p)
        np.testing.assert_allclose(q_dot, p)
        np.testing.assert_allclose(p_dot, -system.potential_gradient(q))


class TestIsochrone:
    """Tests for the one-dimensional isochrone."""

    def test_potential_at_origin(self):
        system = IsochroneSystem(c1=1.0, c2=0.15)
        assert system.potential(np.array([[0.0]]))[0] == pytest.approx(-1.0 / 0.3)

    def test_energy_frequency_relation(self):
        system = IsochroneSystem(c1=1.0, c2=0.15)
        assert system.energy_for_frequency(1.0) == pytest.approx(-0.5 * 2.0 ** (2.0 / 3.0))
        assert IsochroneSystem(c1=2.0).energy_for_frequency(0.5) == pytest.approx(-0.5 * 2.0 ** (2.0 / 3.0))

    @pytest.mark.parametrize("params", [{'c1': 0.0}, {'c2': -0.1}])
    def test_invalid_parameters(self, params):
        with pytest.raises(ValueError, match="Invalid system parameter"):
            IsochroneSystem(**params)


class TestLogarithmic:
    """Tests for the logarithmic potential."""

    def test_potential_at_origin(self):
        system = LogarithmicSystem(c1=0.9, c2=1.0)
        assert system.potential(np.zeros((1, 2)))[0] == pytest.approx(0.0)

    def test_flattening(self):
        """The y axis is stretched by c1."""
        system = LogarithmicSystem(c1=0.9, c2=1.0)
        x = system.potential(np.array([[0.9, 0.0]]))[0]
        y = system.potential(np.array([[0.0, 0.81]]))[0]
        assert x == pytest.approx(y)

    def test_invalid_parameters(self):
        with pytest.raises(ValueError, match="'c2'"):
            LogarithmicSystem(c1=0.9, c2=0.0)


class TestPPS:
    """Tests for the perfect prolate spheroid."""

    def test_symmetric_in_both_axes(self):
        system = PPSSystem()
        q = np.array([[0.6, 0.4], [-0.6, 0.4], [0.6, -0.4], [-0.6, -0.4]])
        values = system.potential(q)
        np.testing.assert_allclose(values, values[0], rtol=1e-13)

    def test_bound_potential(self):
        """The potential deepens toward the centre and is negative everywhere."""
        system = PPSSystem()
        radii = np.array([[0.0, 0.0], [0.2, 0.0], [0.5, 0.0], [1.0, 0.0], [3.0, 0.0]])
        values = system.potential(radii + np.array([0.0, 1e-3]))
        assert np.all(values < 0)
        assert np.all(np.diff(values) > 0)

    def test_series_and_closed_form_agree(self):
        """Points on both sides of the series radius give a continuous potential."""
        system = PPSSystem()
        radii = np.linspace(0.3, 0.7, 81)
        q = np.stack([radii * np.cos(0.7), radii * np.sin(0.7)], axis=1)
        values = system.potential(q)
        second = np.diff(values, 2)
        assert np.max(np.abs(second)) < 1e-3

    def test_finite_difference_gradient_option(self):
        exact = PPSSystem()
        approx = PPSSystem(finite_difference=True)
        q = _points(2)
        np.testing.assert_allclose(approx.potential_gradient(q), exact.potential_gradient(q), atol=1e-7)

    def test_elliptic_coordinates_order(self):
        coords = elliptic_coords(_points(2), -1.0, -0.25)
        assert np.all(coords.u2 <= coords.u1)

    @pytest.mark.parametrize("params,field", [
        ({'c1': -0.1, 'c2': -0.25}, 'c1'),
        ({'c1': -1.0, 'c2': 0.5}, 'c2'),
        ({'c3': 0.0}, 'c3'),
    ])
    def test_invalid_parameters(self, params, field):
        with pytest.raises(ValueError, match=f"'{field}'"):
            PPSSystem(**params)


class TestHarmonic:
    """Tests for the oscillator reference system."""

    def test_dimension_follows_frequencies(self):
        assert HarmonicSystem((1.0,)).n == 1
        assert HarmonicSystem((1.0, 2.0)).n == 2

    def test_invalid_frequencies(self):
        with pytest.raises(ValueError, match="'frequencies'"):
            HarmonicSystem((1.0, 0.0))
        with pytest.raises(ValueError, match="'frequencies'"):
            HarmonicSystem((1.0, 1.0, 1.0))


class TestFromConfig:
    """Tests for building systems by name."""

    @pytest.mark.parametrize("name", SYSTEMS)
    def test_defaults(self, name):
        system = from_config(name)
        assert system.name == name
        assert system.describe()['params'].keys() == DEFAULT_PARAMETERS[name].keys()

    def test_partial_parameters(self):
        system = from_config('isochrone', {'c2': 0.3})
        assert system.params() == {'c1': 1.0, 'c2': 0.3}

    def test_describe(self):
        described = from_config('logarithmic').describe()
        assert described == {'name': 'logarithmic', 'n': 2, 'params': {'c1': 0.9, 'c2': 1.0}}

    def test_unknown_system(self):
        with pytest.raises(ValueError, match="'system.name'"):
            from_config('kepler')

    def test_unknown_parameter(self):
        with pytest.raises(ValueError, match="'system.params.c3'"):
            from_config('logarithmic', {'c3': 1.0})

    def test_invalid_value(self):
        with pytest.raises(ValueError, match="Invalid system parameter 'c1'"):
            from_config('pps', {'c1': 0.5})
