"""
torusfit - Invariant torus construction for Hamiltonian systems

Fits Fourier-parameterised phase-space surfaces to the Hamiltonian flow by
Levenberg-Marquardt least squares, probes action grids for families of
tori, and verifies the results against integrated Poincare sections.
"""

__version__ = "1.0.0"
