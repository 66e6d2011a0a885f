"""Torus model, Hamiltonian systems, objective, solver and probing."""
