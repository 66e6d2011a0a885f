"""Orbit integration and Poincare-section checks of constructed tori."""
