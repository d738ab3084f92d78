"""Resilience measures of attractors in autonomous ODE systems."""
