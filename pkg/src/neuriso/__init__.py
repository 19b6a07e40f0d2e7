"""Convex recovery of planted neurons: arrangement patterns, isometry
conditions, group-l1 solvers, and phase-transition experiments."""

__version__ = "0.1.0"
