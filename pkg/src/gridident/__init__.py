"""Identification workbench for droop-controlled grid-forming power systems:
reference simulation, dataset generation, NODE and SINDy identification,
and closed-loop evaluation."""

__version__ = "0.1.0"
