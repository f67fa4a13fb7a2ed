"""Trap-model and critical-tree random walk simulators with a statistical
verification harness for their extremal-process scaling limits."""

__version__ = "0.1.0"
