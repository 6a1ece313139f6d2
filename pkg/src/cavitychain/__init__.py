"""Simulator and analysis toolkit for pulsed, lossy qubit-cavity chains.

The package integrates quantum trajectories and a density-matrix reference for
a chain of hard-core qubits resonantly coupled to decaying cavities, and
computes the entanglement and sampling statistics of the resulting output
distributions, together with closed-form classical-difficulty estimates.
"""

__version__ = "0.1.0"
