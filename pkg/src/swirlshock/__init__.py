"""Transonic shocks with swirl in an axisymmetric divergent nozzle.

Steady compressible Euler flow enters a conic nozzle supersonically, crosses
a shock at which it becomes subsonic and leaves at a prescribed pressure.
The package computes the radial background flow, marches small supersonic
perturbations, and solves the perturbed shock/subsonic free-boundary problem
by a contracting fixed-point iteration in streamline coordinates.
"""

__version__ = "0.1.0"
