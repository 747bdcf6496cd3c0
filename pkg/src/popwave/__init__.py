"""Spatial population dynamics toolkit.

Forward-time individual-based simulation of a scaled birth/establishment/death
process, its lookdown (levelled) representation with lineage tracing, 1-D
finite-difference solvers for the limiting local and nonlocal PDEs,
backward-in-time ancestral-lineage diffusions in travelling-wave frames, and
Fourier stability analysis of the homogeneous equilibrium ("clumping").
"""

__version__ = "0.1.0"
