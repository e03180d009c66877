"""Concentration comparison for advection-diffusion: discrete rearrangements,
heat and transport semigroups, a torus counterexample, SDE ensembles and 2D
vorticity runs."""

__version__ = "0.1.0"
