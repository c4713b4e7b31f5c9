"""Binaural signal matching toolkit for arbitrary microphone arrays.

Filter design (least-squares, magnitude least-squares, and ILD-informed
variants), analytic rigid-sphere simulation, evaluation metrics, and a
command-line front end for reproducible experiments.

This module is deliberately import-light so the CLI can configure BLAS
threading before the numerical stack loads; import submodules directly.
"""

__version__ = "0.1.0"
