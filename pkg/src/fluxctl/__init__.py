"""Optimal control of 1-D scalar conservation laws in entropy mobilities.

Subpackages: :mod:`fluxctl.model` (fluxes, entropies, cost functionals),
:mod:`fluxctl.scheme` (grid, stencils, explicit forward solver),
:mod:`fluxctl.saddle` (G-prox primal-dual solver for the discrete saddle
problem), :mod:`fluxctl.oracle` (exact and reference solutions),
:mod:`fluxctl.config` / :mod:`fluxctl.cli` (experiment configuration and
command-line entry points).
"""

__version__ = "0.1.0"
