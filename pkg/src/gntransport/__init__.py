"""Graphene nanoconstriction ballistic transport simulator and
measurement-analysis pipeline.

Modules:
  constants  physical constants and unit conventions
  lattice    honeycomb device construction (edges, disorder, field)
  bands      lead band structure and closed-form energy scales
  transport  lead self-energies, recursive Green's function, sweeps
  analysis   width/capacitance/mean-free-path extraction pipeline
  workbench  config-driven runner, manifests, orchestration
  cli        the `gnt` command
"""

__version__ = "0.1.0"
