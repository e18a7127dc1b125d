"""Numerical toolkit for killed random walks on lattice cones.

Exact window linear algebra for Green functions, ladder-height kernels and
renewal functions, cross-validated by reproducible Monte Carlo and by
exponential-tilting rate predictions.  Heavy submodules are imported lazily
so the CLI can pin thread environment variables first.
"""

__version__ = "0.1.0"

__all__ = [
    "errors",
    "lattice",
    "potential",
    "ladder",
    "harmonic",
    "montecarlo",
    "tilting",
    "refine",
    "scenario",
    "engine",
    "suite",
    "cli",
]
