"""Static figure rendering for mflq run artifacts (display only)."""
from .figures import (FIGURE_NAMES, FigureSpec, MissingInput, SchemaMismatch,
                      build_spec, main, read_sweep, read_trajectory,
                      read_verdict, render)

__all__ = [
    "FIGURE_NAMES",
    "FigureSpec",
    "MissingInput",
    "SchemaMismatch",
    "build_spec",
    "main",
    "read_sweep",
    "read_trajectory",
    "read_verdict",
    "render",
]
__version__ = "0.1.0"
