"""Render publication-style figures from qsd-toolkit file outputs.

This package reads only the exported CSV/JSON schemas; it never imports or
invokes the simulation toolkit itself.
"""

__version__ = "0.1.0"

from .render import FigureSpec, render

__all__ = ["FigureSpec", "render", "__version__"]
