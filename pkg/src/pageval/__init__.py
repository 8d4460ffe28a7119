"""Scoring engine for academic project webpages.

Three metric families: rule-based connectivity and completeness computed
from parsed HTML and a layout heuristic, holistic judge scores from a
vision-capable model, and a screenshot quiz measuring how much of the
paper a reader of the page can answer. See README.md for the pipeline
and the CLI.
"""

__version__ = "0.1.0"

from .errors import PagevalError

__all__ = ["PagevalError", "__version__"]
