"""capsieve: text-only curation of image-text corpora with bias diagnostics.

The pipeline stages mirror the CLI subcommands: lemma matching (`match`),
similarity threshold sweeps (`sweep`), dataset assembly (`assemble`),
prediction scoring (`eval`), statistical diagnostics (`diagnose`), and a
synthetic selection simulator (`simulate`).
"""

__version__ = "0.1.0"

from .errors import CapsieveError, FormatError, MissingKeyError, ValidationError

__all__ = [
    "CapsieveError",
    "FormatError",
    "MissingKeyError",
    "ValidationError",
    "__version__",
]
