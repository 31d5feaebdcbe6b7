"""Citation disruption indicators and the milestone-paper analysis pipeline."""

from .errors import (CorpusError, DindexError, MatchingError, ModelError,
                     SeparationError, UnknownPaperError)
from .graph import Corpus, LoadOptions, load_corpus
from .indicators import IndicatorConfig, compute_all, disruption_counts, disruption_index

__all__ = [
    "Corpus", "CorpusError", "DindexError", "IndicatorConfig", "LoadOptions",
    "MatchingError", "ModelError", "SeparationError", "UnknownPaperError",
    "compute_all", "disruption_counts", "disruption_index", "load_corpus",
]
