"""Exception hierarchy.

Everything deriving from :class:`DindexError` is a user-facing problem (bad
input file, infeasible model); the CLI maps it to exit status 1.
"""


class DindexError(Exception):
    pass


class CorpusError(DindexError):
    """Malformed or inconsistent corpus input."""


class UnknownPaperError(CorpusError, KeyError):
    def __init__(self, paper_id):
        super().__init__(paper_id)
        self.paper_id = paper_id

    def __str__(self):
        return f"unknown paper id {self.paper_id!r}"


class ModelError(DindexError):
    """A regression model cannot be fitted as specified."""


class SeparationError(ModelError):
    """Complete or quasi-complete separation in a logistic model."""


class ConvergenceError(ModelError):
    pass


class DegenerateError(ModelError):
    """Input has no variation for the requested statistic."""


class MatchingError(DindexError):
    pass
