"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Vertex out of range, malformed file, bad parameter."""


class SizeLimitError(ValueError):
    """An exact search was asked to run beyond its configured cap."""


class PreconditionError(ValueError):
    """An operation was called on input outside its domain (e.g. a cyclic set)."""


class RuleViolationError(ValueError):
    """A game move broke the rules of the sequential game."""


class UnsupportedGraphError(ValueError):
    """The graph lacks structure an operation needs (e.g. grid labels)."""


class InternalConsistencyError(AssertionError):
    """A runtime self-check failed. Always indicates a bug."""


class DegenerateInstanceWarning(UserWarning):
    pass
