class InvalidInputError(ValueError):
    """An argument violates an operation's preconditions."""


class LoadError(RuntimeError):
    """A sequence file is missing, malformed or inconsistent."""


class DegenerateSequenceError(RuntimeError):
    """No frame pair of a stage produced a single valid pixel."""
