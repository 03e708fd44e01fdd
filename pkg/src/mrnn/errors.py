"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand dimensions do not conform."""


class DomainError(ValueError):
    """An argument lies outside the operation's domain (labels, lengths, ...)."""


class UnsupportedActivationError(ValueError):
    """An activation was requested in a role it cannot fill."""


class ParseError(ValueError):
    """A text input (embeddings, corpus, config) is malformed.

    ``line`` is the 1-based line number of the offending row, when known.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class EmptyVocabularyError(ValueError):
    """No usable tokens were found while building a vocabulary."""


class NonFiniteError(ArithmeticError):
    """A NaN or Inf appeared in a loss or gradient."""
