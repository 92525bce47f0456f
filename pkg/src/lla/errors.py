"""Exception hierarchy shared across the toolkit."""


class LLAError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(LLAError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(LLAError, ValueError):
    """A value lies outside the domain of an operation (e.g. log of zero)."""


class PreconditionError(LLAError, ValueError):
    """An operation was called with arguments violating its contract."""


class TrainingError(LLAError, RuntimeError):
    """Numerical failure during optimization (NaN loss or gradient)."""


class VocabularyError(LLAError, KeyError):
    """Unknown token id, unknown word, or vocabulary hash mismatch."""

    def __str__(self):
        # KeyError quotes its argument; keep messages readable.
        return str(self.args[0]) if self.args else ""


class ConfigurationError(LLAError, ValueError):
    """Invalid model, lesion or run configuration."""


class IngestionError(LLAError, ValueError):
    """Malformed dataset file or text that tokenizes to nothing."""

    def __init__(self, message, line=None, path=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.line = line
        self.path = path
