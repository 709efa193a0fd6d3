"""Exception types shared across the package."""


class AptError(Exception):
    """Base class for all errors raised by aptkit."""


class ParseError(AptError):
    """A text input file (annotations, categories, detections) is malformed.

    Carries enough context to point at the offending line/field.
    """

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc += str(path)
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {message}" if loc else message)
        self.path = path
        self.line = line


class FormatError(AptError):
    """A binary embedding/checkpoint file violates the container format."""


class MissingKeyError(AptError):
    """One or more required embedding keys are absent from a store."""

    def __init__(self, keys):
        keys = list(keys)
        super().__init__(
            "missing embedding key(s): " + ", ".join(repr(k) for k in keys)
        )
        self.keys = keys


class NumericsError(AptError):
    """A numeric contract was violated (zero-norm cosine input, etc.)."""


class NonFiniteLossError(AptError):
    """A loss evaluated to inf/nan; reports the offending batch when known."""

    def __init__(self, value: float, epoch: int | None = None, batch_index: int | None = None):
        where = ""
        if epoch is not None:
            where = f" at epoch {epoch}, batch {batch_index}"
        super().__init__(f"non-finite loss {value!r}{where}")
        self.epoch = epoch
        self.batch_index = batch_index
        self.value = value
