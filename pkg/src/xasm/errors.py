"""Exception types shared across the package.

Everything raised on bad input derives from DataError so the CLI can map it
to a single exit code.
"""


class XasmError(Exception):
    pass


class DataError(XasmError):
    """Invalid input data or an operation precondition violation."""


class EmptyInstruction(DataError):
    pass


class MalformedRecord(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DuplicateBlockOrdinal(DataError):
    pass


class EmptyCorpus(DataError):
    pass


class ZeroVocabulary(DataError):
    pass


class UnknownToken(DataError):
    pass


class ArchMismatch(DataError):
    pass


class OptMismatch(DataError):
    pass


class BadFractions(DataError):
    pass


class BadConfig(DataError):
    pass


class EmptySequence(DataError):
    pass


class DimMismatch(DataError):
    pass


class EmptyBatch(DataError):
    pass


class EmptyDataset(DataError):
    pass


class EmptyPath(DataError):
    pass


class DegenerateLabels(DataError):
    pass
