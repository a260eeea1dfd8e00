"""Exception taxonomy.

DataError covers validation and file-format problems (CLI exit code 2);
RuntimeFailure covers transport and remote-service problems (exit code 3).
"""


class InterdocError(Exception):
    pass


class DataError(InterdocError):
    pass


class RuntimeFailure(InterdocError):
    pass


# -- document / corpus validation ----------------------------------------

class EmptySections(DataError):
    pass


class EmptySection(DataError):
    pass


class EmptySegment(DataError):
    pass


class DuplicateSectionId(DataError):
    pass


class DuplicateDocId(DataError):
    pass


class BadSegmentKind(DataError):
    pass


class BadTableMarkup(DataError):
    pass


class EmptyQuery(DataError):
    pass


# -- ingestion & file formats ---------------------------------------------

class NoContent(DataError):
    pass


class MalformedInput(DataError):
    pass


class NotATable(DataError):
    pass


class SchemaError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DanglingReference(DataError):
    pass


class BadMagic(DataError):
    pass


class VersionMismatch(DataError):
    pass


class Truncated(DataError):
    pass


# -- numerics & training ----------------------------------------------------

class DimMismatch(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class ZeroNormEmbedding(DataError):
    def __init__(self, role, index):
        super().__init__(f"{role} embedding {index} has zero norm")
        self.role = role
        self.index = index


class InsufficientNegatives(DataError):
    pass


class EncodeFailure(DataError):
    pass


# -- remote encoder client ---------------------------------------------------

class Transport(RuntimeFailure):
    pass


class ProtocolError(RuntimeFailure):
    pass


class ServiceError(RuntimeFailure):
    def __init__(self, status, message):
        super().__init__(f"service returned {status}: {message}")
        self.status = status
