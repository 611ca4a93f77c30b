"""Exception types shared across the package."""


class TrmQeError(Exception):
    """Base class for all package errors."""


class ShapeError(TrmQeError):
    """Tensor shapes violate an operation's contract."""


class NumericError(TrmQeError):
    """Non-finite values showed up where they must not."""


class ConfigError(TrmQeError):
    """Invalid configuration or missing input files."""


class DatasetFormatError(TrmQeError):
    """Malformed dataset file (TSV/JSONL)."""


class EmbeddingFormatError(TrmQeError):
    """Embedding file has a bad magic/version or inconsistent header."""


class EmbeddingCorruptError(EmbeddingFormatError):
    """Embedding file is truncated or internally inconsistent.

    ``record_index`` is the index of the first unreadable example.
    """

    def __init__(self, message: str, record_index: int):
        super().__init__(message)
        self.record_index = record_index


class SvdRankError(TrmQeError):
    """Requested more SVD components than the sample's rank supports."""


class MetricUndefinedError(TrmQeError):
    """A correlation is undefined (zero variance or empty input)."""


class TrainAbortError(TrmQeError):
    """Training hit a non-recoverable numeric failure."""
