class DadError(Exception):
    """Base class for every failure raised by dadkit."""


class ConfigError(DadError, ValueError):
    """Unknown config key or a value that cannot be parsed."""


class MalformedRecordError(DadError, ValueError):
    def __init__(self, record: str, reason: str):
        super().__init__(f"Malformed record {record!r}: {reason}")
        self.record = record
        self.reason = reason


class DanglingReferenceError(DadError, KeyError):
    def __init__(self, sample_id: int):
        super().__init__(f"Cache record references sample id {sample_id} not present in the dataset")
        self.sample_id = sample_id


class DivergenceError(DadError, RuntimeError):
    """A loss or gradient became non-finite."""

    def __init__(self, message: str, *, epoch: int | None = None, batch: int | None = None):
        where = []
        if epoch is not None:
            where.append(f"epoch={epoch}")
        if batch is not None:
            where.append(f"batch={batch}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.epoch = epoch
        self.batch = batch


class MissingInputError(DadError, ValueError):
    """An objective needs a teacher, cache or discretizer that was not given."""


class CacheFormatError(DadError, ValueError):
    """A cache file is truncated, has a bad magic or an unknown version."""


class UnsupportedModelError(DadError, TypeError):
    """The model lacks a capability the operation needs."""
