class DataError(ValueError):
    """Bad corpus, vocabulary or token input."""


class OverLengthError(DataError):
    """A sentence has more tokens than the configured cap."""

    def __init__(self, length: int, cap: int):
        super().__init__(f"sentence has {length} tokens, cap is {cap}")
        self.length = length
        self.cap = cap


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class GraftError(ValueError):
    """SVAE and backbone cannot be paired (hidden sizes differ)."""
