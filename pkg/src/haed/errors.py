"""Exception types shared across the package."""


class HaedError(Exception):
    """Base class for all package errors."""


class EmptyCorpus(HaedError):
    pass


class BadMagic(HaedError):
    pass


class Truncated(HaedError):
    pass


class WindowTooLong(HaedError):
    pass


class ConfigError(HaedError):
    pass


class UnknownKey(ConfigError):
    def __init__(self, path):
        super().__init__(f"unknown config key: {path}")
        self.path = path


class TrainingDiverged(HaedError):
    pass
