class CotSftError(Exception):
    """Base class for everything this package raises on purpose."""


class ConfigError(CotSftError):
    pass


class DataError(CotSftError):
    pass


class TrainingError(CotSftError):
    pass


class ServingError(CotSftError):
    pass
