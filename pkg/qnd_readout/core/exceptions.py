# qnd_readout/core/exceptions.py

class QndReadoutError(Exception):
    """Base exception for qnd-readout errors"""
    exit_code: int = 1

class ConfigurationError(QndReadoutError, ValueError):
    """Raised when a configuration value or CLI flag combination is invalid"""
    exit_code = 2

class DataError(QndReadoutError, ValueError):
    """Raised when input data is missing, malformed or inconsistent"""
    exit_code = 3

class KindMismatchError(DataError):
    """Raised when an observation kind does not match the model or decode mode"""
    pass

class NumericalError(QndReadoutError):
    """Raised when a numerical procedure fails to produce a usable result"""
    exit_code = 4

class DegenerateObservationError(NumericalError):
    """Raised when a forward-filter step propagates an all-zero belief"""
    pass
