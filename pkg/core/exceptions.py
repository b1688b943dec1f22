"""
Custom exceptions for the CascadeSplit split-inference framework.

Every class carries the CLI exit status and the one-word category printed
on the machine-parsable error line.
"""


class CascadeSplitError(Exception):
    """Base exception for CascadeSplit"""
    exit_status = 1
    category = "internal"


class ConfigurationError(CascadeSplitError):
    """Configuration, usage or initialization error"""
    exit_status = 2
    category = "usage"


class DomainError(CascadeSplitError):
    """Invalid numeric input, dimension mismatch or illegal model edit"""
    exit_status = 3
    category = "domain"


class DataError(CascadeSplitError):
    """Malformed file, missing column or missing artifact"""
    exit_status = 3
    category = "data"

    def __init__(self, message: str, line: int = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TrainingError(CascadeSplitError):
    """Training diverged or training data cannot produce a usable model"""
    exit_status = 4
    category = "training"


class NetworkError(CascadeSplitError):
    """Offload path failure"""
    exit_status = 5
    category = "network"


class RemoteTimeoutError(NetworkError):
    """Server did not answer within the timeout"""
    category = "network-timeout"


class RemoteConnectionError(NetworkError):
    """Server unreachable or connection dropped"""
    category = "network-connection"


class ProtocolError(NetworkError):
    """Frame or message violates the wire protocol"""
    category = "network-protocol"

    def __init__(self, message: str, code: str = "protocol"):
        super().__init__(message)
        self.code = code
