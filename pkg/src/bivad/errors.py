"""Error taxonomy shared by the library and the CLI.

Every raisable condition maps to a short machine-readable code; the CLI
prints ``error:<code>: <message>`` on stderr and exits nonzero.
"""


class BivadError(Exception):
    """Base class; carries the machine-readable error code."""

    code = "error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class InvalidArgumentError(BivadError):
    code = "invalid-argument"


class NumericError(BivadError):
    code = "numeric-error"


class StateError(BivadError):
    code = "state-error"


class FormatError(BivadError):
    code = "format-error"


class IoError(BivadError):
    code = "io-error"


class ConfigError(BivadError):
    code = "config-error"


class UnsupportedMetricError(BivadError):
    code = "unsupported-metric"


class UndefinedMetricError(BivadError):
    code = "undefined-metric"
