"""Exception hierarchy shared by the services, the CLI and the HTTP routes.

Every error carries the process exit code the CLI should use and the HTTP status
the routes should answer with.
"""


class XbarError(Exception):
    exit_code = 1
    http_status = 400


class DomainError(XbarError):
    """A value outside its physical or logical range."""


class ShapeError(XbarError):
    """Vector or matrix dimensions that do not line up."""


class DegenerateInputError(XbarError):
    pass


class TrainingError(XbarError):
    pass


class ConfigError(XbarError):
    exit_code = 2


class DataError(XbarError):
    exit_code = 3
    http_status = 404


class IngestionError(DataError):
    http_status = 400

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class AcceptanceError(XbarError):
    exit_code = 4

    def __init__(self, failures):
        super().__init__("; ".join(failures))
        self.failures = list(failures)
