"""Exception hierarchy shared by every fedhgn module."""


class FedHGNError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(FedHGNError, ValueError):
    """An argument is outside its documented domain."""


class ContractViolation(FedHGNError, ValueError):
    """Shapes or lengths of inputs do not agree."""


class ConfigurationError(FedHGNError, ValueError):
    """A run or experiment configuration cannot be executed."""


class NumericError(FedHGNError, ArithmeticError):
    """A loss or activation became non-finite."""


class ProtocolError(FedHGNError):
    """A wire frame or round message is malformed."""


class TransportError(FedHGNError):
    """A transport could not deliver or receive a frame."""


class RunFailure(FedHGNError):
    """A federated run was aborted."""


class ParseError(FedHGNError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class IngestionError(FedHGNError, ValueError):
    """RDF triples or label rows could not be mapped onto a graph."""
