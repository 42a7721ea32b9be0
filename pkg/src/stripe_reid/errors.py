"""Exception hierarchy shared by every module."""


class StripeReidError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(StripeReidError):
    """Input file does not parse as the expected schema."""

    def __init__(self, message, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.field = field


class ValidationError(StripeReidError):
    """Data parses but violates a domain invariant."""


class SplitError(StripeReidError):
    pass


class DegeneratePartError(StripeReidError):
    pass


class ProjectionError(StripeReidError):
    pass


class BatchShapeError(StripeReidError):
    pass


class SamplerError(StripeReidError):
    pass


class NumericalError(StripeReidError):
    """A non-finite value appeared in a named tensor."""

    def __init__(self, tensor_name):
        super().__init__(f"non-finite values in {tensor_name}")
        self.tensor_name = tensor_name


class ProtocolError(StripeReidError):
    pass


class LookupFailure(StripeReidError, KeyError):
    """A referenced sample has no embedding / feature record."""

    def __init__(self, sample_id):
        super().__init__(f"no embedding for sample {sample_id!r}")
        self.sample_id = sample_id

    def __str__(self):
        return self.args[0]


class MatchingError(StripeReidError):
    pass


class UndefinedOKSError(StripeReidError):
    pass
