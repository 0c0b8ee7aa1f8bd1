"""
Exception hierarchy shared by every padic_polar module and mapped to CLI exit codes.
"""


class PadicPolarError(Exception):
    """Base class for all library errors"""


class ConfigError(PadicPolarError, ValueError):
    """Invalid settings, arguments or input documents"""


class InvalidPrime(ConfigError):
    """The prime is not an odd prime"""


class DivisionByZero(PadicPolarError, ZeroDivisionError):
    """Division by the exact zero scalar"""


class InsufficientPrecision(PadicPolarError):
    """
    All retained digits cancelled, or a result needs digits the operands do not carry.
    Callers retry the whole computation at doubled precision.
    """


class PrecisionExhausted(InsufficientPrecision):
    """Retrying reached the configured precision cap"""


class NotASquare(PadicPolarError, ValueError):
    pass


class SingularToPrecision(PadicPolarError, ValueError):
    """No pivot of finite valuation remains"""


class RankDeficient(PadicPolarError, ValueError):
    pass


class Degenerate(PadicPolarError, ValueError):
    """The quadratic form has zero determinant"""


class NotRepresented(PadicPolarError, ValueError):
    pass


class InvariantMismatch(PadicPolarError, ValueError):
    """Two quadratic forms differ in dimension, discriminant or Hasse invariant"""


class InternalInvariantViolation(PadicPolarError):
    """A certificate failed a check that holds for every legitimate input"""
