"""Exception hierarchy shared by every hslab module."""


class HslabError(Exception):
    """Base class; ``code`` is a short machine-readable tag."""

    code = "hslab-error"

    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class ContractError(HslabError, ValueError):
    code = "contract-violation"


class DomainError(HslabError, ValueError):
    code = "domain-violation"


class ParameterError(HslabError, ValueError):
    code = "parameter-violation"


class InvariantError(HslabError, ValueError):
    code = "invariant-violation"


class NumericError(HslabError, ArithmeticError):
    code = "numeric-failure"


class QuadratureError(NumericError):
    code = "quadrature-failure"
