"""Exception hierarchy shared by all modules."""


class DDDError(Exception):
    pass


class InvalidInputError(DDDError, ValueError):
    pass


class ModelValidationError(InvalidInputError):
    """Spectra/MAC matrices violate the model assumptions."""


class NumericDomainError(DDDError, ArithmeticError):
    pass


class SizeLimitError(InvalidInputError):
    pass


class UnsupportedCaseError(DDDError):
    pass


class SingularJacobianError(DDDError):
    def __init__(self, x, det):
        super().__init__(f"singular Jacobian at x={x!r} (det={det:.3e})")
        self.x = x
        self.det = det


class DivergenceError(DDDError):
    def __init__(self, x, cap):
        super().__init__(f"iterate norm exceeded divergence cap {cap:g}: x={x!r}")
        self.x = x
        self.cap = cap
