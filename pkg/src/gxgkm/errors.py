"""Exception types raised across the package."""


class GxGError(Exception):
    """Base class for all package errors."""


class ValidationError(GxGError, ValueError):
    """Malformed or inconsistent input (bad genotype codes, shape mismatch, ...)."""


class InvalidGenotypeError(ValidationError):
    pass


class MonomorphicSNPError(ValidationError):
    def __init__(self, snp_id):
        super().__init__(f"SNP {snp_id!r} is monomorphic (MAF = 0); inverse-MAF weight undefined")
        self.snp_id = snp_id


class DegenerateTraitError(ValidationError):
    """Trait has zero residual variance under the intercept-only model."""


class NumericError(GxGError, ArithmeticError):
    """A factorization or linear solve failed."""


class ConvergenceError(NumericError):
    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate
