"""Exception hierarchy shared by the numerics modules.

Configuration-style failures subclass ``ValueError`` so the CLI can treat them
like the loader's own errors (exit code 2). Numerical-integrity failures
subclass ``ArithmeticError`` (exit code 3).
"""


class DomainError(ValueError):
    """An argument lies outside the operation's domain."""


class CapabilityError(ValueError):
    """The request exceeds what the object or algorithm can provide."""


class KernelIntegrityError(ArithmeticError):
    """A covariance computation produced values no valid kernel can produce."""


class NonPSDError(KernelIntegrityError):
    """Cholesky factorization failed even after jitter escalation."""
