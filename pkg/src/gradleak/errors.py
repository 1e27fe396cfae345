"""Exception types shared across the toolkit.

Every failure mode that an attack or a numeric routine can report is a
distinct class so callers can branch on the cause instead of parsing
messages.  ``GradleakError`` is the common base.
"""


class GradleakError(Exception):
    """Base class for all toolkit errors."""


class NotInvertible(GradleakError):
    """A scalar has no inverse modulo q (gcd(a, q) != 1)."""


class Singular(GradleakError):
    """A matrix has no inverse modulo q."""


class DependentRows(GradleakError):
    """Basis rows are linearly dependent over the rationals."""


class BlockTooLarge(GradleakError):
    """BKZ enumeration exceeded its node budget."""


class RankMismatch(GradleakError):
    """A recovered lattice does not have the expected rank."""


class NoInvertibleBlock(GradleakError):
    """No r x r submatrix of the sample matrix is invertible mod q."""


class NotEnoughBinaryVectors(GradleakError):
    """Fewer than B independent binary vectors found in the reduced basis."""


class SystemUnderdetermined(GradleakError):
    """Too few rows to linearize the quadratic system (need ~B^2)."""


class NoBinarySolution(GradleakError):
    """The solution space yields no valid binary weight matrix."""


class DidNotConverge(GradleakError):
    """Moment descent exhausted its restart/iteration budget."""


class NoInvertibleSubmatrix(GradleakError):
    """No B x B row submatrix of the weight matrix is invertible mod q."""


class NoActiveNeuron(GradleakError):
    """All first-layer neurons are dead; the B=1 closed form is unusable."""


class Overflow(GradleakError):
    """A real value exceeds the representable range of the encoding."""


class RankDeficientMask(GradleakError):
    """The ReLU activation mask does not have full hidden rank."""
