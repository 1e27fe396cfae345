"""Exact integer and modular matrix algebra.

Everything here is arbitrary-precision: scalars are Python ints, matrices
are immutable row-major grids of them.  No floating point enters any code
path, so results are exact and reproducible.  The modular routines accept
composite moduli; unit pivots are manufactured with 2x2 unimodular row
transforms where plain Gaussian elimination would get stuck.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gcd

from .errors import NotInvertible, Singular

Rows = list[list[int]]


def egcd(a: int, b: int) -> tuple[int, int, int]:
    """Extended Euclid: returns (g, s, t) with g = gcd(a, b) >= 0 and s*a + t*b = g."""
    old_r, r = a, b
    old_s, s = 1, 0
    old_t, t = 0, 1
    while r:
        q = old_r // r
        old_r, r = r, old_r - q * r
        old_s, s = s, old_s - q * s
        old_t, t = t, old_t - q * t
    if old_r < 0:
        old_r, old_s, old_t = -old_r, -old_s, -old_t
    return old_r, old_s, old_t


def mod_inv(a: int, q: int) -> int:
    """Inverse of a modulo q, in [0, q). Raises NotInvertible if gcd(a, q) != 1."""
    g, s, _ = egcd(a % q, q)
    if g != 1:
        raise NotInvertible(f"{a} has no inverse mod {q} (gcd={g})")
    return s % q


@dataclass(frozen=True)
class Modulus:
    """A modulus q >= 2 for residue arithmetic."""

    q: int

    def __post_init__(self) -> None:
        if self.q < 2:
            raise ValueError("modulus must be >= 2")


@dataclass(frozen=True)
class IntMatrix:
    """Immutable dense matrix of arbitrary-precision integers (row-major)."""

    rows: int
    cols: int
    data: tuple[tuple[int, ...], ...]

    @staticmethod
    def from_rows(rows: Rows | tuple) -> "IntMatrix":
        data = tuple(tuple(int(x) for x in r) for r in rows)
        nrows = len(data)
        ncols = len(data[0]) if nrows else 0
        if any(len(r) != ncols for r in data):
            raise ValueError("ragged rows")
        return IntMatrix(nrows, ncols, data)

    @staticmethod
    def identity(n: int) -> "IntMatrix":
        return IntMatrix.from_rows([[1 if i == j else 0 for j in range(n)] for i in range(n)])

    @staticmethod
    def zeros(r: int, c: int) -> "IntMatrix":
        return IntMatrix(r, c, tuple(tuple(0 for _ in range(c)) for _ in range(r)))

    def to_lists(self) -> Rows:
        return [list(r) for r in self.data]

    def row(self, i: int) -> tuple[int, ...]:
        return self.data[i]

    def transpose(self) -> "IntMatrix":
        return IntMatrix.from_rows([list(col) for col in zip(*self.data)] if self.rows else [])

    def __mul__(self, other: "IntMatrix") -> "IntMatrix":
        if self.cols != other.rows:
            raise ValueError(f"shape mismatch {self.rows}x{self.cols} * {other.rows}x{other.cols}")
        ot = list(zip(*other.data))
        return IntMatrix.from_rows(
            [[sum(a * b for a, b in zip(row, col)) for col in ot] for row in self.data]
        )

    def __add__(self, other: "IntMatrix") -> "IntMatrix":
        if (self.rows, self.cols) != (other.rows, other.cols):
            raise ValueError("shape mismatch")
        return IntMatrix.from_rows(
            [[a + b for a, b in zip(r1, r2)] for r1, r2 in zip(self.data, other.data)]
        )

    def __sub__(self, other: "IntMatrix") -> "IntMatrix":
        if (self.rows, self.cols) != (other.rows, other.cols):
            raise ValueError("shape mismatch")
        return IntMatrix.from_rows(
            [[a - b for a, b in zip(r1, r2)] for r1, r2 in zip(self.data, other.data)]
        )

    def mod(self, q: int) -> "IntMatrix":
        return IntMatrix.from_rows([[x % q for x in r] for r in self.data])


def hnf(m: IntMatrix) -> IntMatrix:
    """Row-style Hermite Normal Form of the row lattice of ``m``.

    Pivots are positive, entries above each pivot lie in [0, pivot), and
    zero rows are dropped, which makes the result a canonical form: two
    integer matrices generate the same row lattice iff their HNFs are equal.
    """
    rows = m.to_lists()
    return IntMatrix.from_rows(hnf_rows(rows)) if rows else m


def hnf_rows(rows: Rows) -> Rows:
    """HNF on raw row lists (in-place friendly core of :func:`hnf`)."""
    work = [r[:] for r in rows]
    nrows = len(work)
    ncols = len(work[0]) if nrows else 0
    r = 0
    for c in range(ncols):
        if r >= nrows:
            break
        piv = next((i for i in range(r, nrows) if work[i][c] != 0), None)
        if piv is None:
            continue
        work[r], work[piv] = work[piv], work[r]
        # zero entries below the pivot with 2x2 unimodular transforms
        for i in range(r + 1, nrows):
            if work[i][c] == 0:
                continue
            a, b = work[r][c], work[i][c]
            g, s, t = egcd(a, b)
            ag, bg = a // g, b // g
            wr, wi = work[r], work[i]
            work[r] = [s * x + t * y for x, y in zip(wr, wi)]
            work[i] = [-bg * x + ag * y for x, y in zip(wr, wi)]
        if work[r][c] < 0:
            work[r] = [-x for x in work[r]]
        p = work[r][c]
        for i in range(r):
            f = work[i][c] // p
            if f:
                work[i] = [x - f * y for x, y in zip(work[i], work[r])]
        r += 1
    return [row for row in work[:r]]


def row_space_contains(hnf_m: IntMatrix, v: list[int]) -> bool:
    """Whether integer vector v lies in the row lattice given by an HNF basis."""
    rem = list(v)
    for row in hnf_m.data:
        c = next((j for j, x in enumerate(row) if x != 0), None)
        if c is None:
            continue
        if rem[c] % row[c] != 0:
            return False
        f = rem[c] // row[c]
        if f:
            rem = [x - f * y for x, y in zip(rem, row)]
    return all(x == 0 for x in rem)


def det_bareiss(m: IntMatrix) -> int:
    """Exact determinant via fraction-free (Bareiss) elimination."""
    if m.rows != m.cols:
        raise ValueError("determinant of a non-square matrix")
    n = m.rows
    if n == 0:
        return 1
    a = m.to_lists()
    sign = 1
    prev = 1
    for k in range(n - 1):
        if a[k][k] == 0:
            piv = next((i for i in range(k + 1, n) if a[i][k] != 0), None)
            if piv is None:
                return 0
            a[k], a[piv] = a[piv], a[k]
            sign = -sign
        akk = a[k][k]
        for i in range(k + 1, n):
            aik = a[i][k]
            ai, ak = a[i], a[k]
            for j in range(k + 1, n):
                ai[j] = (akk * ai[j] - aik * ak[j]) // prev
            ai[k] = 0
        prev = akk
    return sign * a[n - 1][n - 1]


def det_mod(m: IntMatrix, q: Modulus | int) -> int:
    """Determinant of a square matrix reduced into [0, q)."""
    qq = q.q if isinstance(q, Modulus) else int(q)
    return det_bareiss(m) % qq


def inverse_mod(m: IntMatrix, q: Modulus | int) -> IntMatrix:
    """Inverse of a square matrix modulo q.

    Works for composite q: the triangularization uses 2x2 unimodular row
    transforms so each pivot becomes the gcd of its column, and the matrix
    is invertible iff every final pivot is a unit mod q.  Raises
    :class:`Singular` otherwise.
    """
    qq = q.q if isinstance(q, Modulus) else int(q)
    if m.rows != m.cols:
        raise ValueError("inverse of a non-square matrix")
    n = m.rows
    inv = inverse_mod_rows(m.to_lists(), qq)
    if inv is None:
        raise Singular(f"matrix is singular mod {qq}")
    return IntMatrix.from_rows(inv)


def inverse_mod_rows(rows: Rows, q: int) -> Rows | None:
    """Core of :func:`inverse_mod` on raw rows; returns None when singular."""
    n = len(rows)
    a = [[x % q for x in row] + [1 if i == j else 0 for j in range(n)] for i, row in enumerate(rows)]
    for c in range(n):
        for i in range(c + 1, n):
            if a[i][c] == 0:
                continue
            p, x = a[c][c], a[i][c]
            g, s, t = egcd(p, x)
            pg, xg = p // g, x // g
            rc, ri = a[c], a[i]
            a[c] = [(s * u + t * v) % q for u, v in zip(rc, ri)]
            a[i] = [(-xg * u + pg * v) % q for u, v in zip(rc, ri)]
        if gcd(a[c][c], q) != 1:
            return None
        inv_p = mod_inv(a[c][c], q)
        a[c] = [(x * inv_p) % q for x in a[c]]
        for i in range(c):
            f = a[i][c]
            if f:
                a[i] = [(u - f * v) % q for u, v in zip(a[i], a[c])]
    return [row[n:] for row in a]


def mat_vec(m: IntMatrix, v: list[int]) -> list[int]:
    if m.cols != len(v):
        raise ValueError("shape mismatch")
    return [sum(a * b for a, b in zip(row, v)) for row in m.data]


_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_probable_prime(n: int, rng=None, extra_rounds: int = 16) -> bool:
    """Miller-Rabin primality test.

    Deterministic for n < 3.3e24 with the fixed base set; larger inputs get
    extra random rounds (error probability < 4^-extra_rounds).
    """
    if n < 2:
        return False
    for p in _MR_BASES:
        if n % p == 0:
            return n == p
    d = n - 1
    s = 0
    while d % 2 == 0:
        d //= 2
        s += 1

    def witness(a: int) -> bool:
        x = pow(a, d, n)
        if x in (1, n - 1):
            return False
        for _ in range(s - 1):
            x = (x * x) % n
            if x == n - 1:
                return False
        return True

    for a in _MR_BASES:
        if witness(a):
            return False
    if n >= 3317044064679887385961981:
        import random as _random

        r = rng or _random.Random(n & 0xFFFFFFFF)
        for _ in range(extra_rounds):
            if witness(r.randrange(2, n - 1)):
                return False
    return True


def random_prime_bits(bits: int, rng) -> int:
    """A random prime with exactly ``bits`` bits (bits >= 2)."""
    if bits < 2:
        raise ValueError("need at least 2 bits")
    if bits == 2:
        return rng.choice([2, 3])
    while True:
        cand = rng.getrandbits(bits - 2) | (1 << (bits - 1)) | 1
        if is_probable_prime(cand):
            return cand


def rank_rational(rows: Rows) -> int:
    """Rank over Q via fraction-free elimination."""
    work = [r[:] for r in rows]
    nrows = len(work)
    ncols = len(work[0]) if nrows else 0
    rank = 0
    for c in range(ncols):
        piv = next((i for i in range(rank, nrows) if work[i][c] != 0), None)
        if piv is None:
            continue
        work[rank], work[piv] = work[piv], work[rank]
        pr = work[rank]
        for i in range(rank + 1, nrows):
            if work[i][c]:
                f, g = work[i][c], pr[c]
                work[i] = [g * x - f * y for x, y in zip(work[i], pr)]
        rank += 1
        if rank == nrows:
            break
    return rank
