"""Integer lattice machinery: exact LLL, BKZ, orthogonal lattices, completion.

Reduction is performed with the all-integer variant of LLL (integral
Gram-Schmidt bookkeeping: lambda[i][j] = d[j+1]*mu[i][j] with d[i] the
leading Gram determinants), so every quantity in the algorithm is an exact
integer and the Lovasz test is an exact comparison.  gmpy2 integers are
used when available purely as a faster int; semantics are identical
without them.

Orthogonal complements are computed two ways and cross-checked:

* scaled embedding: LLL-reduce the rows of [c*B^T | I]; the rows whose left
  block vanished generate exactly the (saturated) orthogonal lattice
  whenever their count is right, which is verified;
* exact kernel: mod-p echelon to locate pivots, Dixon p-adic lifting for
  the rational solution space, then a congruence-lattice step that
  saturates the result.  Every kernel vector is verified exactly.

The embedding route is preferred at small ambient dimension, the kernel
route at large; a failed verification falls through to the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import BlockTooLarge, DependentRows
from .intmat import IntMatrix, Rows, egcd, hnf_rows, rank_rational

try:
    from gmpy2 import mpz as _mpz
except ImportError:  # pragma: no cover - gmpy2 is a declared dependency
    _mpz = int

DEFAULT_DELTA = Fraction(99, 100)

# Above this ambient dimension the scaled-embedding orthogonal computation
# switches to the exact-kernel route (embedding cost grows like another
# full-size reduction, the kernel route stays cheap).
EMBED_AMBIENT_LIMIT = 160

# ~2^25 primes: n * p^2 stays well inside int64 for n <= 2000.
_DIXON_PRIMES = (33554467, 33554473, 33554501, 33554503)


@dataclass(frozen=True)
class LatticeBasis:
    """An ordered, independent set of integer row vectors."""

    vectors: IntMatrix
    rank: int

    @staticmethod
    def from_rows(rows: Rows | tuple) -> "LatticeBasis":
        m = IntMatrix.from_rows(rows)
        return LatticeBasis(m, m.rows)

    @property
    def ambient(self) -> int:
        return self.vectors.cols

    def to_lists(self) -> Rows:
        return self.vectors.to_lists()


@dataclass(frozen=True)
class GsoData:
    """Exact Gram-Schmidt data: mu[i][j] (j < i) and squared norms."""

    mu: tuple[tuple[Fraction, ...], ...]
    norms_sq: tuple[Fraction, ...]


def gram_schmidt_exact(basis: LatticeBasis) -> GsoData:
    """Exact rational GSO; raises DependentRows when a GSO vector vanishes."""
    rows = basis.to_lists()
    n = len(rows)
    star = [[Fraction(x) for x in r] for r in rows]
    mu: list[list[Fraction]] = [[] for _ in range(n)]
    norms: list[Fraction] = []
    for i in range(n):
        for j in range(i):
            m_ij = _frac_dot(star[i], star[j]) / norms[j]
            mu[i].append(m_ij)
            star[i] = [a - m_ij * b for a, b in zip(star[i], star[j])]
        n2 = _frac_dot(star[i], star[i])
        if n2 == 0:
            raise DependentRows(f"row {i} is dependent on earlier rows")
        norms.append(n2)
    return GsoData(tuple(tuple(r) for r in mu), tuple(norms))


def _frac_dot(a, b) -> Fraction:
    return sum((x * y for x, y in zip(a, b)), Fraction(0))


def _as_delta(delta) -> tuple[int, int]:
    if isinstance(delta, float):
        delta = Fraction(delta).limit_denominator(10**6)
    delta = Fraction(delta)
    if not Fraction(1, 4) < delta < 1:
        raise ValueError(f"delta must be in (1/4, 1), got {delta}")
    return delta.numerator, delta.denominator


def _roundq(a, b):
    # nearest integer to a/b for b > 0 (ties toward +inf); |a - q*b| <= b/2
    return (2 * a + b) // (2 * b)


def _lll_core(b: list, d: list, lam: list, nd: int, dd: int) -> None:
    """Integral LLL main loop; mutates basis rows b and GSO data d, lam."""
    n = len(b)
    m = len(b[0]) if n else 0

    def redi(k: int, l: int) -> None:
        lk = lam[k]
        if 2 * abs(lk[l]) > d[l + 1]:
            q = _roundq(lk[l], d[l + 1])
            bk, bl = b[k], b[l]
            for idx in range(m):
                bk[idx] -= q * bl[idx]
            ll = lam[l]
            for j in range(l):
                lk[j] -= q * ll[j]
            lk[l] -= q * d[l + 1]

    k = 1
    while k < n:
        redi(k, k - 1)
        lkk = lam[k][k - 1]
        if dd * (d[k + 1] * d[k - 1]) < nd * d[k] * d[k] - dd * lkk * lkk:
            # Lovasz failed: swap rows k-1, k and patch the integral GSO
            b[k - 1], b[k] = b[k], b[k - 1]
            lamk, lamk1 = lam[k], lam[k - 1]
            for j in range(k - 1):
                lamk[j], lamk1[j] = lamk1[j], lamk[j]
            lam_ = lamk[k - 1]
            newd = (d[k - 1] * d[k + 1] + lam_ * lam_) // d[k]
            for i in range(k + 1, n):
                li = lam[i]
                t = li[k]
                li[k] = (d[k + 1] * li[k - 1] - lam_ * t) // d[k]
                li[k - 1] = (newd * t + lam_ * li[k]) // d[k + 1]
            d[k] = newd
            k = max(1, k - 1)
        else:
            for l in range(k - 2, -1, -1):
                redi(k, l)
            k += 1


def _init_gso_generic(b: list) -> tuple[list, list]:
    """Integral GSO init for arbitrary independent rows."""
    n = len(b)
    one = _mpz(1)
    d = [one] * (n + 1)
    lam = [[_mpz(0)] * i for i in range(n)]
    for i in range(n):
        bi = b[i]
        for j in range(i + 1):
            t = sum(x * y for x, y in zip(bi, b[j]))
            lami = lam[i]
            lamj = lam[j]
            for k in range(j):
                t = (d[k + 1] * t - lami[k] * lamj[k]) // d[k]
            if j < i:
                lami[j] = t
            elif t <= 0:
                raise DependentRows(f"row {i} is dependent on earlier rows")
            else:
                d[i + 1] = t
    return d, lam


def lll_rows(rows: Rows, delta=DEFAULT_DELTA) -> Rows:
    """LLL-reduce raw integer rows, returning new rows (exact arithmetic)."""
    nd, dd = _as_delta(delta)
    b = [[_mpz(x) for x in r] for r in rows]
    d, lam = _init_gso_generic(b)
    _lll_core(b, d, lam, nd, dd)
    return [[int(x) for x in r] for r in b]


def lll_rows_qblock(coef_rows: Rows, q: int, ambient: int, delta=DEFAULT_DELTA) -> Rows:
    """LLL-reduce the lattice [[q*I_r, 0], [C, I_{n-r}]] without generic init.

    coef_rows is the (n-r) x r block C.  The initial basis is triangular, so
    its integral GSO is known in closed form (d[i] = q^{2*min(i,r)},
    lambda[i][j] = C[i-r][j] * q^{2j+1} for j < r <= i, zero elsewhere);
    skipping the generic O(n^3) recurrence keeps large instances tractable.
    Entries of C are centered mod q first, a lattice-preserving row shift.
    """
    nd, dd = _as_delta(delta)
    n = ambient
    r = n - len(coef_rows)
    if coef_rows and len(coef_rows[0]) != r:
        raise ValueError("coefficient block has wrong shape")
    qz = _mpz(q)
    half = q // 2
    b = []
    for i in range(r):
        row = [_mpz(0)] * n
        row[i] = qz
        b.append(row)
    cent = []
    for i, crow in enumerate(coef_rows):
        c = [(x % q) - q if (x % q) > half else (x % q) for x in crow]
        cent.append([_mpz(x) for x in c])
        row = [_mpz(x) for x in c] + [_mpz(0)] * (n - r)
        row[r + i] = _mpz(1)
        b.append(row)
    qpow = [qz ** (2 * i) for i in range(r + 1)]
    d = [qpow[min(i, r)] for i in range(n + 1)]
    lam = []
    for i in range(n):
        if i < r:
            lam.append([_mpz(0)] * i)
        else:
            left = [cent[i - r][j] * qpow[j] * qz for j in range(r)]
            lam.append(left + [_mpz(0)] * (i - r))
    _lll_core(b, d, lam, nd, dd)
    return [[int(x) for x in row] for row in b]


def lll_reduce(basis: LatticeBasis, delta=DEFAULT_DELTA) -> LatticeBasis:
    """LLL-reduce a basis: size-reduced and Lovasz-compliant, same lattice."""
    return LatticeBasis.from_rows(lll_rows(basis.to_lists(), delta))


def is_lll_reduced(basis: LatticeBasis, delta=DEFAULT_DELTA) -> bool:
    """Exact check of the size-reduction and Lovasz conditions."""
    nd, dd = _as_delta(delta)
    dlt = Fraction(nd, dd)
    gso = gram_schmidt_exact(basis)
    n = basis.rank
    half = Fraction(1, 2)
    for i in range(n):
        for j in range(i):
            if abs(gso.mu[i][j]) > half:
                return False
    for i in range(1, n):
        mu2 = gso.mu[i][i - 1] ** 2
        if gso.norms_sq[i] < (dlt - mu2) * gso.norms_sq[i - 1]:
            return False
    return True


def _enum_shortest(gso: GsoData, k: int, j: int, budget: int):
    """Exact Schnorr-Euchner enumeration over the projected block [k, j).

    Returns (coeffs, norm_sq) for the shortest projected vector strictly
    shorter than ||b*_k||^2, or None when nothing shorter exists.  Raises
    BlockTooLarge when the node budget is exhausted.
    """
    norms = gso.norms_sq
    mu = gso.mu
    bound = norms[k]
    best: tuple | None = None
    nodes = 0
    coeffs = [0] * (j - k)

    def visit(t: int, partial: Fraction, z: int, center: Fraction) -> bool:
        """Try value z at level t; returns False when z's side is exhausted."""
        nonlocal nodes, best, bound
        nodes += 1
        if nodes > budget:
            raise BlockTooLarge(f"enumeration exceeded {budget} nodes")
        total = partial + (z - center) ** 2 * norms[t]
        if total >= bound:
            return False
        coeffs[t - k] = z
        if t == k:
            if any(coeffs):
                best = (tuple(coeffs), total)
                bound = total
        else:
            descend(t - 1, total)
        coeffs[t - k] = 0
        return True

    def descend(t: int, partial: Fraction) -> None:
        center = -sum(
            (coeffs[l - k] * mu[l][t] for l in range(t + 1, j) if coeffs[l - k]),
            Fraction(0),
        )
        z0 = _roundq(center.numerator, center.denominator)
        visit(t, partial, z0, center)
        step = 1
        hi = lo = True
        while hi or lo:
            if hi:
                hi = visit(t, partial, z0 + step, center)
            if lo:
                lo = visit(t, partial, z0 - step, center)
            step += 1

    descend(j - 1, Fraction(0))
    return best


def enum_close_vectors(
    rows: Rows, target: list[float], radius_sq: float, budget: int = 10**7
) -> list[tuple[int, ...]]:
    """Coefficients of all lattice vectors within radius of a target point.

    Distances are measured inside the lattice span (the target's orthogonal
    component is constant and subtracted from the radius).  Pruning is
    floating point with a safety margin, so the output can only overshoot;
    callers verify candidates exactly.  Raises BlockTooLarge past the node
    budget.
    """
    n = len(rows)
    m = len(rows[0])
    star = [np.array(r, dtype=float) for r in rows]
    mu = [[0.0] * n for _ in range(n)]
    norms = [0.0] * n
    for i in range(n):
        v = np.array(rows[i], dtype=float)
        for j in range(i):
            mu[i][j] = float(v @ star[j]) / norms[j]
            v = v - mu[i][j] * star[j]
        star[i] = v
        norms[i] = float(v @ v)
        if norms[i] <= 0.0:
            raise DependentRows(f"row {i} is dependent on earlier rows")
    t = np.array(target, dtype=float)
    tau = [float(t @ star[i]) / norms[i] for i in range(n)]
    proj_sq = sum(tau[i] ** 2 * norms[i] for i in range(n))
    perp_sq = float(t @ t) - proj_sq
    bound = radius_sq - perp_sq + 0.75 + 1e-6 * max(1.0, radius_sq)
    out: list[tuple[int, ...]] = []
    if bound < 0:
        return out
    nodes = 0
    coeffs = [0] * n

    def visit(lvl: int, partial: float, z: int, center: float) -> bool:
        nonlocal nodes
        nodes += 1
        if nodes > budget:
            raise BlockTooLarge(f"enumeration exceeded {budget} nodes")
        total = partial + (z - center) ** 2 * norms[lvl]
        if total > bound:
            return False
        coeffs[lvl] = z
        if lvl == 0:
            out.append(tuple(coeffs))
        else:
            descend(lvl - 1, total)
        coeffs[lvl] = 0
        return True

    def descend(lvl: int, partial: float) -> None:
        center = tau[lvl] - sum(
            coeffs[l] * mu[l][lvl] for l in range(lvl + 1, n) if coeffs[l]
        )
        z0 = round(center)
        visit(lvl, partial, z0, center)
        step = 1
        hi = lo = True
        while hi or lo:
            if hi:
                hi = visit(lvl, partial, z0 + step, center)
            if lo:
                lo = visit(lvl, partial, z0 - step, center)
            step += 1

    descend(n - 1, 0.0)
    return out


def _unimodular_first_row(c: list[int]) -> Rows:
    """A unimodular matrix whose first row is the primitive vector c."""
    n = len(c)
    vec = list(c)
    pinv = [[1 if i == j else 0 for j in range(n)] for i in range(n)]
    for i in range(n - 1, 0, -1):
        a, bb = vec[i - 1], vec[i]
        if bb == 0:
            continue
        g, s, t = egcd(a, bb)
        ag, bg = a // g, bb // g
        vec[i - 1], vec[i] = g, 0
        for row in pinv:
            x, y = row[i - 1], row[i]
            row[i - 1] = x * ag + y * bg
            row[i] = -x * t + y * s
    if vec[0] == -1:
        for row in pinv:
            row[0] = -row[0]
    elif vec[0] != 1:
        raise ValueError("coefficient vector is not primitive")
    # first row of pinv^T is the first column of pinv, i.e. c itself
    return [list(col) for col in zip(*pinv)]


def bkz_reduce(
    basis: LatticeBasis,
    beta: int,
    delta=DEFAULT_DELTA,
    node_budget: int = 10**7,
    max_tours: int = 32,
) -> LatticeBasis:
    """Block-Korkine-Zolotarev reduction with exact enumeration per block.

    The output spans the same lattice and is at least LLL(delta)-reduced.
    With beta equal to the rank the first vector attains the exact lattice
    minimum (enumeration is complete at desk-scale ranks).
    """
    n = basis.rank
    if not 2 <= beta <= n:
        raise ValueError(f"beta must be in [2, rank], got {beta} for rank {n}")
    rows = lll_rows(basis.to_lists(), delta)
    for _ in range(max_tours):
        improved = False
        gso = None
        for k in range(n - 1):
            jj = min(k + beta, n)
            if gso is None:
                gso = gram_schmidt_exact(LatticeBasis.from_rows(rows))
            found = _enum_shortest(gso, k, jj, node_budget)
            if found is None:
                continue
            coeffs, _ = found
            trans = _unimodular_first_row(list(coeffs))
            block = rows[k:jj]
            rows[k:jj] = [
                [sum(t * x for t, x in zip(trow, col)) for col in zip(*block)]
                for trow in trans
            ]
            rows = lll_rows(rows, delta)
            gso = None
            improved = True
        if not improved:
            break
    return LatticeBasis.from_rows(rows)


# ---------------------------------------------------------------------------
# exact integer kernels


def _mod_p_echelon(m: np.ndarray, p: int) -> tuple[np.ndarray, list[int], list[int]]:
    """Row echelon of m mod p; returns (echelon, pivot_rows, pivot_cols)."""
    m = m % p
    nrows, ncols = m.shape
    piv_rows: list[int] = []
    piv_cols: list[int] = []
    r = 0
    row_order = list(range(nrows))
    for c in range(ncols):
        if r >= nrows:
            break
        nz = np.nonzero(m[r:, c])[0]
        if nz.size == 0:
            continue
        pr = r + int(nz[0])
        if pr != r:
            m[[r, pr]] = m[[pr, r]]
            row_order[r], row_order[pr] = row_order[pr], row_order[r]
        inv = pow(int(m[r, c]), -1, p)
        m[r] = (m[r] * inv) % p
        rest = np.nonzero(m[r + 1 :, c])[0]
        if rest.size:
            idx = rest + r + 1
            m[idx] = (m[idx] - np.outer(m[idx, c], m[r])) % p
        piv_rows.append(row_order[r])
        piv_cols.append(c)
        r += 1
    return m, piv_rows, piv_cols


def _mod_p_inverse(a: np.ndarray, p: int) -> np.ndarray | None:
    n = a.shape[0]
    aug = np.concatenate([a % p, np.eye(n, dtype=np.int64)], axis=1)
    for c in range(n):
        nz = np.nonzero(aug[c:, c])[0]
        if nz.size == 0:
            return None
        pr = c + int(nz[0])
        if pr != c:
            aug[[c, pr]] = aug[[pr, c]]
        inv = pow(int(aug[c, c]), -1, p)
        aug[c] = (aug[c] * inv) % p
        others = np.nonzero(aug[:, c])[0]
        others = others[others != c]
        if others.size:
            aug[others] = (aug[others] - np.outer(aug[others, c], aug[c])) % p
    return aug[:, n:]


def _gcd(a: int, b: int) -> int:
    while b:
        a, b = b, a % b
    return a


def _rational_reconstruct(x: int, m: int) -> tuple[int, int] | None:
    """Recover n/d with x*d = n mod m and |n|, d <= sqrt(m/2)."""
    bound = math.isqrt(m // 2)
    r0, r1 = m, x % m
    t0, t1 = 0, 1
    while r1 > bound:
        qq = r0 // r1
        r0, r1 = r1, r0 - qq * r1
        t0, t1 = t1, t0 - qq * t1
    if t1 == 0 or abs(t1) > bound:
        return None
    if t1 < 0:
        r1, t1 = -r1, -t1
    return r1, t1


def _dixon_solve(a_rows: Rows, b_cols: list[list[int]], p: int):
    """Solve A x = b exactly for each b via p-adic lifting.

    Returns [(numerators, denominator)] per right-hand side, or None when A
    is singular mod p (caller retries with another prime).
    """
    n = len(a_rows)
    max_a = max(1, max(abs(x) for row in a_rows for x in row))
    a_np = np.array(a_rows, dtype=np.int64) if max_a * p * n < 2**62 else np.array(a_rows, dtype=object)
    ainv = _mod_p_inverse(np.array([[x % p for x in r] for r in a_rows], dtype=np.int64), p)
    if ainv is None:
        return None
    had_bits = n * (0.5 * math.log2(max(2, n)) + math.log2(max(2, max_a)))
    iters = int(2 * had_bits / math.log2(p)) + 4
    results = []
    for b in b_cols:
        r = np.array(b, dtype=object)
        digits = []
        for _ in range(iters):
            r_mod = np.array([int(x) % p for x in r], dtype=np.int64)
            y = (ainv @ r_mod) % p
            digits.append(y)
            ay = a_np @ y if a_np.dtype == object else (a_np * y[np.newaxis, :]).sum(axis=1, dtype=object)
            r = (r - ay) // p
        mod = p**iters
        acc = [0] * n
        pk = 1
        for y in digits:
            for i in range(n):
                yi = int(y[i])
                if yi:
                    acc[i] += yi * pk
            pk *= p
        parts = []
        den_l = 1
        for i in range(n):
            rec = _rational_reconstruct(acc[i] % mod, mod)
            if rec is None:
                return None
            parts.append(rec)
            den_l = den_l * rec[1] // _gcd(den_l, rec[1])
        nums = [num * (den_l // den) for num, den in parts]
        results.append((nums, den_l))
    return results


def _annihilator_mod_small(w: list[int], modulus: int) -> Rows:
    """Basis of {z : <z, w> = 0 mod modulus} via a small HNF kernel."""
    n = len(w)
    stacked = [[w[i]] + [1 if j == i else 0 for j in range(n + 1)] for i in range(n)]
    stacked.append([-modulus] + [1 if j == n else 0 for j in range(n + 1)])
    h = hnf_rows(stacked)
    return [row[1 : n + 1] for row in h if row[0] == 0]


def _congruence_lattice(t_rows: Rows, modulus: int, dim: int) -> Rows:
    """Basis of {v in Z^dim : <t, v> = 0 mod modulus for each row t}."""
    basis = [[1 if i == j else 0 for j in range(dim)] for i in range(dim)]
    if modulus == 1:
        return basis
    for t in t_rows:
        w = [sum(bv * tv for bv, tv in zip(brow, t)) % modulus for brow in basis]
        if all(x == 0 for x in w):
            continue
        coef = _annihilator_mod_small(w, modulus)
        basis = hnf_rows(
            [[sum(c * bv for c, bv in zip(crow, col)) for col in zip(*basis)] for crow in coef]
        )
    return basis


def integer_kernel(mat_rows: Rows, ncols: int) -> Rows:
    """Basis of the saturated right kernel {y in Z^ncols : M y = 0}.

    Mod-p echelon locates the pivot structure, Dixon lifting recovers the
    rational solutions, and a congruence step saturates the lattice.  Every
    vector is verified exactly; a prime giving inconsistent results is
    discarded (mod-p rank can only undershoot the true rank).
    """
    rows = [r for r in mat_rows if any(x != 0 for x in r)]
    if not rows:
        return [[1 if i == j else 0 for j in range(ncols)] for i in range(ncols)]
    for p in _DIXON_PRIMES:
        res = _kernel_attempt(rows, ncols, p)
        if res is not None:
            return res
    return _kernel_hnf(rows, ncols)


def _kernel_attempt(rows: Rows, ncols: int, p: int) -> Rows | None:
    a_mod = np.array([[x % p for x in r] for r in rows], dtype=np.int64)
    _, piv_rows, piv_cols = _mod_p_echelon(a_mod, p)
    rho = len(piv_cols)
    if rho == ncols:
        return []  # mod-p rank never exceeds the true rank, so kernel is empty
    free_cols = [c for c in range(ncols) if c not in set(piv_cols)]
    a_sq = [[rows[i][c] for c in piv_cols] for i in piv_rows]
    rhs = [[-rows[i][f] for i in piv_rows] for f in free_cols]
    sols = _dixon_solve(a_sq, rhs, p)
    if sols is None:
        return None
    big_d = 1
    for _, den in sols:
        big_d = big_d * den // _gcd(big_d, den)
    t_cols = []
    for nums, den in sols:
        f = big_d // den
        t_cols.append([nv * f for nv in nums])
    # congruences: for pivot coordinate i, sum_f T[i][f] * v_f = 0 mod big_d
    nf = len(free_cols)
    t_rows = [[t_cols[fi][i] for fi in range(nf)] for i in range(rho)]
    vbasis = _congruence_lattice(t_rows, big_d, nf)
    out = []
    for v in vbasis:
        y = [0] * ncols
        for fi, f in enumerate(free_cols):
            y[f] = v[fi]
        for i, c in enumerate(piv_cols):
            num = sum(t_cols[fi][i] * v[fi] for fi in range(nf) if v[fi])
            if num % big_d != 0:
                return None
            y[c] = num // big_d
        out.append(y)
    if len(out) != ncols - rho:
        return None
    for y in out:
        for r in rows:
            if sum(a * b for a, b in zip(r, y)) != 0:
                return None
    return out


def _kernel_hnf(rows: Rows, ncols: int) -> Rows:
    """Exact kernel via HNF of [M^T | I]; fine for small matrices."""
    nr = len(rows)
    mt = [
        [rows[i][c] for i in range(nr)] + [1 if j == c else 0 for j in range(ncols)]
        for c in range(ncols)
    ]
    h = hnf_rows(mt)
    return [row[nr:] for row in h if all(x == 0 for x in row[:nr])]


# ---------------------------------------------------------------------------
# orthogonal lattice and completion


def orthogonal_lattice(l: LatticeBasis, ambient: int) -> LatticeBasis:
    """Basis of L-perp = {y in Z^ambient : <x, y> = 0 for all x in L}."""
    if l.ambient != ambient:
        raise ValueError("basis does not live in Z^ambient")
    rows = [r for r in l.to_lists() if any(r)]
    if not rows:
        return LatticeBasis.from_rows(
            [[1 if i == j else 0 for j in range(ambient)] for i in range(ambient)]
        )
    if ambient <= EMBED_AMBIENT_LIMIT:
        out = _orthogonal_by_embedding(rows, ambient)
        if out is not None:
            return LatticeBasis.from_rows(out)
    ker = integer_kernel(rows, ambient)
    if not ker:
        return LatticeBasis(IntMatrix.zeros(0, ambient), 0)
    if len(ker) <= 64:
        ker = lll_rows(ker)
    return LatticeBasis.from_rows(ker)


def _orthogonal_by_embedding(rows: Rows, ambient: int) -> Rows | None:
    """Scaled-embedding orthogonal computation; None when extraction fails.

    Any basis of the embedded lattice whose zero-left-block vectors number
    exactly ambient - rank generates the full orthogonal lattice, so the
    count check below is a proof of correctness, not a heuristic.
    """
    r = len(rows)
    max_e = max(1, max(abs(x) for row in rows for x in row))
    expect = ambient - _rank_exactish(rows, ambient)
    scale = (ambient * max_e) ** 2 + 1
    for _ in range(3):
        emb = [
            [scale * rows[k][i] for k in range(r)]
            + [1 if j == i else 0 for j in range(ambient)]
            for i in range(ambient)
        ]
        red = lll_rows(emb)
        zero_left = [row[r:] for row in red if all(x == 0 for x in row[:r])]
        if len(zero_left) == expect:
            return zero_left
        scale *= 1 << 16
    return None


def _rank_exactish(rows: Rows, ncols: int) -> int:
    p = _DIXON_PRIMES[0]
    a = np.array([[x % p for x in r] for r in rows], dtype=np.int64)
    _, piv_rows, _ = _mod_p_echelon(a, p)
    if len(piv_rows) < min(len(rows), ncols):
        # mod-p rank can only undershoot; confirm exactly in the rare case
        return rank_rational(rows)
    return len(piv_rows)


def completion(l: LatticeBasis, ambient: int) -> LatticeBasis:
    """Basis of (L-perp)-perp: the saturation of L inside Z^ambient.

    Computed from the HNF pivot structure: a point of the rational span is
    integral iff its pivot coordinates satisfy a congruence system modulo
    the pivot-block determinant, and that congruence lattice is small.
    """
    if l.ambient != ambient:
        raise ValueError("basis does not live in Z^ambient")
    rows = [r for r in l.to_lists() if any(r)]
    if not rows:
        return LatticeBasis(IntMatrix.zeros(0, ambient), 0)
    h = hnf_rows(rows)
    r = len(h)
    piv_cols = [next(j for j, x in enumerate(row) if x != 0) for row in h]
    hp = [[h[i][piv_cols[j]] for j in range(r)] for i in range(r)]
    det = 1
    for i in range(r):
        det *= hp[i][i]
    if det == 1:
        return LatticeBasis.from_rows(h)
    # T = det * Hp^{-1} * H is integral with T[:, pivots] = det * I
    hp_inv_scaled = _upper_tri_inverse_scaled(hp, det)
    t = [
        [sum(hp_inv_scaled[i][k] * h[k][j] for k in range(r)) for j in range(ambient)]
        for i in range(r)
    ]
    piv_set = set(piv_cols)
    cong = [[t[i][j] for i in range(r)] for j in range(ambient) if j not in piv_set]
    vbasis = _congruence_lattice(cong, det, r)
    out = []
    for v in vbasis:
        y = [sum(v[i] * t[i][j] for i in range(r)) for j in range(ambient)]
        assert all(x % det == 0 for x in y)
        out.append([x // det for x in y])
    return LatticeBasis.from_rows(hnf_rows(out))


def _upper_tri_inverse_scaled(u: Rows, det: int) -> Rows:
    """det * U^{-1} (the adjugate) for upper-triangular U with det = prod diag."""
    n = len(u)
    inv = [[0] * n for _ in range(n)]
    for i in range(n - 1, -1, -1):
        inv[i][i] = det // u[i][i]
        for j in range(i + 1, n):
            s = sum(u[i][k] * inv[k][j] for k in range(i + 1, j + 1))
            assert s % u[i][i] == 0
            inv[i][j] = -s // u[i][i]
    return inv


def lattice_equal(a: LatticeBasis | Rows, b: LatticeBasis | Rows) -> bool:
    """Whether two bases generate the same row lattice (HNF comparison)."""
    ra = a.to_lists() if isinstance(a, LatticeBasis) else a
    rb = b.to_lists() if isinstance(b, LatticeBasis) else b
    return hnf_rows(ra) == hnf_rows(rb)


def rank_lower_bound_mod_p(rows: Rows) -> int:
    """Mod-p rank: a fast lower bound on (and typically equal to) the rank."""
    if not rows:
        return 0
    p = _DIXON_PRIMES[0]
    a = np.array([[x % p for x in r] for r in rows], dtype=np.int64)
    _, piv_rows, _ = _mod_p_echelon(a, p)
    return len(piv_rows)


def rank_exact(rows: Rows) -> int:
    """Exact rational rank; mod-p fast path, exact elimination on collision."""
    if not rows:
        return 0
    guess = rank_lower_bound_mod_p(rows)
    if guess == min(len(rows), len(rows[0])):
        return guess
    return rank_rational(rows)
