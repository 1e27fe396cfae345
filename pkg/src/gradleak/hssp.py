"""Hidden subset sum instances and the three lattice attacks.

The multidimensional problem is H = A X mod q with A an unknown M x B
binary matrix and X an unknown B x u integer matrix; only (q, H) are
public.  All attacks share step 1 (recover the rank-B lattice that
contains A's columns, via two orthogonal-lattice computations) and differ
in how they extract binary vectors from it:

* ``ns_step2_bkz``   - BKZ-reduce and pick binary vectors among the basis
  vectors and their pairwise sums/differences;
* ``multivariate_recover`` - linearize the quadratic system <u_i, w>^2 =
  <u_i, w> and split the solution space by simultaneous diagonalization;
* ``statistical_recover``  - fourth-moment fixed-point iteration over the
  hidden parallelepiped spanned by the rows of W^-1.

Every recovered column is verified exactly before it is accepted, so a
returned weight matrix is always a true factorization witness.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd

import numpy as np

from .errors import (
    BlockTooLarge,
    DidNotConverge,
    GradleakError,
    NoBinarySolution,
    NoInvertibleBlock,
    NoInvertibleSubmatrix,
    NotEnoughBinaryVectors,
    RankMismatch,
    SystemUnderdetermined,
)
from .intmat import (
    IntMatrix,
    Modulus,
    Rows,
    egcd,
    inverse_mod_rows,
    mod_inv,
    random_prime_bits,
    rank_rational,
)
from .lattice import (
    DEFAULT_DELTA,
    LatticeBasis,
    bkz_reduce,
    enum_close_vectors,
    integer_kernel,
    lll_rows,
    lll_rows_qblock,
    rank_exact,
    rank_lower_bound_mod_p,
)

DEFAULT_IOTA = 0.035


def _independent(rows: Rows) -> bool:
    """Whether the rows are linearly independent over Q (fast path mod p)."""
    if rank_lower_bound_mod_p(rows) == len(rows):
        return True
    return rank_rational(rows) == len(rows)


# ---------------------------------------------------------------------------
# problem types


@dataclass(frozen=True)
class HsspInstance:
    """Public data of a multidimensional hidden subset sum problem."""

    q: Modulus
    h: IntMatrix  # M x u, entries in [0, q)
    m_rows: int
    batch: int
    dim: int

    def __post_init__(self) -> None:
        if self.h.rows != self.m_rows or self.h.cols != self.dim:
            raise ValueError("sample matrix shape disagrees with (m_rows, dim)")
        if self.batch > self.m_rows:
            raise ValueError("hidden rank exceeds row count")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    @staticmethod
    def build(q: int, h_rows: Rows, batch: int) -> "HsspInstance":
        h = IntMatrix.from_rows(h_rows).mod(q)
        return HsspInstance(Modulus(q), h, h.rows, batch, h.cols)


@dataclass(frozen=True)
class HlcpInstance:
    """Hidden linear combination problem: weights in {0..c}. No solver here."""

    instance: HsspInstance
    coeff_bound: int

    def __post_init__(self) -> None:
        if self.coeff_bound < 1:
            raise ValueError("coefficient bound must be >= 1")


@dataclass(frozen=True)
class PlantedInstance:
    """An instance generated from a known (A, X) pair, used as a test oracle."""

    instance: HsspInstance
    a: IntMatrix  # M x B binary
    x: IntMatrix  # B x u in [0, q)

    def __post_init__(self) -> None:
        inst = self.instance
        if (self.a * self.x).mod(inst.q.q) != inst.h:
            raise ValueError("planted factors do not reproduce the sample matrix")


@dataclass
class AttackReport:
    """Outcome record of one attack run."""

    method: str
    success: bool
    recovered_x: IntMatrix | None = None
    recovered_a: IntMatrix | None = None
    permutation: list[int] | None = None
    timings: dict[str, float] = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    mse: float | None = None
    failure: str | None = None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "success": self.success,
            "recovered_x": _mat_to_strings(self.recovered_x),
            "recovered_a": _mat_to_strings(self.recovered_a),
            "permutation": self.permutation,
            "timings": self.timings,
            "params": self.params,
            "mse": self.mse,
            "failure": self.failure,
        }


# ---------------------------------------------------------------------------
# modulus sizing and instance generation


def q_size_for(m_rows: int, batch: int, iota: float = DEFAULT_IOTA, margin: int | None = None) -> int:
    """Bit length of the modulus that makes step 1 provably sound.

    Evaluates the lattice-gap inequality (base-2 logs) and adds a safety
    margin of ``batch`` bits by default; the result is clamped to >= 2.
    """
    m, b = m_rows, batch
    if m <= b:
        raise ValueError("need m_rows > batch")
    bound = iota * m * b + (m * b) / (2 * (m - b)) * math.log2(m) + (b / 2) * math.log2(m - b)
    extra = batch if margin is None else margin
    return max(2, math.ceil(bound) + extra)


def plant_instance(
    m_rows: int,
    batch: int,
    dim: int,
    q_bits: int,
    density: float = 0.5,
    rng_seed: int = 0,
    max_tries: int = 1000,
) -> PlantedInstance:
    """Sample a random planted instance: A ~ Bernoulli(density), X uniform.

    A is resampled until it has rational rank B and some B x B row
    submatrix invertible mod q; a hard error is raised after max_tries.
    """
    if batch > m_rows:
        raise ValueError("batch must be <= m_rows")
    rng = random.Random(rng_seed)
    q = random_prime_bits(q_bits, rng)
    for _ in range(max_tries):
        a_rows = [[1 if rng.random() < density else 0 for _ in range(batch)] for _ in range(m_rows)]
        if rank_exact(a_rows) != batch:
            continue
        if _find_unit_pivot_rows(a_rows, q, batch) is None:
            continue
        x_rows = [[rng.randrange(q) for _ in range(dim)] for _ in range(batch)]
        a = IntMatrix.from_rows(a_rows)
        x = IntMatrix.from_rows(x_rows)
        h = (a * x).mod(q)
        inst = HsspInstance(Modulus(q), h, m_rows, batch, dim)
        return PlantedInstance(inst, a, x)
    raise RuntimeError(f"could not sample a full-rank weight matrix in {max_tries} tries")


def _find_unit_pivot_rows(rows: Rows, q: int, need: int) -> list[int] | None:
    """Indices of ``need`` rows forming a submatrix invertible mod q."""
    ncols = len(rows[0]) if rows else 0
    work = [[x % q for x in r] for r in rows]
    chosen: list[int] = []
    used = [False] * len(rows)
    for c in range(ncols):
        if len(chosen) == need:
            break
        piv = None
        for i in range(len(rows)):
            if not used[i] and gcd(work[i][c], q) == 1:
                piv = i
                break
        if piv is None:
            continue
        used[piv] = True
        chosen.append(piv)
        inv = mod_inv(work[piv][c], q)
        for i in range(len(rows)):
            if not used[i] and work[i][c]:
                f = (work[i][c] * inv) % q
                work[i] = [(x - f * y) % q for x, y in zip(work[i], work[piv])]
    return chosen if len(chosen) == need else None


# ---------------------------------------------------------------------------
# orthogonal lattices modulo q


def ortho_mod_basis(h: list[int] | IntMatrix, q: Modulus | int) -> LatticeBasis:
    """Rank-M basis of {y : <y, h> = 0 mod q}, valid for every gcd pattern.

    The rows form a lower-triangular matrix: row 1 is (q/d_1) e_1 and row j
    combines inverse terms against the leading entries with diagonal
    D_{j-1}/D_j, where d_i = gcd(h_i, q) and D_j = gcd(d_1..d_j).  Entries
    below the diagonal are then reduced modulo the pivot column, which makes
    the output canonical; |det| = q / gcd(h, q) always divides q^M.
    """
    qq = q.q if isinstance(q, Modulus) else int(q)
    if isinstance(h, IntMatrix):
        if h.cols != 1:
            raise ValueError("expected a column vector")
        vec = [r[0] % qq for r in h.data]
    else:
        vec = [int(x) % qq for x in h]
    m = len(vec)
    if all(x == 0 for x in vec):
        return LatticeBasis.from_rows([[1 if i == j else 0 for j in range(m)] for i in range(m)])
    d = [gcd(x, qq) if x else qq for x in vec]
    inv = []
    for hi, di in zip(vec, d):
        mod = qq // di
        inv.append(mod_inv(hi // di, mod) if mod > 1 else 0)
    rows: Rows = []
    row0 = [0] * m
    row0[0] = qq // d[0]
    rows.append(row0)
    big_d = d[0]
    coeffs = [1]  # k_i with sum k_i d_i = gcd(d_1..d_{j-1})
    for j in range(1, m):
        new_d = gcd(big_d, d[j])
        hj = vec[j] // new_d
        row = [0] * m
        for i in range(j):
            row[i] = -hj * inv[i] * coeffs[i]
        row[j] = big_d // new_d
        rows.append(row)
        # extend the gcd chain: coefficients for gcd(d_1..d_j)
        g, s, t = egcd(big_d, d[j])
        coeffs = [s * c for c in coeffs] + [t]
        big_d = g
    # canonical form: reduce sub-diagonal entries into [0, pivot)
    for j in range(1, m):
        for i in range(j - 1, -1, -1):
            piv = rows[i][i]
            f = rows[j][i] // piv
            if f:
                rows[j] = [a - f * b for a, b in zip(rows[j], rows[i])]
    return LatticeBasis.from_rows(rows)


def ortho_mod_basis_multi(
    h: IntMatrix, q: Modulus | int, r: int
) -> LatticeBasis:
    """Rank-M basis of {y : y H = 0 mod q} built from an invertible r x r block.

    Rows and columns of H are searched for an invertible block; the basis is
    assembled in the permuted coordinates ([q I_r, 0; -H' Hr^-1, I]) and
    mapped back.  Raises NoInvertibleBlock when no such block exists and
    RankMismatch when H has rank exceeding r mod q (the unused columns are
    then not annihilated).
    """
    qq = q.q if isinstance(q, Modulus) else int(q)
    m, u = h.rows, h.cols
    if r > min(u, m):
        raise ValueError("r must be <= min(u, m_rows)")
    if all(x % qq == 0 for row in h.data for x in row):
        return LatticeBasis.from_rows([[1 if i == j else 0 for j in range(m)] for i in range(m)])
    perm, coef = _ortho_block_parts(h, qq, r)
    rows = _qblock_rows(coef, qq, m)
    return LatticeBasis.from_rows(_unpermute_cols(rows, perm))


def _ortho_block_parts(h: IntMatrix, q: int, r: int) -> tuple[list[int], Rows]:
    """Pivot permutation and coefficient block for the mod-q orthogonal basis.

    Returns (perm, coef): perm lists pivot rows first, and coef[i] is the
    length-r coefficient row of the (r+i)-th permuted basis vector.
    """
    m, u = h.rows, h.cols
    hm = [[x % q for x in row] for row in h.data]
    piv_rows, piv_cols = _pivot_block(hm, q, r)
    if piv_rows is None:
        raise NoInvertibleBlock(f"no invertible {r}x{r} block mod {q}")
    hr = [[hm[i][c] for c in piv_cols] for i in piv_rows]
    hr_inv = inverse_mod_rows(hr, q)
    assert hr_inv is not None
    rest = [i for i in range(m) if i not in set(piv_rows)]
    coef: Rows = []
    for i in rest:
        hi = [hm[i][c] for c in piv_cols]
        coef.append([(-sum(hi[t] * hr_inv[t][j] for t in range(r))) % q for j in range(r)])
    # the selected columns must span every other column mod q, otherwise the
    # built vectors do not annihilate the full sample matrix
    other_cols = [c for c in range(u) if c not in set(piv_cols)]
    for idx, i in enumerate(rest):
        for c in other_cols:
            s = sum(coef[idx][j] * hm[piv_rows[j]][c] for j in range(r)) + hm[i][c]
            if s % q != 0:
                raise RankMismatch("sample matrix rank exceeds r modulo q")
    return piv_rows + rest, coef


def _pivot_block(hm: Rows, q: int, r: int) -> tuple[list[int] | None, list[int] | None]:
    """Search rows/columns for an invertible r x r block (unit pivots)."""
    m = len(hm)
    work = [row[:] for row in hm]
    used = [False] * m
    piv_rows: list[int] = []
    piv_cols: list[int] = []
    for c in range(len(hm[0])):
        if len(piv_rows) == r:
            break
        piv = None
        for i in range(m):
            if not used[i] and gcd(work[i][c], q) == 1:
                piv = i
                break
        if piv is None:
            continue
        used[piv] = True
        piv_rows.append(piv)
        piv_cols.append(c)
        inv = mod_inv(work[piv][c], q)
        for i in range(m):
            if not used[i] and work[i][c]:
                f = (work[i][c] * inv) % q
                work[i] = [(x - f * y) % q for x, y in zip(work[i], work[piv])]
    if len(piv_rows) < r:
        return None, None
    return piv_rows, piv_cols


def _qblock_rows(coef: Rows, q: int, m: int) -> Rows:
    r = m - len(coef)
    rows = []
    for i in range(r):
        row = [0] * m
        row[i] = q
        rows.append(row)
    for i, crow in enumerate(coef):
        row = list(crow) + [0] * (m - r)
        row[r + i] = 1
        rows.append(row)
    return rows


def _unpermute_cols(rows: Rows, perm: list[int]) -> Rows:
    out = []
    for row in rows:
        new = [0] * len(row)
        for k, v in enumerate(row):
            new[perm[k]] = v
        out.append(new)
    return out


def ortho_mod_lattice_kernel(h: IntMatrix, q: Modulus | int) -> Rows:
    """Universal {y : y H = 0 mod q} via an exact integer kernel.

    Slower than the block construction but needs no invertibility anywhere:
    (y, k) ranges over the kernel of [H; -q I_u] and y is its projection.
    """
    qq = q.q if isinstance(q, Modulus) else int(q)
    m, u = h.rows, h.cols
    cols = [[h.data[i][c] for i in range(m)] + [-qq if j == c else 0 for j in range(u)] for c in range(u)]
    ker = integer_kernel(cols, m + u)
    return [y[:m] for y in ker]


# ---------------------------------------------------------------------------
# step 1: from the sample matrix to the rank-B candidate lattice


def rank_and_critical_rows(h_rows: Rows, q: int) -> tuple[int, list[int]]:
    """Mod-q rank of the rows and the indices whose deletion lowers it.

    One elimination with transform tracking: the rows of the left kernel
    are read off the identity block, and row i is deletion-critical exactly
    when every kernel vector vanishes at coordinate i.  (For prime q any
    nonzero kernel coordinate is a unit, so the test is exact.)
    """
    m = len(h_rows)
    u = len(h_rows[0]) if m else 0
    aug = [
        [x % q for x in row] + [1 if j == i else 0 for j in range(m)]
        for i, row in enumerate(h_rows)
    ]
    rank = 0
    for c in range(u):
        piv = next((i for i in range(rank, m) if gcd(aug[i][c], q) == 1), None)
        if piv is None:
            continue
        aug[rank], aug[piv] = aug[piv], aug[rank]
        inv = mod_inv(aug[rank][c], q)
        aug[rank] = [(x * inv) % q for x in aug[rank]]
        for i in range(m):
            if i != rank and aug[i][c]:
                f = aug[i][c]
                aug[i] = [(x - f * y) % q for x, y in zip(aug[i], aug[rank])]
        rank += 1
        if rank == m:
            break
    kernel = [row[u:] for row in aug[rank:] if all(x == 0 for x in row[:u])]
    critical = [i for i in range(m) if all(kr[i] == 0 for kr in kernel)]
    return rank, critical


def instance_rank_mod_q(inst: HsspInstance) -> int:
    """Rank of the sample matrix modulo q (equals the usable hidden rank)."""
    q = inst.q.q
    work = [[x % q for x in row] for row in inst.h.data]
    rank = 0
    ncols = inst.dim
    for c in range(ncols):
        piv = next(
            (i for i in range(rank, len(work)) if gcd(work[i][c], q) == 1), None
        )
        if piv is None:
            continue
        work[rank], work[piv] = work[piv], work[rank]
        inv = mod_inv(work[rank][c], q)
        for i in range(rank + 1, len(work)):
            if work[i][c]:
                f = (work[i][c] * inv) % q
                work[i] = [(x - f * y) % q for x, y in zip(work[i], work[rank])]
        rank += 1
        if rank == min(len(work), ncols):
            break
    return rank


def ns_step1(
    inst: HsspInstance,
    r: int | None = None,
    delta=DEFAULT_DELTA,
    return_blocks: bool = False,
):
    """Recover the rank-B lattice containing the hidden binary columns.

    LLL-reduces a basis of the mod-q orthogonal of H, keeps the first M - B
    (short) vectors as a candidate basis of the orthogonal of A, and returns
    the completed orthogonal of that block: a rank-B LLL-reduced basis.
    """
    m, b = inst.m_rows, inst.batch
    if m <= b:
        raise RankMismatch(f"need more rows than the hidden rank ({m} <= {b})")
    q = inst.q.q
    expected_rank = min(b, inst.dim)
    if instance_rank_mod_q(inst) < expected_rank:
        raise RankMismatch(
            f"sample matrix has rank below {expected_rank} mod q; "
            "the hidden weight rows are degenerate on these rows"
        )
    r_use = min(inst.dim, b) if r is None else r
    try:
        perm, coef = _ortho_block_parts(inst.h, q, r_use)
        reduced = _unpermute_cols(lll_rows_qblock(coef, q, m, delta), perm)
    except NoInvertibleBlock:
        # per-column-intersection fallback: exact kernel needs no invertibility
        reduced = lll_rows(ortho_mod_lattice_kernel(inst.h, q), delta)
    short_block = reduced[: m - b]
    ker = integer_kernel(short_block, m)
    if len(ker) != b:
        raise RankMismatch(f"candidate lattice has rank {len(ker)}, expected {b}")
    u_rows = lll_rows(ker)
    basis = LatticeBasis.from_rows(u_rows)
    if return_blocks:
        return basis, short_block
    return basis


# ---------------------------------------------------------------------------
# step 2 variants


def ns_binary_pool(
    u_basis: LatticeBasis,
    batch: int,
    beta: int | None = None,
    node_budget: int = 10**7,
    enumerate_ball: bool = True,
    reduction: str = "bkz",
) -> list[tuple[int, ...]]:
    """Binary vectors of the candidate lattice, lightest first.

    The basis is reduced (LLL or BKZ) and candidates are gathered from the
    reduced vectors, their negations and their pairwise sums/differences.
    With enumerate_ball the pool is completed by enumerating every lattice
    vector of norm^2 <= M (all binary vectors qualify), which makes it
    provably exhaustive; that pass is affordable only when the hidden
    columns are not much longer than the lattice minimum, so callers stage
    it after the cheap passes.
    """
    b = batch
    if u_basis.rank != b:
        raise ValueError(f"candidate basis has rank {u_basis.rank}, expected {b}")
    m = u_basis.ambient
    beta_use = min(b, 12) if beta is None else beta
    if reduction == "bkz" and beta_use >= 2:
        rows = bkz_reduce(u_basis, beta_use, node_budget=node_budget).to_lists()
    else:
        rows = lll_rows(u_basis.to_lists())
    cands: dict[tuple, None] = {}

    def consider(v: list[int]) -> None:
        for w in (v, [-x for x in v]):
            if any(w) and all(x in (0, 1) for x in w):
                cands.setdefault(tuple(w), None)

    for v in rows:
        consider(v)
    n = len(rows)
    for i in range(n):
        for j in range(i + 1, n):
            consider([a - c for a, c in zip(rows[i], rows[j])])
            consider([a + c for a, c in zip(rows[i], rows[j])])
    if enumerate_ball:
        # every binary vector sits at distance^2 exactly M/4 from the
        # all-halves point and every other lattice vector strictly farther,
        # so close-vector enumeration there is an exhaustive binary search
        target = [0.5] * m
        try:
            for coeff in enum_close_vectors(rows, target, m / 4.0, node_budget):
                v = [sum(c * row[k] for c, row in zip(coeff, rows)) for k in range(m)]
                consider(v)
        except BlockTooLarge as exc:
            raise NotEnoughBinaryVectors(f"binary enumeration too large: {exc}") from exc
    return sorted(cands, key=lambda t: (sum(t), t))


def _independent_prefix(pool: list[tuple], b: int) -> list[tuple]:
    chosen: list[tuple] = []
    for cand in sorted(pool, key=lambda t: (sum(t), t)):
        if len(chosen) == b:
            break
        if _independent([list(c) for c in chosen] + [list(cand)]):
            chosen.append(cand)
    return chosen


def ns_step2_bkz(
    u_basis: LatticeBasis,
    batch: int,
    beta: int | None = None,
    node_budget: int = 10**7,
) -> IntMatrix:
    """Select B binary columns from the BKZ-reduced candidate basis.

    Duplicates up to sign are dropped and lighter vectors are preferred.
    Raises NotEnoughBinaryVectors when fewer than B independent binary
    vectors exist in the lattice.
    """
    b = batch
    pool = ns_binary_pool(u_basis, batch, beta=beta, node_budget=node_budget)
    chosen = _independent_prefix(pool, b)
    if len(chosen) < b:
        raise NotEnoughBinaryVectors(f"found {len(chosen)} of {b} binary vectors")
    return IntMatrix.from_rows([list(col) for col in zip(*chosen)])


def _u_matrix(u_basis: LatticeBasis) -> IntMatrix:
    # basis vectors become columns: U is M x B
    return u_basis.vectors.transpose()


def _exact_column_witness(u_cols: IntMatrix, a_col: list[int]) -> bool:
    """Whether a_col = U w has an exact rational solution w."""
    m, b = u_cols.rows, u_cols.cols
    gram = [[sum(u_cols.data[i][k] * u_cols.data[i][j] for i in range(m)) for j in range(b)] for k in range(b)]
    rhs = [sum(u_cols.data[i][k] * a_col[i] for i in range(m)) for k in range(b)]
    w = _solve_fraction(gram, rhs)
    if w is None:
        return False
    for i in range(m):
        if sum(Fraction(u_cols.data[i][k]) * w[k] for k in range(b)) != a_col[i]:
            return False
    return True


def _solve_fraction(a: Rows, rhs: list[int]) -> list[Fraction] | None:
    n = len(a)
    m = [[Fraction(x) for x in row] + [Fraction(v)] for row, v in zip(a, rhs)]
    for c in range(n):
        piv = next((i for i in range(c, n) if m[i][c] != 0), None)
        if piv is None:
            return None
        m[c], m[piv] = m[piv], m[c]
        inv = 1 / m[c][c]
        m[c] = [x * inv for x in m[c]]
        for i in range(n):
            if i != c and m[i][c]:
                f = m[i][c]
                m[i] = [x - f * y for x, y in zip(m[i], m[c])]
    return [m[i][n] for i in range(n)]


def multivariate_recover(u_basis: LatticeBasis, batch: int, rng_seed: int = 0) -> IntMatrix:
    """Recover A by linearizing <u_i, w>^2 = <u_i, w> and splitting the
    solution space with simultaneous diagonalization.

    The exact rational nullspace of the linearized system is computed first;
    eigenvectors of a random pencil from it give candidate directions, each
    rounded to a binary column and verified exactly against U.
    """
    b = batch
    u_mat = _u_matrix(u_basis)
    m = u_mat.rows
    needed = b * (b + 1) // 2 + b
    if m < needed:
        raise SystemUnderdetermined(f"need at least {needed} rows, have {m}")
    pairs = [(k, l) for k in range(b) for l in range(k, b)]
    sys_rows: Rows = []
    for i in range(m):
        ui = u_mat.data[i]
        row = []
        for k, l in pairs:
            row.append(ui[k] * ui[l] if k == l else 2 * ui[k] * ui[l])
        row.extend(-ui[k] for k in range(b))
        sys_rows.append(row)
    null = integer_kernel(sys_rows, len(pairs) + b)
    # transposed: kernel of the row system means vectors v with sys_rows . v = 0
    if len(null) < b:
        raise NoBinarySolution(f"solution space has dimension {len(null)} < {b}")
    if len(null) > b:
        raise SystemUnderdetermined(
            f"solution space has dimension {len(null)}, expected {b}; increase the subsample"
        )
    mats = []
    for vec in null:
        s = np.zeros((b, b))
        scale = max(abs(x) for x in vec) or 1
        for (k, l), val in zip(pairs, vec[: len(pairs)]):
            s[k, l] = s[l, k] = val / scale
        mats.append(s)
    rng = random.Random(rng_seed)
    u_np = np.array(u_mat.to_lists(), dtype=float)
    cols: list[list[int]] = []
    for _ in range(64):
        c1 = [rng.randint(-9, 9) for _ in range(b)]
        c2 = [rng.randint(-9, 9) for _ in range(b)]
        s1 = sum(c * s for c, s in zip(c1, mats))
        s2 = sum(c * s for c, s in zip(c2, mats))
        try:
            pencil = s1 @ np.linalg.inv(s2)
        except np.linalg.LinAlgError:
            continue
        evals, evecs = np.linalg.eig(pencil)
        if np.abs(evals.imag).max() > 1e-6:
            continue
        for j in range(b):
            v = evecs[:, j].real
            z = u_np @ v
            peak = np.abs(z).max()
            if peak < 1e-9:
                continue
            a_col = np.round(z / z[np.abs(z).argmax()])
            if not np.all((a_col == 0) | (a_col == 1)):
                continue
            cand = [int(x) for x in a_col]
            if not any(cand) or cand in cols:
                continue
            if not _independent(cols + [cand]):
                continue
            if _exact_column_witness(u_mat, cand):
                cols.append(cand)
        if len(cols) >= b:
            break
    if len(cols) < b:
        raise NoBinarySolution(f"only {len(cols)} of {b} binary columns verified")
    return IntMatrix.from_rows([list(col) for col in zip(*cols[:b])])


def statistical_recover(
    u_basis: LatticeBasis,
    batch: int,
    rng_seed: int = 0,
    restarts: int = 16,
    max_iters: int = 10_000,
    max_flips: int = 12,
) -> IntMatrix:
    """Recover A by fourth-moment optimization over the hidden parallelepiped.

    Rows of U are samples A V with V = W^-1; after centering the binary
    coefficients to +-1 and morphing the empirical covariance to the
    identity, the extrema of E<z, w>^4 on the sphere sit at the rows of the
    morphed V.  Directions are found with the stable fixed-point form of
    the moment iteration (w <- E[z <z,w>^3] - 3w, normalized; the plain
    small-step descent oscillates at these sample sizes); the sign pattern
    of the projections is rounded to a binary column, low-confidence
    entries are flip-corrected, and only exactly verified columns are kept.
    """
    b = batch
    u_mat = _u_matrix(u_basis)
    m = u_mat.rows
    u_np = np.array(u_mat.to_lists(), dtype=float)
    centered = 2.0 * (u_np - u_np.mean(axis=0))
    g = centered.T @ centered / m
    evals, evecs = np.linalg.eigh(g)
    if evals.min() <= 1e-9 * max(1.0, evals.max()):
        raise DidNotConverge("sample covariance is degenerate; too few rows")
    g_inv_half = evecs @ np.diag(evals**-0.5) @ evecs.T
    z = centered @ g_inv_half
    rng = np.random.default_rng(rng_seed)
    cols: list[list[int]] = []
    for _ in range(restarts * b):
        w = rng.standard_normal(b)
        w /= np.linalg.norm(w)
        for _ in range(max_iters):
            proj = z @ w
            w_new = (z.T @ proj**3) / m - 3.0 * w
            nrm = np.linalg.norm(w_new)
            if nrm < 1e-12:
                break
            w_new /= nrm
            if abs(abs(w_new @ w) - 1.0) < 1e-13:
                w = w_new
                break
            w = w_new
        gamma = z @ w
        if np.abs(gamma).min() < 1e-9:
            continue
        for sigma in (1.0, -1.0):
            cand = _binary_from_signs(u_mat, sigma * gamma, max_flips)
            if cand is None or cand in cols:
                continue
            if not _independent(cols + [cand]):
                continue
            cols.append(cand)
        if len(cols) >= b:
            break
    if len(cols) < b:
        raise DidNotConverge(f"verified {len(cols)} of {b} columns within the restart budget")
    return IntMatrix.from_rows([list(col) for col in zip(*cols[:b])])


def _binary_from_signs(u_mat: IntMatrix, gamma: np.ndarray, max_flips: int) -> list[int] | None:
    """Binary column from projection signs, with low-confidence flip repair.

    The sign pattern maps +-1 coefficients to {0,1}; a handful of entries
    near zero may be wrong, so single and pairwise flips of the least
    confident positions are tried until the exact lattice-membership
    witness accepts.
    """
    base = (np.sign(gamma) + 1) / 2
    cand = [int(v) for v in base]
    if any(cand) and _exact_column_witness(u_mat, cand):
        return cand
    order = np.argsort(np.abs(gamma))[:max_flips]
    for i in order:
        alt = list(cand)
        alt[i] ^= 1
        if any(alt) and _exact_column_witness(u_mat, alt):
            return alt
    small = order[: min(8, len(order))]
    for ii in range(len(small)):
        for jj in range(ii + 1, len(small)):
            alt = list(cand)
            alt[small[ii]] ^= 1
            alt[small[jj]] ^= 1
            if any(alt) and _exact_column_witness(u_mat, alt):
                return alt
    return None


# ---------------------------------------------------------------------------
# solving for X and verification


def solve_x(a: IntMatrix, inst: HsspInstance) -> IntMatrix:
    """Recover X from A' x = h' mod q over an invertible row submatrix."""
    q = inst.q.q
    b = inst.batch
    if a.rows != inst.m_rows or a.cols != b:
        raise ValueError("weight matrix shape mismatch")
    rows = _find_unit_pivot_rows(a.to_lists(), q, b)
    if rows is None:
        raise NoInvertibleSubmatrix(f"no invertible {b}x{b} row submatrix mod {q}")
    a_sub = [[a.data[i][j] for j in range(b)] for i in rows]
    inv = inverse_mod_rows(a_sub, q)
    assert inv is not None
    h_sub = [list(inst.h.data[i]) for i in rows]
    x = [
        [sum(inv[i][k] * h_sub[k][j] for k in range(b)) % q for j in range(inst.dim)]
        for i in range(b)
    ]
    return IntMatrix.from_rows(x)


def verify_solution(inst: HsspInstance, a: IntMatrix, x: IntMatrix) -> bool:
    """Check A binary and A X = H mod q."""
    if a.rows != inst.m_rows or a.cols != inst.batch:
        return False
    if x.rows != inst.batch or x.cols != inst.dim:
        return False
    if any(v not in (0, 1) for row in a.data for v in row):
        return False
    return (a * x).mod(inst.q.q) == inst.h


def extend_mask_rows(x_rec: IntMatrix, rows: Rows, q: int) -> Rows | None:
    """Binary weight rows explaining extra sample rows, or None.

    For each extra row h_i solves rho . x_rec = h_i mod q; the solution is
    unique when x_rec has B independent columns mod q, and a true solution
    matrix makes every extra row of the sample matrix solvable with a binary
    rho.  A spurious factorization of a row subsample fails here, which is
    what makes the subsample-then-validate pipeline sound.
    """
    b, u = x_rec.rows, x_rec.cols
    xt = [[x_rec.data[i][j] for i in range(b)] for j in range(u)]  # u x b
    piv = _find_unit_pivot_rows(xt, q, b)
    if piv is None:
        return None
    x_piv = [[xt[j][i] for i in range(b)] for j in piv]  # b x b
    inv = inverse_mod_rows(x_piv, q)
    assert inv is not None
    out: Rows = []
    for h_row in rows:
        rhs = [h_row[j] % q for j in piv]
        rho = [sum(inv[i][k] * rhs[k] for k in range(b)) % q for i in range(b)]
        if any(v not in (0, 1) for v in rho):
            return None
        for j in range(u):
            if sum(rho[i] * x_rec.data[i][j] for i in range(b)) % q != h_row[j] % q:
                return None
        out.append(rho)
    return out


def _x_in_bound(x: IntMatrix, q: int, x_bound: int) -> bool:
    return all(v <= x_bound or q - v <= x_bound for row in x.data for v in row)


def match_up_to_permutation(x_rec: IntMatrix, x_true: IntMatrix) -> list[int] | None:
    """Row permutation p with x_rec[p[i]] == x_true[i], or None."""
    if (x_rec.rows, x_rec.cols) != (x_true.rows, x_true.cols):
        return None
    pool: dict[tuple, list[int]] = {}
    for idx, row in enumerate(x_rec.data):
        pool.setdefault(row, []).append(idx)
    perm = []
    for row in x_true.data:
        lst = pool.get(row)
        if not lst:
            return None
        perm.append(lst.pop(0))
    return perm


# ---------------------------------------------------------------------------
# end-to-end attacks


def _solution_ok(
    inst: HsspInstance,
    x: IntMatrix,
    x_bound: int | None,
    validate_rows: Rows | None,
) -> bool:
    if x_bound is not None and not _x_in_bound(x, inst.q.q, x_bound):
        return False
    if validate_rows:
        return extend_mask_rows(x, validate_rows, inst.q.q) is not None
    return True


def run_ns_attack(
    inst: HsspInstance,
    beta: int | None = None,
    r: int | None = None,
    x_bound: int | None = None,
    validate_rows: Rows | None = None,
    max_subsets: int = 4000,
) -> tuple[IntMatrix, IntMatrix]:
    """Full NS attack.

    At small subsample sizes the instance can admit several binary
    factorizations (artifacts of the subsample), so candidate column
    subsets are searched with rank-pruned backtracking until one passes
    the optional plaintext-bound and held-out-row validation.  Candidates
    near half weight are preferred: hidden columns concentrate there while
    subsample artifacts are typically sparse.
    """
    b = inst.batch
    u_basis = ns_step1(inst, r=r)
    last_exc: GradleakError | None = None
    # staged pools, cheapest first: LLL candidates, exhaustive close-vector
    # enumeration over the LLL basis, then the same over a BKZ basis (block
    # reduction shrinks the enumeration tree when the cheap stages fail)
    stages = (("lll", False), ("lll", True), ("bkz", False), ("bkz", True))
    seen: set[tuple] = set()
    for reduction, enumerate_ball in stages:
        try:
            pool = ns_binary_pool(
                u_basis, b, beta=beta, enumerate_ball=enumerate_ball, reduction=reduction
            )
        except NotEnoughBinaryVectors as exc:
            last_exc = exc
            continue
        key = tuple(pool)
        if key in seen:
            continue
        seen.add(key)
        if len(pool) < b:
            last_exc = NotEnoughBinaryVectors(f"found {len(pool)} of {b} binary vectors")
            continue
        found = _search_subsets(inst, pool, x_bound, validate_rows, max_subsets)
        if found is not None:
            return found
        last_exc = NoBinarySolution(
            "no factorization passed validation among the candidate subsets"
        )
    raise last_exc if last_exc is not None else NoBinarySolution("no candidates")


def _search_subsets(
    inst: HsspInstance,
    pool: list[tuple[int, ...]],
    x_bound: int | None,
    validate_rows: Rows | None,
    max_subsets: int,
) -> tuple[IntMatrix, IntMatrix] | None:
    """Rank-pruned backtracking over B-subsets of the candidate pool."""
    b = inst.batch
    half = inst.m_rows / 2
    ordered = sorted(pool, key=lambda t: (abs(sum(t) - half), t))
    tried = 0

    def search(start: int, chosen: list[tuple]) -> tuple[IntMatrix, IntMatrix] | None:
        nonlocal tried
        if len(chosen) == b:
            if tried >= max_subsets:
                return None
            tried += 1
            a = IntMatrix.from_rows([list(col) for col in zip(*chosen)])
            try:
                x = solve_x(a, inst)
            except NoInvertibleSubmatrix:
                return None
            if _solution_ok(inst, x, x_bound, validate_rows):
                return a, x
            return None
        for i in range(start, len(ordered)):
            if tried >= max_subsets:
                return None
            if len(ordered) - i < b - len(chosen):
                return None
            cand = ordered[i]
            if not _independent([list(c) for c in chosen] + [list(cand)]):
                continue
            found = search(i + 1, chosen + [cand])
            if found is not None:
                return found
        return None

    return search(0, [])


def run_multivariate_attack(
    inst: HsspInstance,
    rng_seed: int = 0,
    r: int | None = None,
    x_bound: int | None = None,
    validate_rows: Rows | None = None,
) -> tuple[IntMatrix, IntMatrix]:
    u_basis = ns_step1(inst, r=r)
    a = multivariate_recover(u_basis, inst.batch, rng_seed=rng_seed)
    x = solve_x(a, inst)
    if not _solution_ok(inst, x, x_bound, validate_rows):
        raise NoBinarySolution("recovered factorization failed validation")
    return a, x


def run_statistical_attack(
    inst: HsspInstance,
    rng_seed: int = 0,
    r: int | None = None,
    x_bound: int | None = None,
    validate_rows: Rows | None = None,
) -> tuple[IntMatrix, IntMatrix]:
    u_basis = ns_step1(inst, r=r)
    a = statistical_recover(u_basis, inst.batch, rng_seed=rng_seed)
    x = solve_x(a, inst)
    if not _solution_ok(inst, x, x_bound, validate_rows):
        raise NoBinarySolution("recovered factorization failed validation")
    return a, x


ATTACKS = {
    "ns": run_ns_attack,
    "mv": run_multivariate_attack,
    "stat": run_statistical_attack,
}


# ---------------------------------------------------------------------------
# serialization (stable wire format)


def _mat_to_strings(m: IntMatrix | None) -> list[str] | None:
    if m is None:
        return None
    return [str(x) for row in m.data for x in row]


def _mat_from_strings(vals: list[str], rows: int, cols: int) -> IntMatrix:
    ints = [int(v) for v in vals]
    if len(ints) != rows * cols:
        raise ValueError("element count disagrees with shape")
    return IntMatrix.from_rows([ints[i * cols : (i + 1) * cols] for i in range(rows)])


def instance_to_json(inst: HsspInstance | PlantedInstance) -> str:
    """Serialize an instance: q as a decimal string, h row-major."""
    planted = isinstance(inst, PlantedInstance)
    base = inst.instance if planted else inst
    doc = {
        "q": str(base.q.q),
        "m": base.m_rows,
        "b": base.batch,
        "u": base.dim,
        "h": _mat_to_strings(base.h),
    }
    if planted:
        doc["a"] = _mat_to_strings(inst.a)
        doc["x"] = _mat_to_strings(inst.x)
    return json.dumps(doc)


def instance_from_json(text: str) -> HsspInstance | PlantedInstance:
    doc = json.loads(text)
    q = int(doc["q"])
    m, b, u = doc["m"], doc["b"], doc["u"]
    h = _mat_from_strings(doc["h"], m, u)
    inst = HsspInstance(Modulus(q), h, m, b, u)
    if "a" in doc and "x" in doc:
        a = _mat_from_strings(doc["a"], m, b)
        x = _mat_from_strings(doc["x"], b, u)
        return PlantedInstance(inst, a, x)
    return inst
