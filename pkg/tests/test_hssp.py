import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from gradleak.errors import (
    DidNotConverge,
    GradleakError,
    NoInvertibleBlock,
    NoInvertibleSubmatrix,
    RankMismatch,
    SystemUnderdetermined,
)
from gradleak.hssp import (
    HlcpInstance,
    HsspInstance,
    PlantedInstance,
    extend_mask_rows,
    instance_from_json,
    instance_rank_mod_q,
    instance_to_json,
    match_up_to_permutation,
    multivariate_recover,
    ns_binary_pool,
    ns_step1,
    ns_step2_bkz,
    ortho_mod_basis,
    ortho_mod_basis_multi,
    plant_instance,
    q_size_for,
    rank_and_critical_rows,
    run_multivariate_attack,
    run_ns_attack,
    run_statistical_attack,
    solve_x,
    statistical_recover,
    verify_solution,
)
from gradleak.intmat import IntMatrix, Modulus, det_bareiss, hnf, row_space_contains
from gradleak.lattice import LatticeBasis, lattice_equal


def planted_cols(p: PlantedInstance) -> list[list[int]]:
    return [list(col) for col in zip(*p.a.to_lists())]


def subsampled(p: PlantedInstance, m: int, seed: int) -> tuple[HsspInstance, list, list]:
    """Attack subsample plus held-out validation rows, like the pipeline."""
    mm = p.instance.m_rows
    idx = random.Random(seed).sample(range(mm), m)
    rest = [i for i in range(mm) if i not in set(idx)]
    sub = HsspInstance.build(p.instance.q.q, [list(p.instance.h.data[i]) for i in idx], p.instance.batch)
    vrows = [list(p.instance.h.data[i]) for i in rest]
    return sub, vrows, idx


class TestOrthoModBasis:
    def test_worked_example(self):
        basis = ortho_mod_basis([3, 5, 7], 11)
        assert basis.to_lists() == [[11, 0, 0], [2, 1, 0], [5, 0, 1]]
        for row in basis.to_lists():
            assert (3 * row[0] + 5 * row[1] + 7 * row[2]) % 11 == 0
        assert abs(det_bareiss(basis.vectors)) == 11

    def test_zero_vector_gives_identity(self):
        assert ortho_mod_basis([0, 22, 11], 11).vectors == IntMatrix.identity(3)

    def test_shared_gcd_reduces(self):
        a = ortho_mod_basis([6, 10, 14], 22)
        b = ortho_mod_basis([3, 5, 7], 11)
        assert a.to_lists() == b.to_lists()

    def test_mixed_gcd_case(self):
        # gcd(h_i, q) differ per coordinate but share no common factor
        h, q = [2, 3, 4], 12
        basis = ortho_mod_basis(h, q)
        assert basis.rank == 3
        for row in basis.to_lists():
            assert sum(a * b for a, b in zip(row, h)) % q == 0
        assert abs(det_bareiss(basis.vectors)) == q  # q / gcd(h, q)

    @settings(max_examples=120, deadline=None)
    @given(st.data())
    def test_orthogonality_all_gcd_cases(self, data):
        q = data.draw(st.integers(2, 10**6))
        m = data.draw(st.integers(1, 6))
        scale = data.draw(st.sampled_from([1, 2, 3, 4, 6]))
        h = [scale * data.draw(st.integers(0, q - 1)) for _ in range(m)]
        basis = ortho_mod_basis(h, q)
        assert basis.rank == m
        det = abs(det_bareiss(basis.vectors))
        assert q**m % det == 0  # |det| divides q^m
        for row in basis.to_lists():
            assert sum(a * b for a, b in zip(row, h)) % q == 0


class TestOrthoModBasisMulti:
    def test_u1_matches_single_column(self):
        h = IntMatrix.from_rows([[3], [5], [7]])
        multi = ortho_mod_basis_multi(h, 11, 1)
        single = ortho_mod_basis([3, 5, 7], 11)
        assert lattice_equal(multi.vectors.to_lists(), single.vectors.to_lists())

    def test_identity_stack(self):
        h = IntMatrix.from_rows([[1, 0], [0, 1], [1, 1]])
        basis = ortho_mod_basis_multi(h, 13, 2)
        assert basis.rank == 3
        prod = (basis.vectors * h).mod(13)
        assert prod == IntMatrix.zeros(3, 2)

    def test_random_annihilates_all_columns(self):
        rng = random.Random(3)
        q = 1009
        for _ in range(5):
            a = [[rng.randint(0, 1) for _ in range(3)] for _ in range(8)]
            x = [[rng.randrange(q) for _ in range(3)] for _ in range(3)]
            h = (IntMatrix.from_rows(a) * IntMatrix.from_rows(x)).mod(q)
            basis = ortho_mod_basis_multi(h, q, 3)
            assert basis.rank == 8
            assert (basis.vectors * h).mod(q) == IntMatrix.zeros(8, 3)

    def test_no_invertible_block(self):
        # every entry shares a factor with the composite modulus
        h = IntMatrix.from_rows([[3, 6], [9, 3]])
        with pytest.raises(NoInvertibleBlock):
            ortho_mod_basis_multi(h, 9, 2)

    def test_rank_exceeding_r(self):
        h = IntMatrix.from_rows([[1, 0], [0, 1], [1, 2]])
        with pytest.raises(RankMismatch):
            ortho_mod_basis_multi(h, 13, 1)


class TestNsStep1:
    def test_planted_columns_contained(self):
        p = plant_instance(20, 10, 20, q_size_for(20, 10), 0.5, rng_seed=1)
        basis = ns_step1(p.instance)
        assert basis.rank == 10
        h = hnf(basis.vectors)
        for col in planted_cols(p):
            assert row_space_contains(h, col)

    def test_single_all_ones_column(self):
        p = plant_instance(4, 1, 1, 16, 1.0, rng_seed=3)
        basis = ns_step1(p.instance)
        assert lattice_equal(basis.to_lists(), [[1, 1, 1, 1]])

    def test_tiny_modulus_fails_downstream(self):
        # with an 8-bit modulus the instance has a glut of valid binary
        # factorizations, so the planted one is no longer identifiable:
        # the attack must not crash, but the ground-truth match collapses
        matches = 0
        for seed in range(6):
            p = plant_instance(20, 10, 20, 8, 0.5, rng_seed=seed)
            try:
                a, x = run_ns_attack(p.instance)
            except (RankMismatch, GradleakError):
                continue
            assert verify_solution(p.instance, a, x)
            matches += match_up_to_permutation(x, p.x) is not None
        assert matches <= 2

    def test_too_few_rows(self):
        p = plant_instance(6, 4, 3, 24, 0.5, rng_seed=2)
        sub = HsspInstance.build(p.instance.q.q, p.instance.h.to_lists()[:4], 4)
        with pytest.raises(RankMismatch):
            ns_step1(sub)

    def test_p_y_reduction_invariant(self):
        # every short-block vector annihilates the hidden columns mod q
        p = plant_instance(16, 6, 12, q_size_for(16, 6), 0.5, rng_seed=4)
        _, short_block = ns_step1(p.instance, return_blocks=True)
        q = p.instance.q.q
        for y in short_block:
            for col in planted_cols(p):
                assert sum(a * b for a, b in zip(y, col)) % q == 0


class TestNsStep2:
    def test_identity_selection(self):
        p = plant_instance(12, 4, 8, q_size_for(12, 4), 0.5, rng_seed=7)
        basis = LatticeBasis.from_rows(planted_cols(p))
        a = ns_step2_bkz(basis, 4)
        assert sorted(tuple(c) for c in zip(*a.to_lists())) == sorted(
            tuple(c) for c in planted_cols(p)
        )

    def test_difference_recovery(self):
        p = plant_instance(12, 2, 8, q_size_for(12, 2), 0.5, rng_seed=9)
        a1, a2 = planted_cols(p)
        combined = LatticeBasis.from_rows([[x + y for x, y in zip(a1, a2)], a2])
        a = ns_step2_bkz(combined, 2)
        assert sorted(tuple(c) for c in zip(*a.to_lists())) == sorted([tuple(a1), tuple(a2)])

    def test_pool_contains_planted(self):
        p = plant_instance(20, 10, 20, q_size_for(20, 10), 0.5, rng_seed=11)
        basis = ns_step1(p.instance)
        pool = set(ns_binary_pool(basis, 10))
        for col in planted_cols(p):
            assert tuple(col) in pool


class TestEndToEnd:
    def test_ns_subsample_and_validate(self):
        ok = 0
        for seed in range(5):
            p = plant_instance(40, 10, 20, q_size_for(20, 10), 0.5, rng_seed=seed)
            sub, vrows, _ = subsampled(p, 20, seed + 100)
            a, x = run_ns_attack(sub, validate_rows=vrows)
            assert verify_solution(sub, a, x)
            ok += match_up_to_permutation(x, p.x) is not None
        assert ok == 5

    def test_multivariate_planted(self):
        p = plant_instance(20, 4, 8, q_size_for(20, 4), 0.5, rng_seed=2)
        a, x = run_multivariate_attack(p.instance)
        assert verify_solution(p.instance, a, x)
        assert match_up_to_permutation(x, p.x) is not None

    def test_multivariate_underdetermined(self):
        p = plant_instance(20, 10, 20, q_size_for(20, 10), 0.5, rng_seed=3)
        with pytest.raises(SystemUnderdetermined):
            multivariate_recover(ns_step1(p.instance), 10)

    def test_statistical_planted_trials(self):
        ok = 0
        for seed in range(10):
            p = plant_instance(100, 4, 8, q_size_for(100, 4), 0.5, rng_seed=seed)
            try:
                a, x = run_statistical_attack(p.instance, rng_seed=seed)
            except DidNotConverge:
                continue
            if verify_solution(p.instance, a, x) and match_up_to_permutation(x, p.x):
                ok += 1
        assert ok >= 8

    def test_statistical_sample_starved(self):
        p = plant_instance(6, 6, 8, 40, 0.5, rng_seed=1)
        basis = LatticeBasis.from_rows(planted_cols(p))
        with pytest.raises(DidNotConverge):
            statistical_recover(basis, 6, rng_seed=0)

    def test_permutation_metamorphism(self):
        # permuting hidden rows (and columns of the mask) leaves the
        # recovered solution set unchanged
        p = plant_instance(40, 6, 12, q_size_for(20, 6), 0.5, rng_seed=13)
        perm = [3, 0, 5, 1, 4, 2]
        a2 = IntMatrix.from_rows([[row[j] for j in perm] for row in p.a.to_lists()])
        x2 = IntMatrix.from_rows([list(p.x.data[j]) for j in perm])
        p2 = PlantedInstance(p.instance, a2, x2)
        sub, vrows, _ = subsampled(p, 16, 99)
        a_rec, x_rec = run_ns_attack(sub, validate_rows=vrows)
        assert match_up_to_permutation(x_rec, p.x) is not None
        assert match_up_to_permutation(x_rec, p2.x) is not None


class TestSolveVerifyMatch:
    def test_identity_weights(self):
        p = plant_instance(5, 5, 3, 24, 0.5, rng_seed=21)
        x = solve_x(p.a, p.instance)
        assert x == p.x

    def test_row_search_past_singular_prefix(self):
        q = 101
        a = IntMatrix.from_rows([[1, 1], [2, 2], [1, 0], [0, 1]])
        x_true = IntMatrix.from_rows([[7, 9], [13, 4]])
        h = (a * x_true).mod(q)
        inst = HsspInstance(Modulus(q), h, 4, 2, 2)
        assert solve_x(a, inst) == x_true

    def test_no_invertible_submatrix(self):
        q = 101
        a = IntMatrix.from_rows([[1, 1], [2, 2], [3, 3]])
        h = IntMatrix.from_rows([[1, 1], [2, 2], [3, 3]])
        inst = HsspInstance(Modulus(q), h, 3, 2, 2)
        with pytest.raises(NoInvertibleSubmatrix):
            solve_x(a, inst)

    def test_verify_and_match(self):
        p = plant_instance(10, 3, 4, 24, 0.5, rng_seed=5)
        assert verify_solution(p.instance, p.a, p.x)
        assert match_up_to_permutation(p.x, p.x) == [0, 1, 2]
        rev = IntMatrix.from_rows(p.x.to_lists()[::-1])
        assert match_up_to_permutation(rev, p.x) == [2, 1, 0]
        bad = [list(r) for r in p.x.to_lists()]
        bad[0][0] = (bad[0][0] + 1) % p.instance.q.q
        assert match_up_to_permutation(IntMatrix.from_rows(bad), p.x) is None
        assert not verify_solution(p.instance, p.a, IntMatrix.from_rows(bad))

    def test_extend_mask_rows(self):
        p = plant_instance(30, 5, 10, q_size_for(30, 5), 0.5, rng_seed=8)
        rows = [list(r) for r in p.instance.h.to_lists()]
        full = extend_mask_rows(p.x, rows, p.instance.q.q)
        assert full == p.a.to_lists()
        # a corrupted solution matrix fails to extend
        bad = [list(r) for r in p.x.to_lists()]
        bad[0][0] = (bad[0][0] + 1) % p.instance.q.q
        assert extend_mask_rows(IntMatrix.from_rows(bad), rows, p.instance.q.q) is None


class TestPlantAndSize:
    def test_density_one_single_column(self):
        p = plant_instance(4, 1, 1, 16, 1.0, rng_seed=0)
        assert p.a.to_lists() == [[1], [1], [1], [1]]

    def test_invariants(self):
        p = plant_instance(20, 10, 20, q_size_for(20, 10), 0.5, rng_seed=1)
        q = p.instance.q.q
        assert (p.a * p.x).mod(q) == p.instance.h
        assert all(v in (0, 1) for row in p.a.data for v in row)
        assert all(0 <= v < q for row in p.x.data for v in row)
        assert instance_rank_mod_q(p.instance) == 10

    def test_precondition(self):
        with pytest.raises(ValueError):
            plant_instance(3, 4, 2, 16)

    def test_q_size_examples(self):
        assert q_size_for(20, 10) == 77
        assert q_size_for(2, 1) == 3

    def test_q_size_grows_quadratically(self):
        # in the m = 2B regime the bound scales like B^2 (up to log factors)
        bits = [q_size_for(2 * b, b) for b in (10, 20, 40, 80)]
        assert all(b2 > 2.2 * b1 for b1, b2 in zip(bits, bits[1:]))
        assert bits[-1] >= 0.07 * 80 * 80  # the iota * M * B leading term

    def test_rank_and_critical_rows(self):
        q = 101
        rows = [[1, 0], [0, 1], [1, 1]]
        rank, crit = rank_and_critical_rows(rows, q)
        assert rank == 2 and crit == []
        rank, crit = rank_and_critical_rows([[1, 0], [0, 1]], q)
        assert rank == 2 and crit == [0, 1]


class TestSerialization:
    def test_roundtrip_planted(self):
        p = plant_instance(8, 3, 5, 32, 0.5, rng_seed=2)
        back = instance_from_json(instance_to_json(p))
        assert isinstance(back, PlantedInstance)
        assert back.instance == p.instance and back.a == p.a and back.x == p.x

    def test_roundtrip_plain(self):
        p = plant_instance(8, 3, 5, 32, 0.5, rng_seed=2)
        back = instance_from_json(instance_to_json(p.instance))
        assert isinstance(back, HsspInstance)
        assert back == p.instance

    def test_wire_schema(self):
        p = plant_instance(4, 2, 3, 16, 0.5, rng_seed=1)
        doc = json.loads(instance_to_json(p))
        assert set(doc) == {"q", "m", "b", "u", "h", "a", "x"}
        assert isinstance(doc["q"], str)
        assert len(doc["h"]) == 4 * 3 and all(isinstance(v, str) for v in doc["h"])

    def test_hlcp_type(self):
        p = plant_instance(4, 2, 3, 16, 0.5, rng_seed=1)
        hlcp = HlcpInstance(p.instance, coeff_bound=3)
        assert hlcp.coeff_bound == 3
        with pytest.raises(ValueError):
            HlcpInstance(p.instance, coeff_bound=0)


def test_subsample_consistency():
    p = plant_instance(30, 5, 10, q_size_for(30, 5), 0.5, rng_seed=3)
    idx = random.Random(0).sample(range(30), 12)
    q = p.instance.q.q
    h_sub = [list(p.instance.h.data[i]) for i in idx]
    a_sub = [list(p.a.data[i]) for i in idx]
    prod = (IntMatrix.from_rows(a_sub) * p.x).mod(q)
    assert prod.to_lists() == [[v % q for v in row] for row in h_sub]
