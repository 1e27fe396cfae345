import numpy as np
import pytest

from gradleak.errors import NoActiveNeuron, Overflow, RankDeficientMask
from gradleak.flsim import (
    AggregateBundle,
    Batch,
    Encoding,
    GradientBundle,
    batch_loss,
    binary_regime_instance,
    decode_int,
    default_encoding,
    encode_real,
    first_layer_grads,
    fl_q_bits,
    fl_round,
    mlp_init,
    model_gradients,
    secure_aggregate_instance,
    sgd_steps,
    single_sample_reconstruct,
    weight_sharing_round,
)
from gradleak.intmat import IntMatrix, Modulus
from gradleak.hssp import match_up_to_permutation, verify_solution


def rand_batch(rng, b, u, k=10):
    return Batch(rng.uniform(0.0, 1.0, (b, u)), tuple(int(v) for v in rng.integers(0, k, b)))


class TestInit:
    def test_shapes(self):
        m = mlp_init((2, 2, 2), 0)
        assert [w.shape for w in m.weights] == [(2, 2), (2, 2)]
        assert [b.shape for b in m.biases] == [(2,), (2,)]

    def test_deterministic(self):
        a, b = mlp_init((5, 7, 3), 42), mlp_init((5, 7, 3), 42)
        assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))

    def test_cifar_shape(self):
        m = mlp_init((3072, 500, 100, 10), 1)
        assert [w.shape for w in m.weights] == [(500, 3072), (100, 500), (10, 100)]
        bound = 1.0 / np.sqrt(3072)
        assert np.abs(m.weights[0]).max() <= bound

    def test_too_few_layers(self):
        with pytest.raises(ValueError):
            mlp_init((5,), 0)


class TestFirstLayerGrads:
    def test_hand_example(self):
        m = mlp_init((2, 2, 2), 0)
        m.weights[0] = np.eye(2)
        m.biases[0] = np.zeros(2)
        bundle = first_layer_grads(m, Batch(np.array([[1.0, -1.0]]), (0,)), "sum_of_outputs")
        assert bundle.r_mask.tolist() == [[1], [0]]
        assert bundle.g_w.tolist() == [[1.0, -1.0], [0.0, 0.0]]
        assert bundle.g_b.tolist() == [1.0, 0.0]

    def test_dead_relu_zero_gradient(self):
        m = mlp_init((3, 4, 2), 1)
        m.biases[0] = np.full(4, -100.0)
        bundle = first_layer_grads(m, rand_batch(np.random.default_rng(0), 3, 3, 2))
        assert np.all(bundle.g_w == 0.0) and np.all(bundle.g_b == 0.0)
        assert np.all(bundle.r_mask == 0)

    def test_factorization_identity(self):
        rng = np.random.default_rng(3)
        for seed in range(20):
            model = mlp_init((12, 16, 8, 5), seed)
            batch = rand_batch(rng, 6, 12, 5)
            bundle = first_layer_grads(model, batch)
            rhs = (bundle.l_factor * bundle.r_mask) @ batch.x / batch.size
            denom = max(np.abs(bundle.g_w).max(), 1e-300)
            assert np.abs(bundle.g_w - rhs).max() / denom <= 1e-9
            bias_rhs = (bundle.l_factor * bundle.r_mask).sum(axis=1) / batch.size
            assert np.abs(bundle.g_b - bias_rhs).max() <= 1e-12 * max(1, np.abs(bundle.g_b).max())

    def test_mask_matches_preactivation_exactly(self):
        rng = np.random.default_rng(4)
        model = mlp_init((6, 9, 4), 7)
        batch = rand_batch(rng, 5, 6, 4)
        bundle = first_layer_grads(model, batch)
        pre = batch.x @ model.weights[0].T + model.biases[0]
        assert np.array_equal(bundle.r_mask, (pre > 0).astype(np.int64).T)
        # a pre-activation of exactly zero counts as inactive
        m2 = mlp_init((2, 2, 2), 0)
        m2.weights[0] = np.eye(2)
        m2.biases[0] = np.zeros(2)
        b2 = first_layer_grads(m2, Batch(np.zeros((1, 2)), (0,)), "sum_of_outputs")
        assert b2.r_mask.tolist() == [[0], [0]]

    def test_finite_difference_oracle(self):
        rng = np.random.default_rng(5)
        model = mlp_init((8, 10, 6, 4), 11)
        batch = rand_batch(rng, 5, 8, 4)
        for loss in ("cross_entropy", "sum_of_outputs"):
            w_grads, b_grads, _ = model_gradients(model, batch, loss)
            eps = 1e-6
            for i, j in [(0, 0), (4, 7), (9, 3)]:
                for l in range(2 if loss == "cross_entropy" else 1):
                    mp, mm = model.copy(), model.copy()
                    mp.weights[l][i % mp.weights[l].shape[0], j % mp.weights[l].shape[1]] += eps
                    mm.weights[l][i % mm.weights[l].shape[0], j % mm.weights[l].shape[1]] -= eps
                    fd = (batch_loss(mp, batch, loss) - batch_loss(mm, batch, loss)) / (2 * eps)
                    got = w_grads[l][i % w_grads[l].shape[0], j % w_grads[l].shape[1]]
                    assert abs(fd - got) <= 1e-4 * max(1.0, abs(got))

    def test_unknown_loss(self):
        with pytest.raises(ValueError):
            first_layer_grads(mlp_init((2, 3, 2), 0), Batch(np.zeros((1, 2)), (0,)), "hinge")


class TestSingleSample:
    def test_division_example(self):
        bundle = GradientBundle(
            g_w=np.array([[2.0, -4.0]]),
            g_b=np.array([2.0]),
            l_factor=np.ones((1, 1)),
            r_mask=np.ones((1, 1), dtype=np.int64),
            y_pre=np.ones((1, 1)),
            x=np.array([[1.0, -2.0]]),
        )
        assert single_sample_reconstruct(bundle).tolist() == [1.0, -2.0]

    def test_planted_recovery(self):
        rng = np.random.default_rng(6)
        for seed in range(20):
            model = mlp_init((10, 24, 5), seed)
            x = rng.uniform(0.0, 1.0, (1, 10))
            bundle = first_layer_grads(model, Batch(x, (1,)))
            rec = single_sample_reconstruct(bundle)
            assert np.abs(rec - x[0]).max() <= 1e-9

    def test_all_dead(self):
        model = mlp_init((4, 6, 3), 2)
        model.biases[0] = np.full(6, -50.0)
        bundle = first_layer_grads(model, Batch(np.random.default_rng(1).uniform(0, 1, (1, 4)), (0,)))
        with pytest.raises(NoActiveNeuron):
            single_sample_reconstruct(bundle)

    def test_requires_single_sample(self):
        model = mlp_init((4, 6, 3), 2)
        bundle = first_layer_grads(model, rand_batch(np.random.default_rng(2), 3, 4, 3))
        with pytest.raises(ValueError):
            single_sample_reconstruct(bundle)


class TestRounds:
    def test_single_client_equals_direct(self):
        rng = np.random.default_rng(7)
        model = mlp_init((6, 8, 4), 3)
        batch = rand_batch(rng, 4, 6, 4)
        agg = fl_round([batch], model)
        direct = first_layer_grads(model, batch)
        assert np.array_equal(agg.g_w, direct.g_w)
        assert np.array_equal(agg.g_b, direct.g_b)

    def test_identical_batches_mean(self):
        rng = np.random.default_rng(8)
        model = mlp_init((6, 8, 4), 4)
        batch = rand_batch(rng, 4, 6, 4)
        agg = fl_round([batch, batch], model)
        direct = first_layer_grads(model, batch)
        assert np.allclose(agg.g_w, direct.g_w, rtol=0, atol=1e-15)

    def test_stacked_factor_identity(self):
        rng = np.random.default_rng(9)
        model = mlp_init((6, 12, 4), 5)
        batches = [rand_batch(rng, 3, 6, 4) for _ in range(3)]
        agg = fl_round(batches, model)
        rhs = agg.d_stack @ agg.x_stack / (3 * 3)
        denom = max(np.abs(agg.g_w).max(), 1e-300)
        assert np.abs(agg.g_w - rhs).max() / denom <= 1e-9

    def test_weight_sharing_equality(self):
        rng = np.random.default_rng(10)
        model = mlp_init((6, 12, 4), 6)
        batches = [rand_batch(rng, 3, 6, 4) for _ in range(4)]
        eta = 0.05
        shared = weight_sharing_round(model, batches, eta)
        agg = fl_round(batches, model)
        direct = model.weights[0] - eta * agg.g_w
        assert np.abs(shared.weights[0] - direct).max() <= 1e-12

    def test_weight_sharing_eta_zero(self):
        model = mlp_init((4, 6, 3), 1)
        out = weight_sharing_round(model, [rand_batch(np.random.default_rng(3), 2, 4, 3)], 0.0)
        assert all(np.array_equal(a, b) for a, b in zip(out.weights, model.weights))

    def test_sgd_steps_changes_model(self):
        rng = np.random.default_rng(11)
        model = mlp_init((4, 6, 3), 1)
        out = sgd_steps(model, [rand_batch(rng, 3, 4, 3) for _ in range(3)], eta=0.1)
        assert not np.array_equal(out.weights[0], model.weights[0])


class TestEncoding:
    def test_scale_validation(self):
        with pytest.raises(ValueError):
            Encoding(scale=3, q=Modulus(101))

    def test_examples(self):
        enc = Encoding(scale=256, q=Modulus((1 << 31) - 1))
        e = encode_real(np.array([[0.5, -0.5]]), enc)
        assert e.data[0][0] == 128
        assert e.data[0][1] == enc.q.q - 128

    def test_roundtrip_error_bound(self):
        enc = Encoding(scale=256, q=Modulus((1 << 31) - 1))
        rng = np.random.default_rng(12)
        mat = rng.uniform(-100, 100, (8, 8))
        back = decode_int(encode_real(mat, enc), enc)
        assert np.abs(back - mat).max() <= 1 / 512

    def test_grid_exact(self):
        enc = Encoding(scale=256, q=Modulus((1 << 31) - 1))
        mat = np.floor(np.random.default_rng(13).uniform(0, 1, (5, 5)) * 256) / 256
        assert np.array_equal(decode_int(encode_real(mat, enc), enc), mat)

    def test_injective_on_grid(self):
        enc = Encoding(scale=256, q=Modulus((1 << 20) + 7))
        grid = np.arange(-800, 800) / 256.0
        codes = encode_real(grid.reshape(1, -1), enc).data[0]
        assert len(set(codes)) == len(grid)

    def test_overflow(self):
        enc = Encoding(scale=256, q=Modulus(1009))
        with pytest.raises(Overflow):
            encode_real(np.array([[10.0]]), enc)

    def test_fl_q_bits_monotone_in_m(self):
        bits = [fl_q_bits(m, 10, 20) for m in (20, 100, 300, 500)]
        assert bits == sorted(bits)
        assert bits[0] >= 16


class TestInstances:
    def test_worked_product(self):
        mask = np.array([[1, 0], [0, 1], [1, 1]], dtype=np.int64)
        x = np.array([[2.0, 3.0], [4.0, 5.0]])
        bundle = GradientBundle(
            g_w=np.zeros((3, 2)), g_b=np.zeros(3),
            l_factor=np.ones((3, 2)), r_mask=mask, y_pre=np.ones((3, 2)), x=x,
        )
        enc = Encoding(scale=1, q=Modulus(10007))
        inst, planted = binary_regime_instance(bundle, enc)
        assert inst.h.to_lists() == [[2, 3], [4, 5], [6, 8]]
        assert planted.a.to_lists() == mask.tolist()

    def test_single_sample_column_structure(self):
        rng = np.random.default_rng(14)
        model = mlp_init((5, 12, 3), 9)
        x = np.floor(rng.uniform(0, 1, (1, 5)) * 256) / 256
        bundle = first_layer_grads(model, Batch(x, (0,)))
        enc = default_encoding(12, 1, 5)
        inst, planted = binary_regime_instance(bundle, enc)
        xe = planted.x.to_lists()[0]
        for i, row in enumerate(inst.h.to_lists()):
            a_i = planted.a.data[i][0]
            assert row == [a_i * v for v in xe]

    def test_rank_deficient_mask(self):
        bundle = GradientBundle(
            g_w=np.zeros((3, 2)), g_b=np.zeros(3),
            l_factor=np.ones((3, 2)),
            r_mask=np.ones((3, 2), dtype=np.int64),
            y_pre=np.ones((3, 2)),
            x=np.array([[0.1, 0.2], [0.3, 0.4]]),
        )
        enc = default_encoding(3, 2, 2)
        with pytest.raises(RankDeficientMask):
            binary_regime_instance(bundle, enc)

    def test_secure_aggregate_single_client(self):
        rng = np.random.default_rng(15)
        model = mlp_init((6, 40, 4), 10)
        x = np.floor(rng.uniform(0, 1, (2, 6)) * 256) / 256
        bundle = first_layer_grads(model, Batch(x, (0, 1)))
        enc = default_encoding(12, 2, 6)
        inst1, p1 = binary_regime_instance(bundle, enc)
        inst2, p2 = secure_aggregate_instance([bundle], enc)
        assert inst1 == inst2 and p1.a == p2.a and p1.x == p2.x

    def test_secure_aggregate_rank_stacks(self):
        rng = np.random.default_rng(16)
        model = mlp_init((6, 60, 4), 11)
        bundles = []
        for c in range(2):
            x = np.floor(rng.uniform(0, 1, (1, 6)) * 256) / 256
            bundles.append(first_layer_grads(model, Batch(x, (c,))))
        enc = default_encoding(12, 2, 6)
        inst, planted = secure_aggregate_instance(bundles, enc)
        assert inst.batch == 2
        assert planted.a.cols == 2 and planted.x.rows == 2

    def test_aggregated_instance_solvable(self):
        # the defense-side observable factors exactly like a batch of N*B
        rng = np.random.default_rng(17)
        model = mlp_init((8, 80, 4), 12)
        bundles = []
        for c in range(2):
            x = np.floor(rng.uniform(0, 1, (2, 8)) * 256) / 256
            bundles.append(first_layer_grads(model, Batch(x, (0, 1))))
        enc = default_encoding(8, 4, 8)
        inst, planted = secure_aggregate_instance(bundles, enc)
        assert verify_solution(inst, planted.a, planted.x)
        q = enc.q.q
        nb_gw = sum(b.r_mask @ np.rint(b.x * enc.scale) for b in bundles)
        lhs = IntMatrix.from_rows([[int(v) % q for v in row] for row in nb_gw])
        assert lhs == inst.h  # N*B*G_ave in the L=1 regime equals A X


class TestDatasets:
    def test_csv_roundtrip(self, tmp_path):
        from gradleak.datasets import load_csv, save_csv

        rng = np.random.default_rng(18)
        data = np.floor(rng.uniform(0, 256, (6, 4)))
        labels = np.array([0, 1, 2, 0, 1, 2])
        path = tmp_path / "d.csv"
        save_csv(path, data, labels)
        feats, labs = load_csv(path, labeled=True)
        assert np.array_equal(feats, data) and np.array_equal(labs, labels)
        save_csv(path, data)
        feats, labs = load_csv(path)
        assert np.array_equal(feats, data) and labs is None

    def test_idx_roundtrip(self, tmp_path):
        from gradleak.datasets import load_idx, save_idx_images, save_idx_labels

        rng = np.random.default_rng(19)
        imgs = rng.integers(0, 256, (5, 16), dtype=np.uint8)
        path = tmp_path / "imgs.idx"
        save_idx_images(path, imgs, 4, 4)
        with open(path, "rb") as fh:
            assert fh.read(4) == b"\x00\x00\x08\x03"
        back = load_idx(path)
        assert back.shape == (5, 16)
        assert np.array_equal(np.round(back * 256).astype(np.uint8), imgs)
        lpath = tmp_path / "labels.idx"
        save_idx_labels(lpath, np.array([1, 2, 3, 4, 5]))
        with open(lpath, "rb") as fh:
            assert fh.read(4) == b"\x00\x00\x08\x01"
        assert load_idx(lpath).tolist() == [1, 2, 3, 4, 5]

    def test_checkpoint_roundtrip(self, tmp_path):
        from gradleak.datasets import load_checkpoint, save_checkpoint

        model = mlp_init((4, 6, 3), 21)
        path = tmp_path / "model.json"
        save_checkpoint(path, model)
        back = load_checkpoint(path)
        assert back.layer_sizes == model.layer_sizes
        assert all(np.array_equal(a, b) for a, b in zip(back.weights, model.weights))
        assert all(np.array_equal(a, b) for a, b in zip(back.biases, model.biases))
