import numpy as np
import pytest

from cscoref.scorer import (ModelDims, NonFiniteParameterError,
                            attend, batch_loss, batch_loss_from_dataset,
                            commonsense_vector, forward_batch, gradients,
                            init_parameters, load_checkpoint, pair_features,
                            save_checkpoint, score_pair)
from cscoref.training import make_random_dataset


@pytest.fixture
def dims():
    return ModelDims(d=4, d_len=3, d_a=2, h=6, mode="intra")


@pytest.fixture
def params(dims):
    return init_parameters(dims, 0)


class TestAttend:
    def test_singleton_weight_one(self, rng):
        rep_dim = 5
        W_q = rng.standard_normal((rep_dim, 2))
        W_k = rng.standard_normal((rep_dim, 2))
        r = rng.standard_normal(rep_dim)
        out = attend(rng.standard_normal(rep_dim), [r], W_q, W_k)
        np.testing.assert_allclose(out.weights, [1.0])
        np.testing.assert_allclose(out.vector, r)

    def test_identical_representations_uniform(self, rng):
        rep_dim = 5
        W_q = rng.standard_normal((rep_dim, 2))
        W_k = rng.standard_normal((rep_dim, 2))
        r = rng.standard_normal(rep_dim)
        out = attend(rng.standard_normal(rep_dim), [r, r, r], W_q, W_k)
        np.testing.assert_allclose(out.weights, [1 / 3] * 3, atol=1e-12)
        np.testing.assert_allclose(out.vector, r)

    def test_hand_projected_scores(self):
        # d_a=1; projections give scores (0, ln 2) -> weights (1/3, 2/3)
        W_q = np.array([[1.0]])
        W_k = np.array([[1.0]])
        query = np.array([1.0])
        reps = [np.array([0.0]), np.array([np.log(2.0)])]
        out = attend(query, reps, W_q, W_k)
        np.testing.assert_allclose(out.weights, [1 / 3, 2 / 3], atol=1e-12)
        np.testing.assert_allclose(out.vector,
                                   (2 / 3) * np.array([np.log(2.0)]),
                                   atol=1e-12)

    def test_empty_list_zero_vector(self, rng):
        W = rng.standard_normal((5, 2))
        out = attend(rng.standard_normal(5), [], W, W)
        np.testing.assert_array_equal(out.vector, np.zeros(5))
        assert out.weights.size == 0

    def test_dimension_mismatch(self, rng):
        W = rng.standard_normal((5, 2))
        with pytest.raises(ValueError):
            attend(rng.standard_normal(4), [], W, W)
        with pytest.raises(ValueError):
            attend(rng.standard_normal(5), [rng.standard_normal(4)], W, W)

    def test_invariants_1000_random_instances(self, rng):
        """Acceptance: nonneg weights, sum 1, permutation behavior,
        singleton weight 1.0."""
        for _ in range(1000):
            rep_dim = int(rng.integers(1, 6))
            d_a = int(rng.integers(1, 4))
            n = int(rng.integers(1, 6))
            W_q = rng.standard_normal((rep_dim, d_a))
            W_k = rng.standard_normal((rep_dim, d_a))
            query = rng.standard_normal(rep_dim)
            reps = [rng.standard_normal(rep_dim) for _ in range(n)]
            out = attend(query, reps, W_q, W_k)
            assert (out.weights >= 0).all()
            assert abs(out.weights.sum() - 1.0) <= 1e-9
            if n == 1:
                assert out.weights[0] == pytest.approx(1.0, abs=1e-12)
            perm = rng.permutation(n)
            permuted = attend(query, [reps[i] for i in perm], W_q, W_k)
            np.testing.assert_allclose(permuted.weights, out.weights[perm],
                                       atol=1e-9)
            np.testing.assert_allclose(permuted.vector, out.vector,
                                       atol=1e-9)

    def test_duplicate_of_identical_keys_keeps_vector(self, rng):
        rep_dim, d_a = 4, 2
        W_q = rng.standard_normal((rep_dim, d_a))
        W_k = rng.standard_normal((rep_dim, d_a))
        query = rng.standard_normal(rep_dim)
        r = rng.standard_normal(rep_dim)
        two = attend(query, [r, r], W_q, W_k)
        three = attend(query, [r, r, r], W_q, W_k)
        assert two.weights.shape != three.weights.shape
        np.testing.assert_allclose(two.vector, three.vector, atol=1e-12)


class TestCommonsenseVector:
    def test_empty_before_keeps_after(self, params, dims, rng):
        r = rng.standard_normal(dims.rep_dim)
        ctx = rng.standard_normal(dims.rep_dim)
        cs, traces = commonsense_vector("intra", ctx, [], [r], params)
        np.testing.assert_array_equal(cs[:dims.rep_dim],
                                      np.zeros(dims.rep_dim))
        np.testing.assert_allclose(cs[dims.rep_dim:], r)
        assert traces["before"].weights.size == 0

    def test_mode_only_routes_inputs(self, params, dims, rng):
        ctx = rng.standard_normal(dims.rep_dim)
        before = [rng.standard_normal(dims.rep_dim)]
        after = [rng.standard_normal(dims.rep_dim)]
        intra, _ = commonsense_vector("intra", ctx, before, after, params)
        inter, _ = commonsense_vector("inter", ctx, before, after, params)
        np.testing.assert_array_equal(intra, inter)

    def test_permutation_invariant(self, params, dims, rng):
        ctx = rng.standard_normal(dims.rep_dim)
        before = [rng.standard_normal(dims.rep_dim) for _ in range(4)]
        a, _ = commonsense_vector("intra", ctx, before, [], params)
        b, _ = commonsense_vector("intra", ctx, before[::-1], [], params)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_baseline_mode_rejected(self, params, dims):
        with pytest.raises(ValueError):
            commonsense_vector("baseline", np.zeros(dims.rep_dim), [], [],
                               params)


class TestPairFeatures:
    def test_full_mode_dimension(self, rng):
        # d=16, d_len=20: rep 68, full feature 6*68 = 408
        ctx = rng.standard_normal(68)
        cs = rng.standard_normal(136)
        feature = pair_features(ctx, ctx, cs, cs, "intra")
        assert feature.g.shape == (408,)

    def test_baseline_dimension(self, rng):
        ctx = rng.standard_normal(68)
        feature = pair_features(ctx, ctx, None, None, "baseline")
        assert feature.g.shape == (136,)

    def test_layout_order(self, rng):
        ctx_i = rng.standard_normal(5)
        ctx_j = rng.standard_normal(5)
        cs_i = rng.standard_normal(10)
        cs_j = rng.standard_normal(10)
        g = pair_features(ctx_i, ctx_j, cs_i, cs_j, "inter").g
        np.testing.assert_array_equal(g[:5], ctx_i)
        np.testing.assert_array_equal(g[5:10], ctx_j)
        np.testing.assert_array_equal(g[10:20], cs_i)
        np.testing.assert_array_equal(g[20:30], cs_j)

    def test_zero_cs_blocks(self, rng):
        ctx = rng.standard_normal(5)
        g = pair_features(ctx, ctx, np.zeros(10), np.zeros(10), "intra").g
        np.testing.assert_array_equal(g[10:], np.zeros(20))

    def test_missing_cs_rejected(self, rng):
        ctx = rng.standard_normal(5)
        with pytest.raises(ValueError):
            pair_features(ctx, ctx, None, None, "intra")


class TestScorePair:
    def test_zero_parameters_give_half(self, dims, params):
        for name in ("W1", "b1", "W2", "b2"):
            getattr(params, name)[...] = 0.0
        g = np.ones(dims.g_dim)
        assert score_pair(params, g) == pytest.approx(0.5)

    def test_output_in_open_interval(self, params, dims, rng):
        for _ in range(50):
            p = score_pair(params, rng.standard_normal(dims.g_dim))
            assert 0.0 < p < 1.0

    def test_eval_deterministic(self, params, dims, rng):
        g = rng.standard_normal(dims.g_dim)
        assert score_pair(params, g) == score_pair(params, g)

    def test_training_needs_rng_and_uses_dropout(self, params, dims, rng):
        g = rng.standard_normal(dims.g_dim)
        with pytest.raises(ValueError):
            score_pair(params, g, training=True)
        a = score_pair(params, g, training=True,
                       rng=np.random.default_rng(0))
        b = score_pair(params, g, training=True,
                       rng=np.random.default_rng(0))
        assert a == b  # same mask stream

    def test_monotone_in_bias(self, params, dims, rng):
        g = rng.standard_normal(dims.g_dim)
        lo = score_pair(params, g)
        params.b2[...] = params.b2 + 1.0
        hi = score_pair(params, g)
        assert hi > lo

    def test_non_finite_names_block(self, params, dims):
        params.W1[0, 0] = np.inf
        with pytest.raises(NonFiniteParameterError, match="W1"):
            score_pair(params, np.zeros(dims.g_dim))


class TestBatchLoss:
    def test_half_probability_gives_ln2(self, dims, params):
        for name in ("W1", "b1", "W2", "b2"):
            getattr(params, name)[...] = 0.0
        batch = [(np.ones(dims.g_dim), 1), (np.ones(dims.g_dim), 0)]
        assert batch_loss(params, batch) == pytest.approx(np.log(2.0),
                                                          abs=1e-12)

    def test_confident_correct_is_tiny(self, dims, params):
        # drive p to the clamp: loss <= -ln(1 - 1e-7)
        for name in ("W1", "b1", "W2"):
            getattr(params, name)[...] = 0.0
        params.b2[...] = 50.0
        batch = [(np.ones(dims.g_dim), 1)]
        assert batch_loss(params, batch) <= -np.log(1.0 - 1e-7) + 1e-15

    def test_hand_arithmetic_point_nine(self, dims, params):
        for name in ("W1", "b1", "W2"):
            getattr(params, name)[...] = 0.0
        params.b2[...] = np.log(9.0)  # sigmoid -> 0.9
        batch = [(np.ones(dims.g_dim), 1), (np.ones(dims.g_dim), 0)]
        expected = (-np.log(0.9) - np.log(0.1)) / 2
        assert batch_loss(params, batch) == pytest.approx(expected,
                                                          abs=1e-12)
        assert expected == pytest.approx(1.2040, abs=1e-4)

    def test_empty_batch_rejected(self, params):
        with pytest.raises(ValueError):
            batch_loss(params, [])


class TestGradients:
    def test_bias_gradient_at_zero_parameters(self, dims):
        params = init_parameters(dims, 0)
        for name in ("W1", "b1", "W2", "b2"):
            getattr(params, name)[...] = 0.0
        data = make_random_dataset(dims, 5, n_pairs=2)
        data.labels[:] = [1.0, 0.0]
        _, grads = gradients(params, data, np.array([0]))
        assert grads["b2"] == pytest.approx(-0.5)  # p - y = 0.5 - 1
        _, grads = gradients(params, data, np.array([1]))
        assert grads["b2"] == pytest.approx(0.5)

    def test_duplicated_example_equals_single(self, dims, params):
        data = make_random_dataset(dims, 5, n_pairs=4)
        single_loss, single = gradients(params, data, np.array([2]))
        double_loss, double = gradients(params, data, np.array([2, 2]))
        assert double_loss == pytest.approx(single_loss, abs=1e-12)
        for name, g in single.items():
            np.testing.assert_allclose(double[name], g, atol=1e-12)

    def test_loss_matches_batch_loss_from_dataset(self, dims, params):
        data = make_random_dataset(dims, 5, n_pairs=6)
        sel = np.arange(6)
        loss, _ = gradients(params, data, sel)
        assert loss == pytest.approx(
            batch_loss_from_dataset(params, data, sel), abs=1e-15)


class TestBatchSingleConsistency:
    """The vectorized batch path must agree with the single-instance ops."""

    @pytest.mark.parametrize("mode", ["baseline", "intra", "inter"])
    def test_forward_matches_composition(self, mode, rng):
        from cscoref.embed import span_representation

        dims = ModelDims(d=3, d_len=2, d_a=2, h=4, mode=mode)
        params = init_parameters(dims, 1)
        data = make_random_dataset(dims, 99, n_mentions=5, n_pairs=6, k=3)
        probs, _ = forward_batch(params, data, np.arange(6))

        def mention_rep(row):
            t = data.span_tensors
            length = t.lengths[row]
            return span_representation(
                [t.X[row, :length]], 0, 0, length - 1, params.w_alpha,
                params.width_table).full

        def sentence_reps(rows):
            reps = []
            for row in rows:
                if row < 0:
                    continue
                t = data.sent_tensors
                length = t.lengths[row]
                reps.append(span_representation(
                    [t.X[row, :length]], 0, 0, length - 1, params.w_alpha,
                    params.width_table).full)
            return reps

        for p in range(6):
            i, j = data.pair_i[p], data.pair_j[p]
            ctx_i, ctx_j = mention_rep(i), mention_rep(j)
            if mode == "baseline":
                g = pair_features(ctx_i, ctx_j, None, None, mode).g
            else:
                src_i = i if mode == "intra" else j
                src_j = j if mode == "intra" else i
                cs_i, _ = commonsense_vector(
                    mode, ctx_i, sentence_reps(data.before_idx[src_i]),
                    sentence_reps(data.after_idx[src_i]), params)
                cs_j, _ = commonsense_vector(
                    mode, ctx_j, sentence_reps(data.before_idx[src_j]),
                    sentence_reps(data.after_idx[src_j]), params)
                g = pair_features(ctx_i, ctx_j, cs_i, cs_j, mode).g
            expected = score_pair(params, g)
            assert probs[p] == pytest.approx(expected, abs=1e-12)


class TestCheckpoint:
    def test_roundtrip_identical(self, tmp_path, dims, params):
        path = tmp_path / "model.bin"
        save_checkpoint(params, path)
        loaded = load_checkpoint(path)
        assert loaded.dims == dims
        for name, arr in params.blocks().items():
            np.testing.assert_array_equal(getattr(loaded, name), arr)

    def test_save_deterministic_bytes(self, tmp_path, params):
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_checkpoint(params, p1)
        save_checkpoint(params, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_mismatch_rejected(self, tmp_path, dims, params):
        path = tmp_path / "model.bin"
        save_checkpoint(params, path)
        other = ModelDims(d=8, d_len=3, d_a=2, h=6, mode="intra")
        with pytest.raises(Exception, match="match"):
            load_checkpoint(path, expected=other)

    def test_truncated_rejected(self, tmp_path, params):
        path = tmp_path / "model.bin"
        save_checkpoint(params, path)
        data = path.read_bytes()
        path.write_bytes(data[:-16])
        with pytest.raises(Exception, match="truncated"):
            load_checkpoint(path)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "garbage.bin"
        path.write_bytes(b"hello world")
        with pytest.raises(Exception, match="not a checkpoint"):
            load_checkpoint(path)


class TestInit:
    def test_uniform_bounds(self, dims):
        params = init_parameters(dims, 3)
        bound = 1.0 / np.sqrt(dims.g_dim)
        assert np.abs(params.W1).max() <= bound
        assert np.abs(params.b1).max() <= bound
        assert np.abs(params.W2).max() <= 1.0 / np.sqrt(dims.h)

    def test_seeded(self, dims):
        a = init_parameters(dims, 3)
        b = init_parameters(dims, 3)
        c = init_parameters(dims, 4)
        np.testing.assert_array_equal(a.W1, b.W1)
        assert not np.array_equal(a.W1, c.W1)

    def test_baseline_g_dim(self):
        dims = ModelDims(d=16, d_len=20, mode="baseline")
        assert dims.g_dim == 2 * 68
        assert ModelDims(d=16, d_len=20, mode="intra").g_dim == 6 * 68
