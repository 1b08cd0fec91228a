import numpy as np
import numpy.testing as npt
import pytest

from taskaware import tensor as T


def rand(rng, *shape):
    return T.param(rng.uniform(-2.0, 2.0, shape))


class TestMatmul:
    def test_identity_is_bitwise_exact(self):
        x = T.param([[1.0, 2.0], [3.0, 4.0]])
        out = T.matmul(x, T.tensor(np.eye(2)))
        assert np.array_equal(out.data, x.data)

    def test_hand_multiplied_product(self):
        a = T.param([[1.0, 2.0], [3.0, 4.0]])
        b = T.param([[5.0, 6.0], [7.0, 8.0]])
        npt.assert_array_equal(T.matmul(a, b).data, [[19.0, 22.0], [43.0, 50.0]])

    def test_zero_matrix_annihilates(self):
        rng = np.random.default_rng(3)
        b = rand(rng, 4, 5)
        out = T.matmul(T.param(np.zeros((3, 4))), b)
        npt.assert_array_equal(out.data, np.zeros((3, 5)))

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(T.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(T.param(np.zeros((2, 3))), T.param(np.zeros((2, 3))))

    def test_gradients_match_hand_formulas(self):
        rng = np.random.default_rng(0)
        a, b = rand(rng, 3, 4), rand(rng, 4, 2)
        c = T.matmul(a, b)
        g = rng.standard_normal(c.shape)
        loss = T.sum_all(T.multiply(c, T.tensor(g)))
        T.backward(loss)
        npt.assert_allclose(a.grad, g @ b.data.T, rtol=1e-12)
        npt.assert_allclose(b.grad, a.data.T @ g, rtol=1e-12)

    @pytest.mark.parametrize(
        "sa,sb",
        [((3, 4), (4, 2)), ((2, 3, 4), (4, 5)), ((2, 3, 4), (2, 4, 5)),
         ((2, 2, 3, 4), (2, 2, 4, 3)), ((4,), (4, 3)), ((3, 4), (4,))],
    )
    def test_gradcheck_batched_shapes(self, sa, sb):
        rng = np.random.default_rng(7)
        a, b = rand(rng, *sa), rand(rng, *sb)
        assert T.gradcheck(lambda x: T.sum_all(T.matmul(x, b)), a) < 1e-8
        assert T.gradcheck(lambda y: T.sum_all(T.matmul(a, y)), b) < 1e-8


class TestRelu:
    def test_clamps_negatives(self):
        npt.assert_array_equal(T.relu(T.param([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_all_negative_gives_zeros(self):
        out = T.relu(T.param([-3.0, -0.5, -10.0]))
        npt.assert_array_equal(out.data, np.zeros(3))

    def test_gradient_passes_only_where_positive(self):
        x = T.param([-1.0, 2.0])
        T.backward(T.sum_all(T.relu(x)))
        npt.assert_array_equal(x.grad, [0.0, 1.0])
        assert T.gradcheck(lambda t: T.sum_all(T.relu(t)), T.param([-1.0, 2.0])) < 1e-9


class TestSoftmaxCrossEntropy:
    def test_uniform_logits_give_log2(self):
        loss = T.softmax_cross_entropy(T.param([[0.0, 0.0]]), np.array([0]))
        assert loss.item() == pytest.approx(np.log(2.0), abs=1e-12)

    def test_huge_logit_is_stable(self):
        loss = T.softmax_cross_entropy(T.param([[1000.0, 0.0]]), np.array([0]))
        assert np.isfinite(loss.item())
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_matches_extended_precision_oracle(self):
        import mpmath

        rng = np.random.default_rng(11)
        logits = rng.uniform(-4, 4, (3, 4))
        labels = np.array([1, 0, 3])
        with mpmath.workdps(50):
            per_row = []
            for row, lab in zip(logits, labels):
                exps = [mpmath.e ** mpmath.mpf(v) for v in row]
                per_row.append(-mpmath.log(exps[lab] / mpmath.fsum(exps)))
            expected = float(mpmath.fsum(per_row) / 3)
        loss = T.softmax_cross_entropy(T.param(logits), labels)
        assert abs(loss.item() - expected) < 1e-10

    def test_label_out_of_range(self):
        with pytest.raises(IndexError):
            T.softmax_cross_entropy(T.param(np.zeros((2, 3))), np.array([0, 3]))

    def test_gradient_is_softmax_minus_onehot_over_batch(self):
        rng = np.random.default_rng(2)
        logits = T.param(rng.uniform(-3, 3, (4, 5)))
        labels = np.array([0, 4, 2, 2])
        T.backward(T.softmax_cross_entropy(logits, labels))
        z = logits.data - logits.data.max(axis=1, keepdims=True)
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        p[np.arange(4), labels] -= 1.0
        npt.assert_allclose(logits.grad, p / 4, rtol=1e-12)


class TestPooling:
    def test_mean_pool_all_valid(self):
        out = T.mean_pool(T.param([[1.0, 3.0], [3.0, 5.0]]), np.array([True, True]))
        npt.assert_array_equal(out.data, [2.0, 4.0])

    def test_mean_pool_single_valid_row_is_that_row(self):
        seq = T.param([[9.0, -1.0, 4.0], [0.0, 0.0, 0.0]])
        out = T.mean_pool(seq, np.array([True, False]))
        npt.assert_array_equal(out.data, [9.0, -1.0, 4.0])

    def test_mean_pool_against_brute_force(self):
        rng = np.random.default_rng(5)
        data = rng.uniform(-3, 3, (5, 3))
        mask = np.array([True, False, True, True, False])
        expected = sum(data[i] for i in range(5) if mask[i]) / mask.sum()
        npt.assert_allclose(T.mean_pool(T.param(data), mask).data, expected, rtol=1e-15)

    def test_max_pool_columnwise(self):
        out = T.max_pool(T.param([[1.0, 3.0], [3.0, 5.0]]), np.array([True, True]))
        npt.assert_array_equal(out.data, [3.0, 5.0])

    def test_max_pool_single_valid_row_is_that_row(self):
        seq = T.param([[7.0, 7.0], [100.0, 100.0]])
        out = T.max_pool(seq, np.array([True, False]))
        npt.assert_array_equal(out.data, [7.0, 7.0])

    def test_max_pool_tie_goes_to_first_row(self):
        seq = T.param([[2.0], [2.0]])
        T.backward(T.sum_all(T.max_pool(seq, np.array([True, True]))))
        npt.assert_array_equal(seq.grad, [[1.0], [0.0]])

    def test_empty_mask_raises(self):
        with pytest.raises(T.EmptySequenceError):
            T.mean_pool(T.param(np.ones((2, 2))), np.array([False, False]))
        with pytest.raises(T.EmptySequenceError):
            T.max_pool(T.param(np.ones((2, 2))), np.array([False, False]))

    def test_masked_values_are_ignored(self):
        rng = np.random.default_rng(9)
        data = rng.uniform(-1, 1, (4, 3))
        mask = np.array([True, False, True, False])
        poked = data.copy()
        poked[~mask] = 1e9
        for op in (T.mean_pool, T.max_pool):
            npt.assert_array_equal(op(T.param(data), mask).data,
                                   op(T.param(poked), mask).data)

    def test_batched_pool_gradcheck(self):
        rng = np.random.default_rng(13)
        seq = rand(rng, 2, 4, 3)
        mask = np.array([[True, True, False, True], [True, False, False, False]])
        assert T.gradcheck(lambda s: T.sum_all(T.mean_pool(s, mask)), seq) < 1e-8
        assert T.gradcheck(lambda s: T.sum_all(T.max_pool(s, mask)), seq) < 1e-8


class TestConcat:
    def test_vectors(self):
        out = T.concat(T.param([1.0, 2.0]), T.param([3.0]))
        npt.assert_array_equal(out.data, [1.0, 2.0, 3.0])

    def test_empty_second_operand(self):
        x = T.param([[1.0, 2.0]])
        out = T.concat(x, T.param(np.zeros((1, 0))))
        npt.assert_array_equal(out.data, x.data)

    def test_slice_back_recovers_inputs_exactly(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            lead = tuple(rng.integers(1, 4, rng.integers(1, 3)))
            d1, d2 = int(rng.integers(1, 5)), int(rng.integers(1, 5))
            a = rng.uniform(-2, 2, lead + (d1,))
            b = rng.uniform(-2, 2, lead + (d2,))
            out = T.concat(T.param(a), T.param(b)).data
            assert np.array_equal(out[..., :d1], a)
            assert np.array_equal(out[..., d1:], b)

    def test_leading_shape_mismatch(self):
        with pytest.raises(T.ShapeError):
            T.concat(T.param(np.zeros((2, 3))), T.param(np.zeros((3, 3))))

    def test_backward_splits_gradient(self):
        a, b = T.param([1.0, 2.0]), T.param([3.0])
        out = T.concat(a, b)
        T.backward(T.sum_all(T.multiply(out, T.tensor([2.0, 4.0, 8.0]))))
        npt.assert_array_equal(a.grad, [2.0, 4.0])
        npt.assert_array_equal(b.grad, [8.0])


class TestDropout:
    def test_p_zero_is_identity(self):
        x = T.param([1.0, -2.0])
        assert T.dropout(x, 0.0, training=True, rng=np.random.default_rng(0)) is x

    def test_eval_mode_is_identity(self):
        x = T.param([1.0, -2.0])
        assert T.dropout(x, 0.5, training=False) is x

    def test_zero_fraction_law_of_large_numbers(self):
        rng = np.random.default_rng(42)
        x = T.param(np.ones(1_000_000))
        out = T.dropout(x, 0.3, training=True, rng=rng)
        zero_frac = float((out.data == 0.0).mean())
        assert abs(zero_frac - 0.300) < 0.002

    def test_survivors_scaled_by_inverse_keep(self):
        rng = np.random.default_rng(1)
        out = T.dropout(T.param(np.ones(1000)), 0.25, training=True, rng=rng)
        survivors = out.data[out.data != 0.0]
        npt.assert_allclose(survivors, 1.0 / 0.75)

    def test_invalid_p(self):
        for p in (-0.1, 1.0, 1.5):
            with pytest.raises(ValueError):
                T.dropout(T.param([1.0]), p, training=True, rng=np.random.default_rng(0))

    def test_gradient_uses_same_mask(self):
        x = T.param(np.ones(64))
        out = T.dropout(x, 0.5, training=True, rng=np.random.default_rng(8))
        T.backward(T.sum_all(out))
        npt.assert_array_equal(x.grad, out.data)


class TestBackward:
    def test_sum_gives_ones(self):
        x = T.param(np.arange(6.0).reshape(2, 3))
        T.backward(T.sum_all(x))
        npt.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_elementwise_square_gives_two_x(self):
        x = T.param([1.0, -2.0, 0.5])
        T.backward(T.sum_all(T.multiply(x, x)))
        npt.assert_array_equal(x.grad, 2 * x.data)

    def test_two_consumers_accumulate_by_sum(self):
        rng = np.random.default_rng(17)
        w = rand(rng, 3, 3)

        def single(term):
            p = T.param(w.data.copy())
            T.backward(T.sum_all(term(p)))
            return p.grad

        g_a = single(lambda p: T.matmul(p, T.tensor(np.eye(3) * 2)))
        g_b = single(lambda p: T.relu(p))
        both = T.param(w.data.copy())
        T.backward(T.sum_all(T.add(T.matmul(both, T.tensor(np.eye(3) * 2)), T.relu(both))))
        npt.assert_allclose(both.grad, g_a + g_b, rtol=1e-14)

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ValueError):
            T.backward(T.param([1.0, 2.0]))


class TestOtherOps:
    def test_embedding_lookup_gathers_rows(self):
        table = T.param(np.arange(12.0).reshape(4, 3))
        out = T.embedding_lookup(table, np.array([[0, 2], [3, 0]]))
        npt.assert_array_equal(out.data[1, 0], [9.0, 10.0, 11.0])

    def test_embedding_backward_scatter_adds(self):
        table = T.param(np.zeros((4, 2)))
        out = T.embedding_lookup(table, np.array([1, 1, 3]))
        T.backward(T.sum_all(out))
        npt.assert_array_equal(table.grad, [[0, 0], [2, 2], [0, 0], [1, 1]])

    def test_embedding_id_out_of_range(self):
        with pytest.raises(IndexError):
            T.embedding_lookup(T.param(np.zeros((4, 2))), np.array([4]))

    def test_layer_norm_normalizes_rows(self):
        rng = np.random.default_rng(3)
        x = rand(rng, 5, 8)
        out = T.layer_norm(x, T.param(np.ones(8)), T.param(np.zeros(8)))
        npt.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-12)
        npt.assert_allclose(out.data.std(axis=-1), 1.0, atol=1e-3)

    def test_masked_softmax_rows_sum_to_one_and_mask_zeroed(self):
        rng = np.random.default_rng(4)
        scores = rand(rng, 3, 6)
        mask = np.array([[True] * 6, [True, False, True, False, True, False],
                         [False, False, True, True, True, True]])
        out = T.masked_softmax(scores, mask)
        npt.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)
        assert (out.data[~mask] == 0.0).all()

    def test_masked_softmax_extreme_scores_stay_finite(self):
        scores = T.param([[1e5, -1e5, 0.0]])
        out = T.masked_softmax(scores, np.array([[True, True, True]]))
        assert np.isfinite(out.data).all()

    def test_reshape_transpose_round_trip(self):
        rng = np.random.default_rng(6)
        x = rand(rng, 2, 3, 4)
        back = T.transpose(T.transpose(x, (2, 0, 1)), (1, 2, 0))
        npt.assert_array_equal(back.data, x.data)


class TestGradcheckOracle:
    """Every differentiable op passes finite differences at small shapes."""

    def test_sum_is_exact(self):
        assert T.gradcheck(T.sum_all, T.param(np.random.default_rng(0).uniform(-1, 1, 7))) < 1e-10

    def test_cross_entropy(self):
        rng = np.random.default_rng(23)
        logits = T.param(rng.uniform(-3, 3, (3, 4)))
        labels = np.array([0, 2, 3])
        assert T.gradcheck(lambda x: T.softmax_cross_entropy(x, labels), logits) < 1e-6

    @pytest.mark.parametrize("seed", range(3))
    def test_elementary_ops_below_1e6(self, seed):
        rng = np.random.default_rng(100 + seed)
        mask = rng.random((6, 5)) < 0.7
        mask[:, 0] = True
        pool_mask = mask[:, 1]
        pool_mask[0] = True
        fixed = rand(rng, 6, 5)
        gain, bias = rand(rng, 5), rand(rng, 5)
        cases = [
            lambda x: T.sum_all(T.add(x, fixed)),
            lambda x: T.sum_all(T.multiply(x, fixed)),
            lambda x: T.sum_all(T.scale(x, -1.7)),
            lambda x: T.sum_all(T.matmul(x, T.transpose(fixed))),
            lambda x: T.sum_all(T.relu(x)),
            lambda x: T.sum_all(T.concat(x, fixed)),
            lambda x: T.sum_all(T.layer_norm(x, gain, bias)),
            lambda x: T.sum_all(T.masked_softmax(x, mask)),
            lambda x: T.sum_all(T.mean_pool(x, pool_mask)),
            lambda x: T.sum_all(T.max_pool(x, pool_mask)),
            lambda x: T.sum_all(T.reshape(x, (5, 6))),
            lambda x: T.sum_all(T.transpose(x)),
        ]
        for f in cases:
            assert T.gradcheck(f, rand(rng, 6, 5)) < 1e-6

    def test_layer_norm_gain_bias_gradients(self):
        rng = np.random.default_rng(31)
        x = rand(rng, 4, 5)
        gain, bias = rand(rng, 5), rand(rng, 5)
        assert T.gradcheck(lambda g: T.sum_all(T.layer_norm(x, g, bias)), gain) < 1e-7
        assert T.gradcheck(lambda b: T.sum_all(T.layer_norm(x, gain, b)), bias) < 1e-7

    def test_gradcheck_params_spans_multiple_tensors(self):
        rng = np.random.default_rng(37)
        w1, w2 = rand(rng, 4, 3), rand(rng, 3, 2)
        x = T.tensor(rng.uniform(-1, 1, (2, 4)))

        def loss():
            return T.sum_all(T.relu(T.matmul(T.matmul(x, w1), w2)))

        assert T.gradcheck_params(loss, [w1, w2]) < 1e-7
