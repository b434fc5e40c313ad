import numpy as np
import pytest

from trendgraph import autodiff as ad
from trendgraph.errors import NonFiniteError, ShapeMismatchError


class TestForwardExamples:
    def test_matmul_identity(self):
        a = ad.constant(np.arange(9.0).reshape(3, 3))
        eye = ad.constant(np.eye(3))
        np.testing.assert_array_equal(ad.matmul(eye, a).value, a.value)

    def test_sigmoid_of_zero_is_half(self):
        z = ad.constant(np.zeros((2, 3)))
        np.testing.assert_array_equal(ad.sigmoid(z).value, np.full((2, 3), 0.5))

    def test_row_normalize_3_4_5(self):
        v = ad.constant(np.array([[3.0, 4.0]]))
        np.testing.assert_allclose(ad.row_l2_normalize(v).value, [[0.6, 0.8]], atol=1e-15)

    def test_conv1d_hand_example(self):
        sig = ad.constant(np.array([[1.0], [2.0], [3.0], [4.0]]))
        ker = ad.constant(np.array([[1.0], [1.0], [1.0]]))
        np.testing.assert_array_equal(ad.conv1d(sig, ker, stride=1).value, [[6.0], [9.0]])

    def test_conv1d_stride_two(self):
        sig = ad.constant(np.arange(1.0, 8.0).reshape(-1, 1))
        ker = ad.constant(np.array([[1.0], [0.0], [1.0]]))
        # windows start at 0, 2, 4: 1+3, 3+5, 5+7
        np.testing.assert_array_equal(ad.conv1d(sig, ker, stride=2).value, [[4.0], [8.0], [12.0]])

    def test_conv1d_too_short(self):
        sig = ad.constant(np.array([[1.0], [2.0]]))
        ker = ad.constant(np.ones((3, 1)))
        with pytest.raises(ShapeMismatchError, match="kernel width"):
            ad.conv1d(sig, ker)

    def test_shape_mismatch_names_both_shapes(self):
        a = ad.constant(np.zeros((2, 3)))
        b = ad.constant(np.zeros((4, 5)))
        with pytest.raises(ShapeMismatchError, match=r"\(2, 3\).*\(4, 5\)"):
            ad.matmul(a, b)
        with pytest.raises(ShapeMismatchError, match=r"\(2, 3\).*\(4, 5\)"):
            ad.hadamard(a, b)

    def test_slice_block(self):
        a = ad.constant(np.arange(12.0).reshape(3, 4))
        out = ad.slice_block(a, (1, 3), (0, 2))
        np.testing.assert_array_equal(out.value, [[4.0, 5.0], [8.0, 9.0]])

    def test_block_row_mean(self):
        a = ad.constant(np.array([[1.0], [3.0], [10.0], [20.0]]))
        np.testing.assert_array_equal(ad.block_row_mean(a, 2).value, [[2.0], [15.0]])


class TestBackwardExamples:
    def test_sum_of_squares(self):
        store = ad.ParameterStore()
        x = store.register("x", [[1.0, 2.0]])
        loss = ad.sum_all(ad.hadamard(x, x))
        ad.backward(loss)
        np.testing.assert_allclose(x.grad, [[2.0, 4.0]])

    def test_matmul_grad_is_ones_bt(self):
        store = ad.ParameterStore()
        rng = np.random.default_rng(3)
        a = store.register("a", rng.normal(size=(2, 3)))
        b = ad.constant(rng.normal(size=(3, 4)))
        loss = ad.sum_all(ad.matmul(a, b))
        ad.backward(loss)
        np.testing.assert_allclose(a.grad, np.ones((2, 4)) @ b.value.T)

    def test_constant_loss_gives_zero_grad(self):
        store = ad.ParameterStore()
        p = store.register("p", [[5.0]])
        loss = ad.sum_all(ad.constant([[1.0, 2.0]]))
        ad.backward(loss)
        np.testing.assert_array_equal(p.grad, [[0.0]])

    def test_backward_requires_scalar(self):
        store = ad.ParameterStore()
        x = store.register("x", [[1.0, 2.0]])
        with pytest.raises(ShapeMismatchError, match="1x1"):
            ad.backward(ad.hadamard(x, x))

    def test_reused_node_accumulates_once_per_path(self):
        # loss = sum(x*x) + sum(x) has gradient 2x + 1
        store = ad.ParameterStore()
        x = store.register("x", [[1.0, -2.0, 3.0]])
        loss = ad.add(ad.sum_all(ad.hadamard(x, x)), ad.sum_all(x))
        ad.backward(loss)
        np.testing.assert_allclose(x.grad, [[3.0, -3.0, 7.0]])

    def test_gradient_linearity(self):
        # backward on a sum of losses equals summed separate backward passes
        rng = np.random.default_rng(11)
        data = rng.normal(size=(3, 3))
        w = rng.normal(size=(3, 3))

        def grads(combined: bool):
            store = ad.ParameterStore()
            x = store.register("x", data.copy())
            wc = ad.constant(w)
            l1 = ad.sum_all(ad.matmul(x, wc))
            l2 = ad.sum_all(ad.hadamard(x, x))
            if combined:
                ad.backward(ad.add(l1, l2))
                return x.grad.copy()
            ad.backward(l1)
            ad.backward(l2)
            return x.grad.copy()

        np.testing.assert_allclose(grads(True), grads(False), atol=1e-12)


class TestFiniteDifferenceAllPrimitives:
    """Analytic grads match central differences on random inputs, many seeds."""

    N_TRIALS = 100

    def _check(self, build_loss, param_shapes, seed, make=None):
        rng = np.random.default_rng(seed)
        store = ad.ParameterStore()
        for name, shape in param_shapes.items():
            data = make[name](rng) if make and name in make else rng.normal(size=shape)
            store.register(name, data)
        report = ad.finite_difference_check(lambda: build_loss(store, rng), store)
        assert report.passed, report.summary()

    @pytest.mark.parametrize("seed", range(N_TRIALS))
    def test_mixed_graph(self, seed):
        """One composite graph touching every primitive, checked per trial."""
        rng = np.random.default_rng(1000 + seed)
        store = ad.ParameterStore()
        a = store.register("a", rng.normal(size=(3, 4)))
        b = store.register("b", rng.normal(size=(4, 3)))
        bias = store.register("bias", rng.normal(size=(1, 3)))
        ker = store.register("ker", rng.normal(size=(2, 3)))
        sig = store.register("sig", rng.normal(size=(5, 1)))
        r1 = ad.constant(rng.normal(size=(3, 3)))

        def build():
            m = ad.matmul(a, b)                     # 3x3
            m = ad.add(m, bias)                     # row broadcast
            m = ad.sub(m, ad.transpose(m))          # transpose + sub, reused node
            m = ad.hadamard(m, r1)
            m = ad.sigmoid(m)
            n = ad.relu(ad.scale(ad.concat_cols(a, ad.transpose(b)), 0.7))  # 3x8
            n = ad.row_l2_normalize(n)
            n = ad.slice_block(n, (0, 3), (2, 5))   # 3x3
            n = ad.tanh(n)
            c = ad.conv1d(sig, ker, stride=1)       # 4x3
            c = ad.block_row_mean(c, 2)             # 2x3
            return ad.add(ad.sum_all(m), ad.add(ad.sum_all(n), ad.mean_all(c)))

        report = ad.finite_difference_check(build, store)
        assert report.passed, report.summary()

    def test_masked_bce_gradient(self):
        rng = np.random.default_rng(99)
        store = ad.ParameterStore()
        z = store.register("z", rng.normal(size=(3, 4)))
        labels = (rng.random((3, 4)) < 0.4).astype(float)
        mask = (rng.random((3, 4)) < 0.8).astype(float)

        def build():
            return ad.masked_bce(ad.sigmoid(z), labels, mask)

        report = ad.finite_difference_check(build, store)
        assert report.passed, report.summary()

    def test_quadratic_loss_is_nearly_exact(self):
        rng = np.random.default_rng(5)
        store = ad.ParameterStore()
        x = store.register("x", rng.normal(size=(2, 3)))

        def build():
            return ad.sum_all(ad.hadamard(x, x))

        report = ad.finite_difference_check(build, store, epsilon=1e-5, tolerance=1e-6)
        assert report.passed, report.summary()
        assert report.worst < 1e-6

    def test_zero_gradient_parameter_uses_absolute_error(self):
        store = ad.ParameterStore()
        unused = store.register("unused", [[0.3, -0.7]])
        used = store.register("used", [[1.0]])

        def build():
            return ad.sum_all(ad.hadamard(used, used))

        report = ad.finite_difference_check(build, store, epsilon=1e-5)
        assert report.max_errors["unused"] < 1e-5
        assert report.passed

    def test_epsilon_domain_enforced(self):
        store = ad.ParameterStore()
        store.register("x", [[1.0]])
        with pytest.raises(ValueError, match="epsilon"):
            ad.finite_difference_check(lambda: None, store, epsilon=1e-2)


class TestInvariants:
    def test_forward_determinism_bitwise(self):
        rng = np.random.default_rng(21)
        data = rng.normal(size=(6, 6))
        w = rng.normal(size=(6, 6))

        def run():
            x = ad.constant(data)
            ww = ad.constant(w)
            out = ad.row_l2_normalize(ad.tanh(ad.matmul(ad.sigmoid(x), ww)))
            return out.value.tobytes()

        assert run() == run()

    def test_normalized_rows_have_unit_norm(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            x = rng.normal(size=(5, 7)) * rng.uniform(0.1, 50)
            out = ad.row_l2_normalize(ad.constant(x)).value
            norms = np.linalg.norm(out, axis=1)
            np.testing.assert_allclose(norms, 1.0, atol=1e-12)

    def test_zero_rows_pass_through(self):
        x = np.array([[0.0, 0.0], [3.0, 4.0]])
        out = ad.row_l2_normalize(ad.constant(x)).value
        np.testing.assert_array_equal(out[0], [0.0, 0.0])

    def test_all_outputs_finite_after_random_ops(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            a = ad.constant(rng.normal(size=(4, 4)) * 100)
            b = ad.constant(rng.normal(size=(4, 4)) * 100)
            outs = [ad.matmul(a, b), ad.add(a, b), ad.hadamard(a, b), ad.sigmoid(a),
                    ad.tanh(b), ad.relu(a), ad.row_l2_normalize(b), ad.transpose(a)]
            for node in outs:
                assert np.all(np.isfinite(node.value))


class TestAdam:
    def test_zero_grad_leaves_parameters_unchanged(self):
        store = ad.ParameterStore()
        x = store.register("x", [[1.0, -2.0]])
        before = x.value.copy()
        ad.adam_step(store, learning_rate=0.1)
        np.testing.assert_array_equal(x.value, before)

    def test_first_step_moves_by_learning_rate(self):
        store = ad.ParameterStore()
        x = store.register("x", [[1.0]])
        x.accumulate_grad(np.array([[1.0]]))
        ad.adam_step(store, learning_rate=0.1)
        # bias-corrected first step is lr * g / (|g| + eps) = ~0.1
        assert x.value[0, 0] == pytest.approx(1.0 - 0.1, abs=1e-8)

    def test_two_identical_steps_move_monotonically(self):
        store = ad.ParameterStore()
        x = store.register("x", [[0.0]])
        values = [0.0]
        for _ in range(2):
            store.zero_grads()
            x.accumulate_grad(np.array([[1.0]]))
            ad.adam_step(store, learning_rate=0.05)
            values.append(x.value[0, 0])
        assert values[0] > values[1] > values[2]

    def test_non_finite_gradient_rejected(self):
        store = ad.ParameterStore()
        x = store.register("x", [[1.0]])
        x.accumulate_grad(np.array([[np.nan]]))
        with pytest.raises(NonFiniteError, match="x"):
            ad.adam_step(store, learning_rate=0.1)

    def test_gradients_left_intact(self):
        store = ad.ParameterStore()
        x = store.register("x", [[1.0]])
        x.accumulate_grad(np.array([[2.0]]))
        ad.adam_step(store, learning_rate=0.1)
        np.testing.assert_array_equal(x.grad, [[2.0]])


class TestParameterStore:
    def test_duplicate_name_rejected(self):
        store = ad.ParameterStore()
        store.register("w", [[1.0]])
        with pytest.raises(ValueError, match="already registered"):
            store.register("w", [[2.0]])

    def test_checkpoint_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(4)
        store = ad.ParameterStore()
        store.register("alpha", rng.normal(size=(3, 5)) * 1e-7)
        store.register("beta", rng.normal(size=(1, 1)) * 1e9)
        path = tmp_path / "model.ckpt"
        store.save(path)
        loaded = ad.ParameterStore.read_checkpoint(path)
        for name, node in store.items():
            assert loaded[name].tobytes() == node.value.tobytes()

    def test_checkpoint_bytes_deterministic(self, tmp_path):
        store = ad.ParameterStore()
        store.register("w", np.linspace(-1, 1, 12).reshape(3, 4))
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        store.save(p1)
        store.save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_checkpoint_magic_enforced(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_text("NOPE\n0\n")
        with pytest.raises(ValueError, match="magic"):
            ad.ParameterStore.read_checkpoint(path)

    def test_load_shape_mismatch(self, tmp_path):
        store = ad.ParameterStore()
        store.register("w", np.zeros((2, 2)))
        path = tmp_path / "model.ckpt"
        store.save(path)
        other = ad.ParameterStore()
        other.register("w", np.zeros((3, 3)))
        with pytest.raises(ShapeMismatchError):
            other.load(path)
