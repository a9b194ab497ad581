import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rita import numcore as nc


def make_mlp(sizes, seed=0, **kw):
    return nc.init_mlp(sizes, np.random.default_rng(seed), **kw)


class TestForwardMlp:
    def test_zero_weights_annihilate(self):
        p = make_mlp([3, 4, 2])
        p = p.with_arrays([np.zeros_like(a) for a in p.arrays()])
        out = nc.forward_mlp(p, np.array([1.0, -2.0, 0.5]))
        assert np.all(out.data == 0.0)

    def test_identity_single_layer(self):
        p = nc.MlpParams(
            (
                (
                    nc.Tensor(np.eye(2), requires_grad=True),
                    nc.Tensor(np.zeros(2), requires_grad=True),
                ),
            )
        )
        out = nc.forward_mlp(p, np.array([1.0, 2.0]))
        np.testing.assert_array_equal(out.data, [1.0, 2.0])

    def test_two_layer_hand_oracle(self):
        # hand-evaluated: h = tanh(W1 x + b1); y = W2 h + b2
        w1 = np.array([[0.1, -0.2], [0.3, 0.4]])
        b1 = np.array([0.05, -0.05])
        w2 = np.array([[1.0], [-1.0]])
        b2 = np.array([0.5])
        p = nc.MlpParams(
            (
                (nc.Tensor(w1, requires_grad=True), nc.Tensor(b1, requires_grad=True)),
                (nc.Tensor(w2, requires_grad=True), nc.Tensor(b2, requires_grad=True)),
            )
        )
        x = np.array([0.5, -0.5])
        h = np.tanh(x @ w1 + b1)
        expected = h @ w2 + b2
        out = nc.forward_mlp(p, x)
        np.testing.assert_allclose(out.data, expected, rtol=0, atol=1e-15)

    def test_shape_mismatch_raises(self):
        p = make_mlp([3, 2])
        with pytest.raises(ValueError):
            nc.forward_mlp(p, np.zeros(4))

    def test_batched_matches_single(self):
        p = make_mlp([5, 8, 3], seed=3)
        xs = np.random.default_rng(1).normal(size=(4, 5))
        batch = nc.forward_mlp(p, xs).data
        for i in range(4):
            np.testing.assert_allclose(batch[i], nc.forward_mlp(p, xs[i]).data)


class TestGradientOf:
    def test_square_of_scalar_weight(self):
        p = nc.MlpParams(
            (
                (
                    nc.Tensor(np.array([[3.0]]), requires_grad=True),
                    nc.Tensor(np.zeros(1), requires_grad=True),
                ),
            )
        )
        grads = nc.gradient_of(lambda q: q.layers[0][0].square().sum(), p)
        np.testing.assert_allclose(grads[0][0], [[6.0]])

    def test_constant_loss_zero_grads(self):
        p = make_mlp([2, 3, 1])
        grads = nc.gradient_of(lambda q: nc.Tensor(7.0) * nc.Tensor(1.0), p)
        for dw, db in grads:
            assert np.all(dw == 0.0) and np.all(db == 0.0)

    def test_mse_matches_finite_differences(self):
        p = make_mlp([3, 6, 2], seed=5)
        x = np.random.default_rng(9).normal(size=3)
        target = np.array([0.3, -0.7])

        def loss(q):
            diff = nc.forward_mlp(q, x) - nc.Tensor(target)
            return diff.square().mean()

        analytic = nc.gradient_of(loss, p)
        numeric = nc.finite_difference_grads(loss, p, step=1e-5)
        for (dw, db), (fw, fb) in zip(analytic, numeric):
            np.testing.assert_allclose(dw, fw, rtol=1e-4, atol=1e-7)
            np.testing.assert_allclose(db, fb, rtol=1e-4, atol=1e-7)

    def test_unsupported_primitive_raises(self):
        p = make_mlp([2, 1])
        with pytest.raises(nc.UnsupportedPrimitiveError):
            nc.gradient_of(lambda q: np.sin(q.layers[0][0]).sum(), p)

    @pytest.mark.parametrize("prim", ["tanh", "softplus", "log", "sigmoid"])
    def test_each_primitive_gradchecks(self, prim):
        p = make_mlp([2, 2], seed=11)

        def loss(q):
            h = nc.forward_mlp(q, np.array([0.4, -0.3]))
            h = h * h + nc.Tensor(2.0)  # keep log arguments positive
            h = getattr(h, prim)()
            return h.sum()

        analytic = nc.gradient_of(loss, p)
        numeric = nc.finite_difference_grads(loss, p)
        for (dw, db), (fw, fb) in zip(analytic, numeric):
            np.testing.assert_allclose(dw, fw, rtol=1e-4, atol=1e-7)
            np.testing.assert_allclose(db, fb, rtol=1e-4, atol=1e-7)


class TestOptimizerStep:
    def test_zero_grads_fixed_point(self):
        p = make_mlp([2, 2], seed=1)
        state = nc.init_opt_state(p.arrays())
        grads = [(np.zeros((2, 2)), np.zeros(2))]
        p2, s2 = nc.optimizer_step(p, grads, state)
        assert s2.step == 1
        for a, b in zip(p.arrays(), p2.arrays()):
            np.testing.assert_array_equal(a, b)

    def test_first_step_is_lr_times_sign(self):
        # closed form: m-hat = g, v-hat = g^2 -> step = lr * g/(|g| + eps)
        p = nc.MlpParams(
            (
                (
                    nc.Tensor(np.array([[1.0]]), requires_grad=True),
                    nc.Tensor(np.zeros(1), requires_grad=True),
                ),
            )
        )
        state = nc.init_opt_state(p.arrays(), lr=3e-4)
        p2, _ = nc.optimizer_step(p, [(np.array([[2.5]]), np.zeros(1))], state)
        delta = p.arrays()[0] - p2.arrays()[0]
        np.testing.assert_allclose(delta, 3e-4, rtol=1e-6)

    def test_nonfinite_gradient_rejected(self):
        p = make_mlp([2, 2])
        state = nc.init_opt_state(p.arrays())
        bad = [(np.full((2, 2), np.nan), np.zeros(2))]
        with pytest.raises(nc.NonFiniteError):
            nc.optimizer_step(p, bad, state)

    def test_quadratic_bowl_descends(self):
        p = nc.MlpParams(
            (
                (
                    nc.Tensor(np.array([[4.0]]), requires_grad=True),
                    nc.Tensor(np.array([-2.0]), requires_grad=True),
                ),
            )
        )
        state = nc.init_opt_state(p.arrays(), lr=3e-4)

        def loss(q):
            return q.layers[0][0].square().sum() + q.layers[0][1].square().sum()

        losses = []
        for _ in range(500):
            losses.append(float(loss(p).data))
            p, state = nc.optimizer_step(p, nc.gradient_of(loss, p), state)
        # monotone decrease after adaptive-moment warmup
        tail = losses[10:]
        assert all(b <= a for a, b in zip(tail, tail[1:]))
        assert losses[-1] < losses[0]


class TestGraphOps:
    def gradcheck(self, fn, *arrays, step=1e-6, rtol=1e-4, atol=1e-7):
        tensors = [nc.Tensor(a, requires_grad=True) for a in arrays]
        fn(*tensors).sum().backward()
        for t, a in zip(tensors, arrays):
            numeric = np.zeros_like(a)
            flat_a, flat_n = a.ravel(), numeric.ravel()
            for i in range(a.size):
                orig = flat_a[i]
                flat_a[i] = orig + step
                hi = float(fn(*[nc.Tensor(x) for x in arrays]).sum().data)
                flat_a[i] = orig - step
                lo = float(fn(*[nc.Tensor(x) for x in arrays]).sum().data)
                flat_a[i] = orig
                flat_n[i] = (hi - lo) / (2 * step)
            np.testing.assert_allclose(t.grad, numeric, rtol=rtol, atol=atol)

    def test_conv1d_gradcheck(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 3, 10))
        w = rng.normal(size=(4, 3, 4))
        self.gradcheck(lambda a, b: nc.conv1d(a, b, stride=2, pad=1), x, w)

    def test_conv1d_transpose_gradcheck(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 4, 5))
        w = rng.normal(size=(4, 3, 4))
        self.gradcheck(lambda a, b: nc.conv1d_transpose(a, b, stride=2, pad=1), x, w)

    def test_conv_shapes_roundtrip(self):
        x = nc.Tensor(np.zeros((1, 4, 128)))
        w = nc.Tensor(np.zeros((32, 4, 4)))
        y = nc.conv1d(x, w, stride=2, pad=1)
        assert y.shape == (1, 32, 64)
        wt = nc.Tensor(np.zeros((32, 4, 4)))
        z = nc.conv1d_transpose(y, wt, stride=2, pad=1)
        assert z.shape == (1, 4, 128)

    def test_softmax_gradcheck(self):
        x = np.random.default_rng(2).normal(size=(3, 5))
        self.gradcheck(lambda a: nc.softmax(a, axis=-1), x)

    def test_attention_composite_gradcheck(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 4, 6))
        wq = rng.normal(size=(6, 6))

        def attn(a, q):
            scores = nc.batched_matmul(nc.dense(a, q), a.transpose(0, 2, 1))
            return nc.batched_matmul(nc.softmax(scores * (6**-0.5)), a)

        self.gradcheck(attn, x, wq, rtol=2e-4)

    def test_getitem_concat_gradcheck(self):
        x = np.random.default_rng(4).normal(size=(4, 6))
        self.gradcheck(lambda a: nc.concat([a[:2], a[2:] * 2.0], axis=0), x)


class TestProperties:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_random_mlp_gradcheck(self, seed):
        rng = np.random.default_rng(seed)
        sizes = [int(rng.integers(1, 5)) for _ in range(int(rng.integers(2, 4)))]
        p = nc.init_mlp(sizes, rng)
        x = rng.normal(size=sizes[0])
        target = rng.normal(size=sizes[-1])

        def loss(q):
            return (nc.forward_mlp(q, x) - nc.Tensor(target)).square().mean()

        analytic = nc.gradient_of(loss, p)
        numeric = nc.finite_difference_grads(loss, p)
        for (dw, db), (fw, fb) in zip(analytic, numeric):
            np.testing.assert_allclose(dw, fw, rtol=1e-4, atol=1e-6)
            np.testing.assert_allclose(db, fb, rtol=1e-4, atol=1e-6)

    def test_determinism(self):
        p = make_mlp([4, 8, 2], seed=42)
        q = make_mlp([4, 8, 2], seed=42)
        x = np.linspace(-1, 1, 4)
        a = nc.forward_mlp(p, x).data
        b = nc.forward_mlp(q, x).data
        assert a.tobytes() == b.tobytes()


class TestWeightIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        arrays = [rng.normal(size=(3, 4)), rng.normal(size=5), rng.normal(size=(1, 1))]
        path = tmp_path / "model.w"
        nc.save_weights(path, arrays)
        loaded = nc.load_weights(path)
        np.testing.assert_array_equal(loaded[0], arrays[0])
        np.testing.assert_array_equal(loaded[1], np.atleast_2d(arrays[1]))
        np.testing.assert_array_equal(loaded[2], arrays[2])

    def test_magic_and_crc_validation(self, tmp_path):
        path = tmp_path / "model.w"
        nc.save_weights(path, [np.ones((2, 2))])
        raw = bytearray(path.read_bytes())
        raw[10] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(nc.WeightFileError):
            nc.load_weights(path)
        path.write_bytes(b"NOTRITA" + bytes(raw))
        with pytest.raises(nc.WeightFileError):
            nc.load_weights(path)

    def test_truncation_detected(self, tmp_path):
        path = tmp_path / "model.w"
        nc.save_weights(path, [np.ones((4, 4))])
        path.write_bytes(path.read_bytes()[:20])
        with pytest.raises(nc.WeightFileError):
            nc.load_weights(path)
