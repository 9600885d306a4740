import numpy as np
import pytest

from phnet import tensor as T
from phnet.errors import GeometryError, ShapeError, TapeError
from phnet.tensor import Tensor

from oracles import finite_diff_grad, naive_conv2d, rel_err


class TestConv2d:
    def test_all_ones_3x3(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        out = T.conv2d(x, w)
        assert out.shape == (1, 1, 1, 1)
        assert out.item() == 9.0

    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 1, 5, 7))
        out = T.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))))
        np.testing.assert_array_equal(out.data, x)

    def test_matches_naive_oracle_f32(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 3, 8, 8)).astype(np.float32)
        w = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
        out = T.conv2d(Tensor(x), Tensor(w), stride=2, padding=1)
        ref = naive_conv2d(x.astype(np.float64), w.astype(np.float64), 2, 1)
        # error scale: f32 rounding of the sum of absolute contributions
        bound = naive_conv2d(np.abs(x).astype(np.float64), np.abs(w).astype(np.float64), 2, 1)
        assert np.max(np.abs(out.data - ref) / bound) < 1e-6

    @pytest.mark.parametrize("seed", range(12))
    def test_shape_fuzz_against_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n, c, co = rng.integers(1, 4, size=3)
        h, w = rng.integers(3, 9, size=2)
        kh = int(rng.integers(1, min(h, 4) + 1))
        kw = int(rng.integers(1, min(w, 4) + 1))
        stride = int(rng.integers(1, 3))
        padding = int(rng.integers(0, 2))
        x = rng.normal(size=(n, c, h, w))
        weight = rng.normal(size=(co, c, kh, kw))
        out = T.conv2d(Tensor(x), Tensor(weight), stride=stride, padding=padding)
        ref = naive_conv2d(x, weight, stride, padding)
        assert np.abs(out.data - ref).max() < 1e-12

    def test_bias(self):
        x = Tensor(np.zeros((1, 1, 2, 2)))
        w = Tensor(np.zeros((3, 1, 1, 1)))
        b = Tensor(np.array([1.0, 2.0, 3.0]))
        out = T.conv2d(x, w, b)
        np.testing.assert_array_equal(out.data[0, :, 0, 0], [1.0, 2.0, 3.0])

    def test_channel_mismatch_names_shapes(self):
        with pytest.raises(ShapeError, match=r"\(1, 2, 4, 4\).*\(1, 3, 3, 3\)"):
            T.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))

    def test_zero_sized_output_is_geometry_error(self):
        with pytest.raises(GeometryError):
            T.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        x = rng.normal(size=(2, 2, 6, 6))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        xt = Tensor(x.copy(), requires_grad=True)
        wt = Tensor(w.copy(), requires_grad=True)
        bt = Tensor(b.copy(), requires_grad=True)
        out = T.conv2d(xt, wt, bt, stride=2, padding=1)
        (out * out).sum().backward()

        def loss():
            o = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1)
            return float((o.data ** 2).sum())

        for arr, grad in ((x, xt.grad), (w, wt.grad), (b, bt.grad)):
            fd = finite_diff_grad(loss, arr)
            assert rel_err(grad, fd) < 1e-4


class TestBatchNorm:
    def _stats(self, channels=4):
        return np.zeros(channels), np.ones(channels)

    def test_train_mode_normalizes(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=(16, 4, 8, 8)))
        rm, rv = self._stats()
        out = T.batch_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)), rm, rv, True)
        mean = out.data.mean(axis=(0, 2, 3))
        var = out.data.var(axis=(0, 2, 3))
        assert np.abs(mean).max() < 1e-5
        assert np.abs(var - 1).max() < 1e-4

    def test_constant_channel_maps_to_zero(self):
        x = Tensor(np.full((4, 2, 3, 3), 7.0))
        rm, rv = self._stats(2)
        out = T.batch_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, True)
        np.testing.assert_allclose(out.data, 0.0)

    def test_eval_before_train_uses_init_stats(self):
        x = np.array([[[[2.0]]]])
        rm, rv = self._stats(1)
        out = T.batch_norm(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)), rm, rv, False)
        np.testing.assert_allclose(out.data, x / np.sqrt(1 + 1e-5))

    def test_eval_mode_is_bit_deterministic(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(3, 2, 4, 4)).astype(np.float32)
        rm = rng.normal(size=2)
        rv = rng.uniform(0.5, 2.0, size=2)
        gamma, beta = Tensor(rng.normal(size=2)), Tensor(rng.normal(size=2))
        a = T.batch_norm(Tensor(x), gamma, beta, rm.copy(), rv.copy(), False)
        b = T.batch_norm(Tensor(x), gamma, beta, rm.copy(), rv.copy(), False)
        assert a.data.tobytes() == b.data.tobytes()

    def test_running_stats_update(self):
        rng = np.random.default_rng(4)
        x = rng.normal(loc=3.0, size=(8, 1, 4, 4))
        rm, rv = self._stats(1)
        T.batch_norm(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)), rm, rv, True)
        m = 8 * 16
        np.testing.assert_allclose(rm, 0.1 * x.mean())
        np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var() * m / (m - 1))

    def test_affine_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.batch_norm(Tensor(np.zeros((1, 3, 2, 2))), Tensor(np.ones(2)),
                         Tensor(np.zeros(2)), np.zeros(2), np.ones(2), True)

    @pytest.mark.parametrize("seed", range(5))
    def test_full_gradient_vs_finite_differences(self, seed):
        rng = np.random.default_rng(200 + seed)
        x = rng.normal(size=(4, 3, 3, 3))
        gamma = rng.normal(size=3)
        beta = rng.normal(size=3)
        xt = Tensor(x.copy(), requires_grad=True)
        gt = Tensor(gamma.copy(), requires_grad=True)
        bt = Tensor(beta.copy(), requires_grad=True)
        out = T.batch_norm(xt, gt, bt, np.zeros(3), np.ones(3), True)
        ((out * out) * out).sum().backward()

        def loss():
            o = T.batch_norm(Tensor(x), Tensor(gamma), Tensor(beta),
                             np.zeros(3), np.ones(3), True)
            return float((o.data ** 3).sum())

        for arr, grad in ((x, xt.grad), (gamma, gt.grad), (beta, bt.grad)):
            fd = finite_diff_grad(loss, arr)
            assert rel_err(grad, fd) < 1e-4


class TestElementwiseAndPooling:
    def test_relu_values(self):
        out = T.relu(Tensor(np.array([-1.0, 0.0, 2.0])))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_relu_positive_identity(self):
        x = np.array([0.5, 1.0, 3.0])
        np.testing.assert_array_equal(T.relu(Tensor(x)).data, x)

    def test_relu_gradient(self):
        x = np.array([-2.0, -0.5, 0.7, 3.0])
        xt = Tensor(x.copy(), requires_grad=True)
        (T.relu(xt) * T.relu(xt)).sum().backward()

        def loss():
            return float((np.maximum(x, 0) ** 2).sum())

        fd = finite_diff_grad(loss, x, eps=1e-6)
        assert rel_err(xt.grad, fd, floor=1e-10) < 1e-6

    def test_relu_subgradient_zero_at_zero(self):
        xt = Tensor(np.array([0.0]), requires_grad=True)
        T.relu(xt).sum().backward()
        assert xt.grad[0] == 0.0

    def test_global_avg_pool_constant(self):
        x = np.full((2, 3, 4, 4), 0.0)
        x[:, 0], x[:, 1], x[:, 2] = 1.5, -2.0, 0.25
        out = T.global_avg_pool(Tensor(x))
        np.testing.assert_allclose(out.data, [[1.5, -2.0, 0.25]] * 2)

    def test_linear_identity(self):
        x = np.random.default_rng(5).normal(size=(3, 4))
        out = T.linear(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4)))
        np.testing.assert_allclose(out.data, x)

    def test_max_pool_basic(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        out = T.max_pool2d(x, 2, 2)
        assert out.item() == 4.0

    def test_max_pool_gradient_routes_to_max(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        xt = Tensor(x, requires_grad=True)
        T.max_pool2d(xt, 2, 2).sum().backward()
        np.testing.assert_array_equal(xt.grad, [[[[0, 0], [0, 1.0]]]])


class TestBackward:
    def test_sum_grad_is_ones(self):
        xt = Tensor(np.random.default_rng(6).normal(size=(3, 4)), requires_grad=True)
        xt.sum().backward()
        np.testing.assert_array_equal(xt.grad, np.ones((3, 4)))

    def test_square_grad(self):
        x = np.random.default_rng(7).normal(size=5)
        xt = Tensor(x, requires_grad=True)
        (xt * xt).sum().backward()
        np.testing.assert_allclose(xt.grad, 2 * x)

    def test_non_scalar_backward_raises(self):
        with pytest.raises(TapeError):
            Tensor(np.zeros(3), requires_grad=True).backward()

    def test_fanout_accumulation_exact(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=4)
        c = rng.normal(size=4)
        a = Tensor(x, requires_grad=True)
        ((a * 3.0).sum() + (a * Tensor(c)).sum()).backward()
        single1 = Tensor(x, requires_grad=True)
        (single1 * 3.0).sum().backward()
        single2 = Tensor(x, requires_grad=True)
        (single2 * Tensor(c)).sum().backward()
        np.testing.assert_array_equal(a.grad, single1.grad + single2.grad)

    @pytest.mark.parametrize("seed", range(3))
    def test_composite_network_gradients(self, seed):
        rng = np.random.default_rng(300 + seed)
        x = rng.normal(size=(2, 2, 8, 8))
        w = rng.normal(size=(4, 2, 3, 3)) * 0.5
        gamma = rng.uniform(0.5, 1.5, size=4)
        beta = rng.normal(size=4) * 0.1
        lw = rng.normal(size=(2, 4)) * 0.5
        lb = rng.normal(size=2) * 0.1
        labels = rng.integers(0, 2, size=2)

        def forward(wa, ga, ba, la, lba):
            out = T.conv2d(Tensor(x), wa, None, stride=1, padding=1)
            out = T.batch_norm(out, ga, ba, np.zeros(4), np.ones(4), True)
            out = T.relu(out)
            out = T.max_pool2d(out, 2, 2)
            out = T.global_avg_pool(out)
            out = T.linear(out, la, lba)
            return T.cross_entropy(out, labels)

        params = [Tensor(a.copy(), requires_grad=True) for a in (w, gamma, beta, lw, lb)]
        forward(*params).backward()
        for arr, p in zip((w, gamma, beta, lw, lb), params):
            fd = finite_diff_grad(
                lambda: forward(*(Tensor(a) for a in (w, gamma, beta, lw, lb))).item(),
                arr,
            )
            assert rel_err(p.grad, fd) < 1e-4


class TestFiniteChecks:
    def test_debug_flag_catches_nan(self):
        T.set_finite_checks(True)
        try:
            with pytest.raises(FloatingPointError):
                Tensor(np.array([-1.0])).log()
        finally:
            T.set_finite_checks(False)
