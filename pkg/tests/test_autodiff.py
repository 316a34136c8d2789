import math

import numpy as np
import pytest

import fundusnet.autodiff as ad
from fundusnet.autodiff import Tensor
from fundusnet.errors import ContractError, DimensionError

from oracles import conv2d_loops, cross_entropy_highprec, gap_loops


def t64(arr, requires_grad=False):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=requires_grad)


class TestConv2d:
    def test_all_ones_overlap_counts(self):
        x = t64(np.ones((1, 1, 3, 3)))
        w = t64(np.ones((1, 1, 3, 3)))
        out = ad.conv2d(x, w, stride=1, padding=1).data[0, 0]
        expected = np.array([[4, 6, 4], [6, 9, 6], [4, 6, 4]], dtype=np.float64)
        np.testing.assert_array_equal(out, expected)

    def test_zero_kernel_zero_output(self):
        rng = np.random.default_rng(0)
        x = t64(rng.normal(size=(2, 3, 6, 6)))
        w = t64(np.zeros((4, 3, 3, 3)))
        assert np.all(ad.conv2d(x, w, padding=1).data == 0)

    def test_matches_loop_oracle_strided(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 3, 5, 5))
        w = rng.normal(size=(4, 3, 3, 3))
        out = ad.conv2d(t64(x), t64(w), stride=2, padding=1).data
        ref = conv2d_loops(x, w, stride=2, padding=1)
        np.testing.assert_allclose(out, ref, atol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_loop_oracle_random_configs(self, seed):
        rng = np.random.default_rng(100 + seed)
        groups = int(rng.choice([1, 2]))
        cin = int(rng.integers(1, 3)) * groups
        cout = int(rng.integers(1, 3)) * groups
        k = int(rng.choice([1, 3]))
        stride = int(rng.choice([1, 2]))
        padding = int(rng.integers(0, 2))
        h = int(rng.integers(k, k + 5))
        x = rng.normal(size=(int(rng.integers(1, 3)), cin, h, h))
        w = rng.normal(size=(cout, cin // groups, k, k))
        b = rng.normal(size=cout)
        out = ad.conv2d(t64(x), t64(w), t64(b), stride=stride,
                        padding=padding, groups=groups).data
        ref = conv2d_loops(x, w, b, stride=stride, padding=padding, groups=groups)
        np.testing.assert_allclose(out, ref, atol=1e-10)

    def test_depthwise_matches_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 4, 6, 6))
        w = rng.normal(size=(4, 1, 3, 3))
        out = ad.conv2d(t64(x), t64(w), stride=1, padding=1, groups=4).data
        ref = conv2d_loops(x, w, stride=1, padding=1, groups=4)
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_group_decomposition_property(self):
        # full conv == sum over input channels of single-channel convs
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 3, 5, 5))
        w = rng.normal(size=(4, 3, 3, 3))
        full = ad.conv2d(t64(x), t64(w), padding=1).data
        parts = sum(
            ad.conv2d(t64(x[:, c:c + 1]), t64(w[:, c:c + 1]), padding=1).data
            for c in range(3))
        np.testing.assert_allclose(full, parts, atol=1e-12)

    def test_shape_errors(self):
        x = t64(np.zeros((1, 3, 4, 4)))
        with pytest.raises(DimensionError):
            ad.conv2d(x, t64(np.zeros((4, 2, 3, 3))))  # wrong channels/group
        with pytest.raises(DimensionError):
            ad.conv2d(x, t64(np.zeros((4, 3, 3, 3))), groups=2)  # indivisible
        with pytest.raises(DimensionError):
            ad.conv2d(x, t64(np.zeros((4, 3, 7, 7))))  # non-positive output


class TestBatchNorm:
    def test_constant_input_gives_zeros(self):
        c = 3
        x = t64(np.broadcast_to(np.array([1.0, -2.0, 5.0])[None, :, None, None],
                                (4, c, 5, 5)).copy())
        gamma, beta = t64(np.ones(c)), t64(np.zeros(c))
        out = ad.batchnorm2d(x, gamma, beta, ad.RunningStats(c, np.float64), "train")
        np.testing.assert_allclose(out.data, 0.0, atol=1e-9)

    def test_zero_gamma_gives_beta(self):
        rng = np.random.default_rng(4)
        x = t64(rng.normal(size=(2, 3, 4, 4)))
        beta_vals = np.array([0.5, -1.0, 2.0])
        out = ad.batchnorm2d(x, t64(np.zeros(3)), t64(beta_vals),
                             ad.RunningStats(3, np.float64), "train")
        for c in range(3):
            np.testing.assert_allclose(out.data[:, c], beta_vals[c], atol=1e-12)

    def test_train_output_statistics(self):
        rng = np.random.default_rng(5)
        x = t64(rng.normal(2.0, 3.0, size=(8, 3, 6, 6)))
        gamma = t64(np.array([1.0, 2.0, 0.5]))
        beta = t64(np.array([0.0, -1.0, 3.0]))
        out = ad.batchnorm2d(x, gamma, beta, ad.RunningStats(3, np.float64),
                             "train", eps=1e-12).data
        mean = out.mean(axis=(0, 2, 3))
        var = out.var(axis=(0, 2, 3))
        np.testing.assert_allclose(mean, beta.data, atol=1e-5)
        np.testing.assert_allclose(var, gamma.data ** 2, atol=1e-5)

    def test_running_stats_update_rule(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(4, 2, 3, 3))
        state = ad.RunningStats(2, np.float64)
        ad.batchnorm2d(t64(x), t64(np.ones(2)), t64(np.zeros(2)), state,
                       "train", momentum=0.1)
        np.testing.assert_allclose(state.mean, 0.1 * x.mean(axis=(0, 2, 3)), atol=1e-12)
        np.testing.assert_allclose(
            state.var, 0.9 * 1.0 + 0.1 * x.var(axis=(0, 2, 3)), atol=1e-12)

    def test_eval_before_training_uses_unit_stats(self):
        x = t64(np.full((1, 2, 2, 2), 3.0))
        out = ad.batchnorm2d(x, t64(np.ones(2)), t64(np.zeros(2)),
                             ad.RunningStats(2, np.float64), "eval", eps=1e-12)
        np.testing.assert_allclose(out.data, 3.0, atol=1e-5)


class TestActivations:
    def test_relu6_values(self):
        x = t64([-1.0, 3.0, 8.0])
        np.testing.assert_array_equal(ad.relu6(x).data, [0.0, 3.0, 6.0])

    def test_silu_zero(self):
        assert ad.silu(t64([0.0])).data[0] == 0.0

    def test_prelu_negative_slope(self):
        out = ad.prelu(t64([-4.0]), t64([0.25]))
        np.testing.assert_allclose(out.data, [-1.0])

    def test_relu_matches_max(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=50)
        np.testing.assert_array_equal(ad.relu(t64(x)).data, np.maximum(x, 0))

    def test_sigmoid_extremes_stable(self):
        out = ad.sigmoid(t64([-500.0, 0.0, 500.0])).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out[1], 0.5)


class TestPoolLinearElementwise:
    def test_gap_constant(self):
        x = t64(np.full((2, 3, 4, 4), 7.5))
        np.testing.assert_allclose(ad.global_avg_pool(x).data, 7.5)

    def test_gap_small_example(self):
        x = t64(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2))
        assert ad.global_avg_pool(x).data[0, 0, 0, 0] == 2.5

    def test_gap_matches_loop_oracle(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(3, 4, 5, 7))
        np.testing.assert_allclose(ad.global_avg_pool(t64(x)).data,
                                   gap_loops(x), atol=1e-12)

    def test_linear_matches_matmul(self):
        rng = np.random.default_rng(9)
        x, w, b = rng.normal(size=(4, 6)), rng.normal(size=(3, 6)), rng.normal(size=3)
        out = ad.linear(t64(x), t64(w), t64(b)).data
        np.testing.assert_allclose(out, x @ w.T + b, atol=1e-12)

    def test_broadcast_mul_channels(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(2, 3, 4, 4))
        s = rng.normal(size=(2, 3))
        out = ad.broadcast_mul_channels(t64(x), t64(s)).data
        np.testing.assert_allclose(out, x * s[:, :, None, None], atol=1e-12)

    def test_add_mul_shape_guards(self):
        with pytest.raises(DimensionError):
            ad.add(t64(np.zeros(3)), t64(np.zeros(4)))
        with pytest.raises(DimensionError):
            ad.mul(t64(np.zeros((2, 2))), t64(np.zeros(4)))


class TestSoftmaxCrossEntropy:
    def test_uniform_logits_onehot(self):
        logits = t64(np.zeros((2, 4)))
        targets = t64(np.array([[1, 0, 0, 0], [0, 0, 1, 0]], dtype=np.float64))
        loss = ad.softmax_cross_entropy(logits, targets)
        np.testing.assert_allclose(loss.data, math.log(4), atol=1e-12)

    def test_target_equals_softmax_gives_entropy(self):
        rng = np.random.default_rng(11)
        logits = rng.normal(size=(3, 5))
        p = ad.softmax(logits)
        loss = ad.softmax_cross_entropy(t64(logits), t64(p))
        entropy = -(p * np.log(p)).sum(axis=1).mean()
        np.testing.assert_allclose(loss.data, entropy, atol=1e-12)

    def test_matches_high_precision_oracle(self):
        rng = np.random.default_rng(12)
        logits = rng.normal(scale=5.0, size=(6, 4))
        raw = rng.uniform(0.01, 1.0, size=(6, 4))
        targets = raw / raw.sum(axis=1, keepdims=True)
        loss = ad.softmax_cross_entropy(t64(logits), t64(targets)).item()
        ref = cross_entropy_highprec(logits, targets)
        assert abs(loss - ref) < 1e-10

    def test_row_sum_validation(self):
        logits = t64(np.zeros((2, 3)))
        bad = t64(np.array([[0.5, 0.5, 0.5], [1.0, 0.0, 0.0]]))
        with pytest.raises(ContractError):
            ad.softmax_cross_entropy(logits, bad)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(13)
        p = ad.softmax(rng.normal(scale=20, size=(50, 7)))
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)

    def test_nonnegative_for_onehot(self):
        rng = np.random.default_rng(14)
        for _ in range(20):
            logits = rng.normal(size=(4, 5))
            labels = rng.integers(0, 5, size=4)
            onehot = np.eye(5)[labels]
            loss = ad.softmax_cross_entropy(t64(logits), t64(onehot)).item()
            assert loss >= 0.0

    def test_target_gradient_formula(self):
        rng = np.random.default_rng(15)
        logits = rng.normal(size=(3, 4))
        raw = rng.uniform(0.1, 1.0, size=(3, 4))
        targets = raw / raw.sum(axis=1, keepdims=True)
        lt = t64(logits)
        tt = t64(targets, requires_grad=True)
        loss = ad.softmax_cross_entropy(lt, tt)
        ad.backward(loss)
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        np.testing.assert_allclose(tt.grad, -logp / 3, atol=1e-12)


class TestBackward:
    def test_weighted_sum_gradient_is_input(self):
        rng = np.random.default_rng(16)
        x_vals = rng.normal(size=(1, 1, 1, 12))
        w = Tensor(rng.normal(size=(1, 1, 1, 12)), requires_grad=True, dtype=np.float64)
        x = t64(x_vals)
        total = ad.mul_scalar(ad.reshape(ad.global_avg_pool(ad.mul(w, x)), ()), 12.0)
        ad.backward(total)
        np.testing.assert_allclose(w.grad, x_vals, atol=1e-12)

    def test_double_backward_accumulates_exactly_twice(self):
        rng = np.random.default_rng(17)
        x = Tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True, dtype=np.float64)
        w = Tensor(rng.normal(size=(2, 3, 3, 3)), requires_grad=True, dtype=np.float64)
        out = ad.conv2d(x, w, padding=1)
        flat = ad.reshape(out, (1, 1, 1, out.data.size))
        loss = ad.reshape(ad.global_avg_pool(flat), ())
        ad.backward(loss)
        once_x, once_w = x.grad.copy(), w.grad.copy()
        ad.backward(loss)
        np.testing.assert_array_equal(x.grad, 2 * once_x)
        np.testing.assert_array_equal(w.grad, 2 * once_w)

    def test_backward_rejects_non_scalar(self):
        x = Tensor(np.zeros((2, 2)), requires_grad=True)
        y = ad.mul_scalar(x, 2.0)
        with pytest.raises(ContractError):
            ad.backward(y)

    def test_no_grad_disables_recording(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with ad.no_grad():
            y = ad.mul_scalar(x, 3.0)
        assert y._vjp is None and not y.requires_grad

    def test_shared_parent_diamond_graph(self):
        # y = x*x + x*x uses x through two paths; grad = 4x
        x = Tensor(np.array([1.5, -2.0, 3.0]), requires_grad=True, dtype=np.float64)
        a = ad.mul(x, x)
        b = ad.mul(x, x)
        s = ad.add(a, b)
        loss = ad.mul_scalar(ad.reshape(ad.global_avg_pool(
            ad.reshape(s, (1, 1, 1, 3))), ()), 3.0)
        ad.backward(loss)
        np.testing.assert_allclose(x.grad, 4 * x.data, atol=1e-12)


class TestDeterminism:
    def test_bit_identical_forward(self):
        def run():
            rng = np.random.default_rng(42)
            x = Tensor(rng.normal(size=(2, 3, 8, 8)).astype(np.float32))
            w = Tensor(rng.normal(size=(4, 3, 3, 3)).astype(np.float32))
            return ad.conv2d(x, w, stride=2, padding=1).data.tobytes()
        assert run() == run()
