import struct

import numpy as np
import pytest

from common.errors import InvalidArgumentError, InvalidFormatError, NumericError
from geometry.rotations import sixd_to_rotation
from tensorcore import ops
from tensorcore.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from tensorcore.gradcheck import check_gradient, relative_errors
from tensorcore.module import MLP, Linear, Module
from tensorcore.tensor import DiffTensor, Parameter, backward


def naive_conv(x, k, stride):
    c_out, c_in, K, _ = k.shape
    H = (x.shape[1] - K) // stride + 1
    W = (x.shape[2] - K) // stride + 1
    out = np.zeros((c_out, H, W))
    for o in range(c_out):
        for i in range(H):
            for j in range(W):
                total = 0.0
                for c in range(c_in):
                    for a in range(K):
                        for b in range(K):
                            total += k[o, c, a, b] * x[c, i * stride + a, j * stride + b]
                out[o, i, j] = total
    return out


def weighted_sum_loss(fn, inputs, rng):
    weights = rng.normal(size=fn(*inputs).shape)
    return lambda: ops.sum(ops.mul(fn(*inputs), weights))


class TestBackward:
    def test_sum_gives_ones(self):
        p = Parameter(np.arange(5.0))
        ops.sum(p).backward()
        np.testing.assert_array_equal(p.grad, np.ones(5))

    def test_half_square_gives_identity(self):
        p = Parameter(np.array([1.5, -2.0, 3.0]))
        ops.scale(ops.sum(ops.mul(p, p)), 0.5).backward()
        np.testing.assert_allclose(p.grad, p.values)

    def test_reused_tensor_accumulates(self):
        p = Parameter(np.array([2.0]))
        ops.sum(ops.add(p, p)).backward()
        np.testing.assert_array_equal(p.grad, [2.0])

    def test_detached_factor_is_constant(self):
        p = Parameter(np.array([1.5, -2.0]))
        ops.sum(ops.mul(p.detach(), p)).backward()
        np.testing.assert_array_equal(p.grad, p.values)

    def test_non_scalar_root_rejected(self):
        p = Parameter(np.ones(3))
        with pytest.raises(InvalidArgumentError):
            backward(ops.relu(p))

    def test_non_finite_forward_raises(self):
        with pytest.raises(NumericError) as info:
            ops.scale(Parameter(np.array([1e308])), 1e10)
        assert info.value.op == 'scale'

    def test_rank_limit(self):
        with pytest.raises(InvalidArgumentError):
            DiffTensor(np.zeros((1, 1, 1, 1, 1)))


class TestElementwise:
    def test_relu_and_sigmoid(self):
        x = DiffTensor(np.array([-1.0, 2.0, 0.0]))
        np.testing.assert_array_equal(ops.relu(x).values, [0.0, 2.0, 0.0])
        assert ops.sigmoid(DiffTensor(np.array([0.0]))).values[0] == 0.5

    def test_sigmoid_extremes_finite(self):
        out = ops.sigmoid(DiffTensor(np.array([-800.0, 800.0]))).values
        assert np.all(np.isfinite(out))

    def test_max_tie_routes_to_first(self):
        a, b = Parameter(np.array([1.0, 2.0])), Parameter(np.array([1.0, 3.0]))
        ops.sum(ops.elementwise_max(a, b)).backward()
        np.testing.assert_array_equal(a.grad, [1.0, 0.0])
        np.testing.assert_array_equal(b.grad, [0.0, 1.0])


class TestConv:
    def test_identity_kernel(self, rng):
        x = DiffTensor(rng.normal(size=(1, 4, 4)))
        out = ops.conv2d_valid(x, DiffTensor(np.ones((1, 1, 1, 1))))
        np.testing.assert_array_equal(out.values, x.values)

    def test_constant_input(self, rng):
        k = rng.normal(size=(2, 1, 3, 3))
        out = ops.conv2d_valid(DiffTensor(np.full((1, 5, 5), 2.0)), DiffTensor(k))
        for o in range(2):
            np.testing.assert_allclose(out.values[o], 2.0 * k[o].sum(), rtol=1e-12)

    @pytest.mark.parametrize('stride', [1, 2])
    def test_matches_naive_oracle(self, rng, stride):
        x, k = rng.normal(size=(2, 7, 7)), rng.normal(size=(3, 2, 3, 3))
        out = ops.conv2d_valid(DiffTensor(x), DiffTensor(k), stride)
        np.testing.assert_allclose(out.values, naive_conv(x, k, stride), atol=1e-12)

    @pytest.mark.parametrize('stride', [1, 2])
    def test_linear_in_input(self, rng, stride):
        k = DiffTensor(rng.normal(size=(3, 2, 3, 3)))
        for _ in range(10):
            a, b = rng.normal(size=(2, 2, 7, 7))
            alpha, beta = rng.normal(size=2)
            mixed = ops.conv2d_valid(DiffTensor(alpha * a + beta * b), k, stride).values
            separate = (alpha * ops.conv2d_valid(DiffTensor(a), k, stride).values
                        + beta * ops.conv2d_valid(DiffTensor(b), k, stride).values)
            np.testing.assert_allclose(mixed, separate, rtol=0, atol=1e-10)

    def test_kernel_larger_than_input(self):
        with pytest.raises(InvalidArgumentError):
            ops.conv2d_valid(DiffTensor(np.ones((1, 2, 2))), DiffTensor(np.ones((1, 1, 3, 3))))

    @pytest.mark.parametrize('stride', [1, 2])
    def test_gradients(self, rng, stride):
        x, k = Parameter(rng.normal(size=(2, 6, 6))), Parameter(rng.normal(size=(3, 2, 3, 3)))
        loss = weighted_sum_loss(lambda a, b: ops.conv2d_valid(a, b, stride), [x, k], rng)
        assert check_gradient(loss, [x, k]).passed


class TestLayers:
    def test_linear_identity_and_bias(self):
        x = DiffTensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        out = ops.linear(x, DiffTensor(np.eye(2)), DiffTensor(np.zeros(2)))
        np.testing.assert_array_equal(out.values, x.values)
        zero = ops.linear(DiffTensor(np.zeros((3, 2))), DiffTensor(np.eye(2)), DiffTensor(np.array([5.0, 6.0])))
        np.testing.assert_array_equal(zero.values, [[5.0, 6.0]] * 3)

    def test_linear_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            ops.linear(DiffTensor(np.zeros((2, 3))), DiffTensor(np.eye(2)), DiffTensor(np.zeros(2)))

    def test_linear_gradients(self, rng):
        x, w, b = (Parameter(rng.normal(size=s)) for s in [(4, 5), (3, 5), (3,)])
        assert check_gradient(weighted_sum_loss(ops.linear, [x, w, b], rng), [x, w, b]).passed

    def test_instance_standardize_statistics(self, rng):
        x = DiffTensor(100.0 * rng.normal(size=(3, 6, 6)) + 5.0)
        gain, shift = np.array([1.0, 2.0, -0.5]), np.array([0.0, 1.0, 3.0])
        out = ops.instance_standardize(x, DiffTensor(gain), DiffTensor(shift)).values
        np.testing.assert_allclose(out.mean(axis=(1, 2)), shift, atol=1e-9)
        np.testing.assert_allclose(out.std(axis=(1, 2)), np.abs(gain), rtol=1e-6)

    def test_instance_standardize_constant_channel(self):
        out = ops.instance_standardize(DiffTensor(np.full((1, 3, 3), 4.0)), DiffTensor(np.array([2.0])),
                                       DiffTensor(np.array([0.7])))
        np.testing.assert_allclose(out.values, 0.7)

    def test_instance_standardize_gradients(self, rng):
        x, g, s = (Parameter(rng.normal(size=sh)) for sh in [(2, 4, 4), (2,), (2,)])
        assert check_gradient(weighted_sum_loss(ops.instance_standardize, [x, g, s], rng), [x, g, s]).passed

    def test_pooling(self, rng):
        x = rng.normal(size=(2, 3, 4))
        np.testing.assert_array_equal(ops.axis_max_pool(DiffTensor(x), 1).values, x.max(axis=1))
        np.testing.assert_allclose(ops.global_avg_pool(DiffTensor(x)).values, x.mean(axis=(1, 2)))

    def test_pooling_gradients(self, rng):
        x = Parameter(rng.normal(size=(2, 4, 4)))
        assert check_gradient(weighted_sum_loss(lambda a: ops.axis_max_pool(a, 2), [x], rng), [x]).passed
        assert check_gradient(weighted_sum_loss(ops.global_avg_pool, [x], rng), [x]).passed


class TestResampling:
    def test_gather_zero_index(self):
        x = DiffTensor(np.arange(4.0).reshape(1, 2, 2))
        out = ops.gather(x, np.array([[3, -1], [0, 0]]))
        np.testing.assert_array_equal(out.values, [[[3.0, 0.0], [0.0, 0.0]]])

    def test_gather_backward_scatters(self):
        x = Parameter(np.arange(4.0).reshape(1, 2, 2))
        ops.sum(ops.gather(x, np.array([[0, 0, 3]]))).backward()
        np.testing.assert_array_equal(x.grad, [[[2.0, 0.0], [0.0, 1.0]]])

    def test_upsample_and_flip_gradients(self, rng):
        x = Parameter(rng.normal(size=(2, 3, 4)))
        assert check_gradient(weighted_sum_loss(lambda a: ops.upsample_nearest(a, 2), [x], rng), [x]).passed
        assert check_gradient(weighted_sum_loss(ops.flip_last_axis, [x], rng), [x]).passed

    def test_weighted_gather_gradients(self, rng):
        x = Parameter(rng.normal(size=(2, 3, 4)))
        idx = rng.integers(0, 12, size=(12, 3))
        w = rng.uniform(size=(12, 3))
        loss = weighted_sum_loss(lambda a: ops.weighted_gather(a, idx, w), [x], rng)
        assert check_gradient(loss, [x]).passed


class TestRotationOps:
    def test_sixd_to_matrix_matches_geometry(self, rng):
        d = rng.normal(size=6)
        np.testing.assert_allclose(ops.sixd_to_matrix(DiffTensor(d)).values, sixd_to_rotation(d).m, atol=1e-15)

    def test_sixd_to_matrix_gradients(self, rng):
        d = Parameter(rng.normal(size=6))
        assert check_gradient(weighted_sum_loss(ops.sixd_to_matrix, [d], rng), [d]).passed

    def test_frobenius_distance_zero_gradient_at_target(self):
        x = Parameter(np.eye(3))
        loss = ops.frobenius_distance(x, np.eye(3))
        loss.backward()
        assert loss.item() == 0.0
        np.testing.assert_array_equal(x.grad, np.zeros((3, 3)))

    def test_matmul_left_const_gradients(self, rng):
        c = rng.normal(size=(3, 3))
        x = Parameter(rng.normal(size=(3, 3)))
        assert check_gradient(weighted_sum_loss(lambda a: ops.matmul_left_const(c, a), [x], rng), [x]).passed


class TestGradCheck:
    def test_relative_error_floor(self):
        errors = relative_errors(np.array([1.0, 1e-10]), np.array([1.0 + 1e-7, 0.0]))
        assert errors[0] == pytest.approx(1e-7, rel=1e-3)
        assert errors[1] == pytest.approx(1e-7, rel=1e-6)

    def test_detects_wrong_gradient(self):
        p = Parameter(np.array([1.0, 2.0]))

        def broken():
            # forward squares, backward claims identity
            return ops.sum(DiffTensor.from_op(p.values ** 2, 'broken', (p,), lambda g: (g,)))
        assert not check_gradient(broken, [p]).passed


class Pair(Module):
    def __init__(self, rng):
        self.first = Linear(3, 4, rng)
        self.blocks = [MLP(4, 5, 2, rng)]


class TestModuleAndCheckpoint:
    def test_named_parameters_in_attribute_order(self, rng):
        names = [n for n, _ in Pair(rng).named_parameters()]
        assert names == ['first.weight', 'first.bias', 'blocks.0.fc1.weight', 'blocks.0.fc1.bias',
                         'blocks.0.fc2.weight', 'blocks.0.fc2.bias']

    def test_round_trip(self, tmp_path, rng):
        model = Pair(rng)
        path = tmp_path / 'model.vick'
        save_checkpoint(path, model, {'arch': 'pair', 'width': '4'})
        header, params = read_checkpoint(path)
        assert header == {'arch': 'pair', 'width': '4'}
        assert set(params) == {n for n, _ in model.named_parameters()}

        other = Pair(np.random.default_rng(99))
        load_checkpoint(path, other, {'arch': 'pair'})
        for (_, a), (_, b) in zip(model.named_parameters(), other.named_parameters()):
            np.testing.assert_array_equal(a.values.astype(np.float32), b.values)

    def test_architecture_mismatch(self, tmp_path, rng):
        path = tmp_path / 'model.vick'
        save_checkpoint(path, Pair(rng), {'arch': 'pair'})
        with pytest.raises(InvalidArgumentError):
            load_checkpoint(path, Pair(rng), {'arch': 'other'})

    def test_parameter_set_mismatch(self, tmp_path, rng):
        path = tmp_path / 'model.vick'
        save_checkpoint(path, Pair(rng), {})
        with pytest.raises(InvalidArgumentError):
            load_checkpoint(path, Linear(3, 4, rng), {})

    def test_bad_magic(self, tmp_path):
        path = tmp_path / 'bad.vick'
        path.write_bytes(b'XXXX')
        with pytest.raises(InvalidFormatError):
            read_checkpoint(path)

    def test_header_must_be_utf8(self, tmp_path):
        path = tmp_path / 'bad.vick'
        path.write_bytes(b'VICK' + struct.pack('<II', 1, 2) + b'\xff\xfe' + struct.pack('<I', 0))
        with pytest.raises(InvalidFormatError, match='UTF-8'):
            read_checkpoint(path)

    def test_parameter_name_must_be_utf8(self, tmp_path):
        path = tmp_path / 'bad.vick'
        path.write_bytes(b'VICK' + struct.pack('<III', 1, 0, 1) + struct.pack('<H', 1) + b'\xff'
                         + struct.pack('<BI', 1, 1) + struct.pack('<f', 0.5))
        with pytest.raises(InvalidFormatError, match='UTF-8'):
            read_checkpoint(path)

    def test_parameter_size_beyond_file_size(self, tmp_path):
        path = tmp_path / 'bad.vick'
        path.write_bytes(b'VICK' + struct.pack('<III', 1, 0, 1) + struct.pack('<H', 1) + b'w'
                         + struct.pack('<B2I', 2, 100000, 100000) + bytes(8))
        with pytest.raises(InvalidFormatError, match='Truncated'):
            read_checkpoint(path)
