import math

import numpy as np
import pytest

from common.errors import InvalidArgumentError
from configs.app import NetworkConfig
from geometry.rotations import Rotation, random_rotation, rot_y, rot_z
from network import (
    IBranch,
    VBranch,
    VINet,
    anchor_grid,
    architecture_header,
    i_branch,
    predicted_bins,
    transform_features,
    v_branch,
    vi_net_forward,
)
from network.branches import matrix_rotation, rotation_of_bins
from tensorcore import ops
from tensorcore.gradcheck import check_gradient
from tensorcore.tensor import DiffTensor


def brute_force_interpolation(S, r, k):
    _, H, W = S.shape
    anchors = anchor_grid(H, W).directions
    rotated = np.array([r.m.T @ g for g in anchors])
    flat = S.reshape(S.shape[0], -1)
    out = np.zeros_like(flat)
    for q, g in enumerate(anchors):
        d2 = np.array([np.sum((g - p) ** 2) for p in rotated])
        nearest = np.argsort(d2, kind='stable')[:k]
        w = 1.0 / d2[nearest]
        out[:, q] = flat[:, nearest] @ (w / w.sum())
    return out.reshape(S.shape)


def set_identity_head(branch: IBranch):
    fc2 = branch.mlp.fc2
    fc2.weight.values = np.zeros_like(fc2.weight.values)
    fc2.bias.values = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


@pytest.fixture
def tiny_model(tiny_net_config):
    return VINet(tiny_net_config, np.random.default_rng(11))


class TestSphericalFPN:
    def test_output_at_half_resolution(self, tiny_model, rng):
        S = tiny_model.fpn([DiffTensor(rng.uniform(size=(1, 8, 8)))])
        assert S.shape == (2, 4, 4)

    def test_streams_concatenate_per_stage(self, rng):
        config = NetworkConfig(stage_widths=[2, 4], channels=3, vp_channels=4, input_height=8, input_width=8,
                               streams=['radial', 'rgb'], i_branch_depth=2)
        model = VINet(config, rng)
        assert [lat.kernel.shape[1] for lat in model.fpn.laterals] == [4, 8]
        S = model.fpn([DiffTensor(rng.uniform(size=(1, 8, 8))), DiffTensor(rng.uniform(size=(3, 8, 8)))])
        assert S.shape == (3, 4, 4)

    def test_resolution_mismatch(self, rng):
        config = NetworkConfig(stage_widths=[2, 4], channels=2, vp_channels=4, input_height=8, input_width=8,
                               streams=['radial', 'rgb'], i_branch_depth=2)
        model = VINet(config, rng)
        with pytest.raises(InvalidArgumentError):
            model.fpn([DiffTensor(np.ones((1, 8, 8))), DiffTensor(np.ones((3, 16, 16)))])

    def test_stream_count_mismatch(self, tiny_model):
        with pytest.raises(InvalidArgumentError):
            tiny_model.fpn([DiffTensor(np.ones((1, 8, 8)))] * 2)


class TestVBranch:
    def test_scores_are_probabilities(self, rng):
        branch = VBranch(3, 5, rng)
        dist = v_branch(branch, DiffTensor(rng.normal(size=(3, 6, 8))))
        assert dist.y_phi.shape == (8,) and dist.y_theta.shape == (6,)
        for scores in (dist.y_phi.values, dist.y_theta.values):
            assert np.all((scores >= 0) & (scores <= 1))
        assert dist.w_max == int(np.argmax(dist.y_phi.values))
        assert dist.h_max == int(np.argmax(dist.y_theta.values))

    def test_dominant_column_wins(self, rng):
        branch = VBranch(1, 1, rng)
        for p in branch.parameters():
            p.values = np.ones_like(p.values) if p.values.ndim == 2 else np.zeros_like(p.values)
        S = rng.uniform(size=(1, 4, 8))
        S[0, :, 5] += 10.0
        assert v_branch(branch, DiffTensor(S)).w_max == 5

    def test_first_bins_rotation(self):
        expected = rot_z(math.pi / 32) @ rot_y(math.pi / 64)
        np.testing.assert_allclose(rotation_of_bins(0, 0, 32, 32).m, expected.m, atol=1e-12)

    def test_zenith_is_anchor_of_selected_bin(self, rng):
        branch = VBranch(2, 4, rng)
        dist = v_branch(branch, DiffTensor(rng.normal(size=(2, 8, 16))))
        anchor = anchor_grid(8, 16).directions[dist.h_max * 16 + dist.w_max]
        np.testing.assert_allclose(dist.r_vp.zenith, anchor, atol=1e-12)

    def test_one_branch_mode(self, rng):
        branch = VBranch(2, 4, rng, mode='one_branch')
        dist = v_branch(branch, DiffTensor(rng.normal(size=(2, 4, 8))))
        assert dist.y_joint.shape == (32,)
        assert dist.h_max * 8 + dist.w_max == int(np.argmax(dist.y_joint.values))

    def test_regression_mode(self, rng):
        branch = VBranch(2, 4, rng, mode='regression')
        dist = v_branch(branch, DiffTensor(rng.normal(size=(2, 4, 8))))
        assert dist.r_vp_matrix.shape == (3, 3)
        assert dist.y_phi.values.sum() == 1.0 and dist.y_phi.values[dist.w_max] == 1.0

    def test_unknown_mode(self, rng):
        with pytest.raises(InvalidArgumentError):
            VBranch(2, 4, rng, mode='three_branch')


class TestTransformFeatures:
    def test_identity_rotation_is_exact(self, rng):
        S = DiffTensor(rng.normal(size=(3, 8, 8)))
        np.testing.assert_array_equal(transform_features(S, Rotation.identity()).values, S.values)

    def test_single_neighbour_copies(self, rng):
        S = rng.normal(size=(2, 6, 8))
        r = random_rotation(rng)
        np.testing.assert_array_equal(transform_features(DiffTensor(S), r, k=1).values,
                                      brute_force_interpolation(S, r, 1))

    def test_matches_brute_force_oracle(self, rng):
        S = rng.normal(size=(2, 8, 8))
        for _ in range(3):
            r = random_rotation(rng)
            np.testing.assert_allclose(transform_features(DiffTensor(S), r, k=3).values,
                                       brute_force_interpolation(S, r, 3), atol=1e-12)

    @pytest.mark.parametrize('k', [0, 65])
    def test_neighbour_count_range(self, rng, k):
        with pytest.raises(InvalidArgumentError):
            transform_features(DiffTensor(np.zeros((1, 8, 8))), random_rotation(rng), k=k)


class TestIBranch:
    def test_bias_encodes_identity(self, rng):
        branch = IBranch(2, rng, depth=2)
        set_identity_head(branch)
        out = i_branch(branch, DiffTensor(np.zeros((2, 8, 8))))
        np.testing.assert_allclose(out.values, np.eye(3), atol=1e-15)

    def test_output_is_rotation(self, rng):
        branch = IBranch(2, rng, depth=2)
        m = i_branch(branch, DiffTensor(rng.normal(size=(2, 8, 8)))).values
        np.testing.assert_allclose(m.T @ m, np.eye(3), atol=1e-12)
        assert np.linalg.det(m) == pytest.approx(1.0, abs=1e-12)
        matrix_rotation(DiffTensor(m))

    def test_resolution_divisibility(self, rng):
        with pytest.raises(InvalidArgumentError):
            i_branch(IBranch(2, rng, depth=2), DiffTensor(np.zeros((2, 6, 6))))

    def test_gradients(self, rng):
        branch = IBranch(2, rng, depth=2)
        x = rng.normal(size=(2, 8, 8))
        weights = rng.normal(size=(3, 3))
        result = check_gradient(lambda: ops.sum(ops.mul(i_branch(branch, DiffTensor(x)), weights)),
                                branch.parameters(), max_entries=5, rng=np.random.default_rng(1))
        assert result.passed


class TestVINet:
    def test_forward_gives_rotation(self, tiny_model, small_cloud):
        rotation, dist, r_ip = vi_net_forward(tiny_model, small_cloud)
        np.testing.assert_allclose(rotation.m, dist.r_vp.m @ r_ip.m, atol=1e-12)
        assert dist.y_phi.shape == (4,)

    def test_identity_in_plane_head(self, tiny_model, small_cloud):
        set_identity_head(tiny_model.i_branch)
        out = tiny_model(small_cloud)
        np.testing.assert_allclose(out.rotation.m, out.viewpoint.r_vp.m, atol=1e-15)

    def test_repeat_runs_are_identical(self, tiny_model, small_cloud):
        first, second = tiny_model(small_cloud), tiny_model(small_cloud)
        np.testing.assert_array_equal(first.r_matrix.values, second.r_matrix.values)
        np.testing.assert_array_equal(first.viewpoint.y_phi.values, second.viewpoint.y_phi.values)

    def test_same_seed_same_weights(self, tiny_net_config):
        a = VINet(tiny_net_config, np.random.default_rng(5))
        b = VINet(tiny_net_config, np.random.default_rng(5))
        for (name_a, pa), (name_b, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert name_a == name_b == pa.name
            np.testing.assert_array_equal(pa.values, pb.values)

    def test_map_resolution_checked(self, tiny_model):
        with pytest.raises(InvalidArgumentError):
            tiny_model.forward_maps([np.ones((1, 16, 16))])

    def test_direct_head(self, tiny_net_config, small_cloud):
        config = tiny_net_config.model_copy(update={'rotation_head': 'direct'})
        model = VINet(config, np.random.default_rng(2))
        out = model(small_cloud)
        assert out.viewpoint is None and out.r_ip is None
        h, w = predicted_bins(out, 4, 4)
        assert 0 <= h < 4 and 0 <= w < 4

    def test_float32_model(self, tiny_net_config, small_cloud):
        config = tiny_net_config.model_copy(update={'dtype': 'float32'})
        out = VINet(config, np.random.default_rng(2))(small_cloud)
        assert out.r_matrix.dtype == np.float32
        assert out.rotation.m.dtype == np.float64


class TestArchitectureHeader:
    def test_fields(self, tiny_net_config):
        header = architecture_header(tiny_net_config)
        assert header['format'] == 'vinet'
        assert header['stage_widths'] == '2,4'
        assert header['symmetric'] == 'true'
        assert header['streams'] == 'radial'

    def test_differs_with_architecture(self, tiny_net_config):
        other = tiny_net_config.model_copy(update={'channels': 4})
        assert architecture_header(other) != architecture_header(tiny_net_config)
