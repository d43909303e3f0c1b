"""
Self-checks exposed on the command line: finite-difference gradient checks
for every differentiable op, the equivariance report and the padding demo.
"""
import logging
import string
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from common.errors import InvalidArgumentError
from common.seeding import named_rng
from configs.app import NetworkConfig
from geometry.rotations import random_rotation
from network.anchors import anchor_grid
from network.branches import transform_features
from network.vinet import VINet
from spa_sconv.layer import SpaConvLayer, spa_sconv
from spa_sconv.padding import pad_index_map
from tensorcore import ops
from tensorcore.gradcheck import GradCheckResult, check_gradient
from tensorcore.tensor import DiffTensor, Parameter
from training.labels import make_gt_labels
from training.losses import FocalParams, focal_loss, rotation_loss, total_loss, viewpoint_loss

logger = logging.getLogger(__name__)

CONVERGENCE_RESOLUTIONS = (16, 32, 64)


def _leaf(rng: np.random.Generator, *shape: int) -> Parameter:
    return Parameter(rng.normal(size=shape))


def _random_projection(out: DiffTensor, rng: np.random.Generator) -> Callable[[DiffTensor], DiffTensor]:
    """Weighted sum with fixed random weights, so every output entry matters"""
    weights = rng.normal(size=out.shape)
    return lambda y: ops.sum(ops.mul(y, weights))


def _op_case(fn: Callable[..., DiffTensor], inputs: Sequence[Parameter], rng: np.random.Generator):
    reduce = _random_projection(fn(*inputs), rng)
    return (lambda: reduce(fn(*inputs))), list(inputs)


def tiny_network_config(**overrides) -> NetworkConfig:
    values = dict(profile='tiny', stage_widths=[2, 4], channels=2, vp_channels=4, input_height=8,
                  input_width=8, streams=['radial'], i_branch_depth=2, k_neighbors=3)
    values.update(overrides)
    return NetworkConfig(**values)


class DiagnosticsRunner:
    def __init__(self, seed: int = 0):
        self.seed = seed

    def _rng(self, name: str) -> np.random.Generator:
        return named_rng(self.seed, f"diagnostics.{name}")

    # -- gradient checks -----------------------------------------------------

    def gradcheck_cases(self) -> Dict[str, Callable[[], Tuple[Callable[[], DiffTensor], List[DiffTensor], int]]]:
        def conv2d_valid():
            rng = self._rng('conv2d_valid')
            x, k = _leaf(rng, 2, 6, 6), _leaf(rng, 3, 2, 3, 3)
            return (*_op_case(lambda a, b: ops.conv2d_valid(a, b, 2), [x, k], rng), None)

        def spa_sconv_case():
            rng = self._rng('spa_sconv')
            layer = SpaConvLayer(2, 3, 3, rng, stride=1)
            x = _leaf(rng, 2, 6, 8)
            fn, tensors = _op_case(lambda a, _k: spa_sconv(layer, a), [x, layer.kernel], rng)
            return fn, tensors, None

        def linear():
            rng = self._rng('linear')
            x, w, b = _leaf(rng, 4, 5), _leaf(rng, 3, 5), _leaf(rng, 3)
            return (*_op_case(ops.linear, [x, w, b], rng), None)

        def axis_max_pool():
            rng = self._rng('axis_max_pool')
            return (*_op_case(lambda a: ops.axis_max_pool(a, 1), [_leaf(rng, 3, 5, 4)], rng), None)

        def global_avg_pool():
            rng = self._rng('global_avg_pool')
            return (*_op_case(ops.global_avg_pool, [_leaf(rng, 3, 4, 4)], rng), None)

        def instance_standardize():
            rng = self._rng('instance_standardize')
            x, g, s = _leaf(rng, 3, 4, 4), _leaf(rng, 3), _leaf(rng, 3)
            return (*_op_case(ops.instance_standardize, [x, g, s], rng), None)

        def interpolation():
            rng = self._rng('interpolation')
            r = random_rotation(rng)
            return (*_op_case(lambda a: transform_features(a, r, 3), [_leaf(rng, 2, 8, 8)], rng), None)

        def sixd_to_matrix():
            rng = self._rng('sixd_to_matrix')
            return (*_op_case(ops.sixd_to_matrix, [_leaf(rng, 6)], rng), None)

        def focal():
            rng = self._rng('focal_loss')
            logits = _leaf(rng, 8)
            y_hat = np.eye(8)[3]
            return (lambda: focal_loss(ops.sigmoid(logits), y_hat, FocalParams())), [logits], None

        def rotation():
            rng = self._rng('rotation_loss')
            d = _leaf(rng, 6)
            target = random_rotation(rng)
            return (lambda: rotation_loss(ops.sixd_to_matrix(d), target)), [d], None

        def network():
            rng = self._rng('network')
            model = VINet(tiny_network_config(), named_rng(self.seed, 'init'))
            maps = [rng.uniform(0.1, 1.0, size=(1, 8, 8))]
            target = random_rotation(rng)
            H, W = model.config.output_resolution
            gt = make_gt_labels(target, H, W)

            def loss():
                out = model.forward_maps(maps)
                l_vp = viewpoint_loss(out.viewpoint, gt, FocalParams())
                return total_loss(rotation_loss(out.r_matrix, target), l_vp, 1.0)
            return loss, model.parameters(), None

        return {
            'conv2d_valid': conv2d_valid,
            'spa_sconv': spa_sconv_case,
            'linear': linear,
            'axis_max_pool': axis_max_pool,
            'global_avg_pool': global_avg_pool,
            'instance_standardize': instance_standardize,
            'interpolation': interpolation,
            'sixd_to_matrix': sixd_to_matrix,
            'focal_loss': focal,
            'rotation_loss': rotation,
            'network': network,
        }

    def run_gradchecks(self, which: str = 'all') -> List[GradCheckResult]:
        cases = self.gradcheck_cases()
        if which != 'all' and which not in cases:
            raise InvalidArgumentError(f"Unknown gradcheck op '{which}'; choose from {sorted(cases)}")
        names = sorted(cases) if which == 'all' else [which]
        results = []
        for name in names:
            loss_fn, tensors, max_entries = cases[name]()
            result = check_gradient(loss_fn, tensors, name=name, max_entries=max_entries, rng=self._rng(name))
            logger.info(f"gradcheck {name}: worst relative error {result.worst_relative_error:.3e}")
            results.append(result)
        return results

    # -- equivariance --------------------------------------------------------

    def shift_equivariance_error(self, trials: int, max_resolution: int) -> float:
        """Max |F(shift(x)) - shift(F(x))| for stride-1 spa_sconv over random pairs"""
        resolutions = [r for r in (8, 16, 32, 64) if r <= max_resolution] or [8]
        rng = self._rng('shift')
        worst = 0.0
        for t in range(trials):
            n = resolutions[t % len(resolutions)]
            layer = SpaConvLayer(2, 3, 3, rng, stride=1)
            x = rng.normal(size=(2, n, n))
            shift = int(rng.integers(1, n))
            direct = spa_sconv(layer, DiffTensor(np.roll(x, shift, axis=2))).values
            shifted = np.roll(spa_sconv(layer, DiffTensor(x)).values, shift, axis=2)
            worst = max(worst, float(np.max(np.abs(direct - shifted))))
        return worst

    def resampling_discrepancy(self, resolution: int, rotations: int = 20) -> float:
        """Mean relative ||T(F(S)) - F(T(S))|| / ||F(T(S))|| over random rotations.

        S is a smooth degree-2 polynomial of the anchor direction; F is one
        fixed stride-1 spa_sconv layer; T is transform_features.
        """
        coeff_rng = self._rng('smooth-maps')
        layer = SpaConvLayer(2, 2, 3, self._rng('fixed-layer'), stride=1)
        rotation_rng = self._rng('rotations')
        anchors = anchor_grid(resolution, resolution).directions
        total = 0.0
        for _ in range(rotations):
            offset = coeff_rng.uniform(0.5, 1.0, size=2)
            linear_terms = coeff_rng.normal(size=(2, 3))
            quadratic = coeff_rng.normal(size=(2, 3, 3))
            values = (offset[:, None] + linear_terms @ anchors.T
                      + np.einsum('qi,cij,qj->cq', anchors, quadratic, anchors))
            S = DiffTensor(values.reshape(2, resolution, resolution))
            r = random_rotation(rotation_rng)
            lhs = transform_features(spa_sconv(layer, S), r).values
            rhs = spa_sconv(layer, transform_features(S, r)).values
            total += float(np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs))
        return total / rotations

    def convergence_table(self, rotations: int = 20) -> List[Tuple[int, float]]:
        return [(n, self.resampling_discrepancy(n, rotations)) for n in CONVERGENCE_RESOLUTIONS]


def cell_labels(H: int, W: int) -> List[List[str]]:
    """a, b, c... row-major; 'h.w' once the grid outgrows the alphabet"""
    if H * W <= len(string.ascii_lowercase):
        letters = iter(string.ascii_lowercase)
        return [[next(letters) for _ in range(W)] for _ in range(H)]
    return [[f"{h}.{w}" for w in range(W)] for h in range(H)]


def pad_demo(H: int, W: int, P: int) -> Tuple[List[List[str]], List[List[str]]]:
    """(source labels, padded labels) for a symbolic H x W map"""
    source = cell_labels(H, W)
    flat = [label for row in source for label in row]
    index = pad_index_map(H, W, P)
    padded = [[flat[i] for i in row] for row in index]
    return source, padded


def format_grid(grid: List[List[str]]) -> str:
    width = max(len(cell) for row in grid for cell in row)
    return '\n'.join(' '.join(cell.rjust(width) for cell in row) for row in grid)
