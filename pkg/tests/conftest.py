import numpy as np
import pytest
import yaml

from configs.app import Config, NetworkConfig
from geometry.rotations import random_rotation
from sphermap.convert import PointCloud

TINY_SECTIONS = {
    'network': {'stage_widths': [2, 4], 'channels': 2, 'vp_channels': 4, 'input_height': 8, 'input_width': 8,
                'streams': ['radial'], 'i_branch_depth': 2, 'k_neighbors': 3},
    'train': {'iterations': 2, 'batch_size': 2, 'learning_rate': 0.01, 'lambda_vp': 1.0, 'train_count': 6,
              'held_out_count': 2, 'eval_interval': 1, 'log_interval': 1},
    'logging': {'level': 'WARNING', 'jsonl': False},
}


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def random_rotations():
    gen = np.random.default_rng(7)
    return [random_rotation(gen) for _ in range(200)]


@pytest.fixture
def small_cloud():
    gen = np.random.default_rng(3)
    points = gen.normal(size=(300, 3))
    points -= points.mean(axis=0)
    rgb = gen.uniform(size=(300, 3))
    return PointCloud(points, {'rgb': rgb})


@pytest.fixture
def tiny_net_config():
    return NetworkConfig(stage_widths=[2, 4], channels=2, vp_channels=4, input_height=8, input_width=8,
                         streams=['radial'], i_branch_depth=2, k_neighbors=3)


@pytest.fixture
def isolated_logs(tmp_path, monkeypatch):
    monkeypatch.setenv('VINET_LOG_DIR', str(tmp_path / 'logs'))
    monkeypatch.chdir(tmp_path)
    return tmp_path


@pytest.fixture
def tiny_config():
    return Config(overrides=TINY_SECTIONS)


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / 'tiny.yaml'
    path.write_text(yaml.safe_dump(TINY_SECTIONS))
    return path
