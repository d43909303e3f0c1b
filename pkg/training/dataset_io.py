"""
Dataset directory: one VIPC file per sample plus index.txt, whose lines read
"id r00 r01 r02 r10 r11 r12 r20 r21 r22" (ground-truth rotation, float64,
row-major).
"""
import logging
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from common.errors import InvalidArgumentError, InvalidFormatError
from geometry.rotations import Rotation
from sphermap.fileio import read_point_cloud, write_point_cloud
from training.synth import Sample

logger = logging.getLogger(__name__)

INDEX_FILE = 'index.txt'


def sample_path(directory: Path, sample_id: int) -> Path:
    return directory / f"sample_{sample_id:05d}.vipc"


def save_dataset(directory: Union[str, Path], samples: Sequence[Sample]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for sample in samples:
        write_point_cloud(sample_path(directory, sample.id), sample.cloud)
        values = ' '.join(repr(float(v)) for v in sample.gt_rotation.m.reshape(-1))
        lines.append(f"{sample.id} {values}\n")
    (directory / INDEX_FILE).write_text(''.join(lines))
    logger.info(f"Wrote {len(samples)} samples to {directory}")
    return directory


def _parse_index_line(line: str, lineno: int) -> Tuple[int, Rotation]:
    parts = line.split()
    if len(parts) != 10:
        raise InvalidFormatError(f"{INDEX_FILE} line {lineno}: expected id and 9 values, got {len(parts)} fields")
    try:
        sample_id = int(parts[0])
        matrix = np.array([float(p) for p in parts[1:]]).reshape(3, 3)
    except ValueError as e:
        raise InvalidFormatError(f"{INDEX_FILE} line {lineno}: {e}") from e
    try:
        return sample_id, Rotation(matrix)
    except InvalidArgumentError as e:
        raise InvalidFormatError(f"{INDEX_FILE} line {lineno}: {e}") from e


def load_dataset(directory: Union[str, Path]) -> List[Sample]:
    directory = Path(directory)
    index = directory / INDEX_FILE
    if not index.exists():
        raise FileNotFoundError(f"No {INDEX_FILE} in dataset directory {directory}")
    samples = []
    for lineno, line in enumerate(index.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        sample_id, rotation = _parse_index_line(line, lineno)
        path = sample_path(directory, sample_id)
        if not path.exists():
            raise FileNotFoundError(f"Sample file missing: {path}")
        samples.append(Sample(read_point_cloud(path), rotation, sample_id))
    if not samples:
        raise InvalidFormatError(f"Dataset {directory} lists no samples")
    logger.info(f"Loaded {len(samples)} samples from {directory}")
    return samples


def split_held_out(samples: Sequence[Sample], count: int) -> Tuple[List[Sample], List[Sample]]:
    """Deterministic split: the last `count` samples are held out"""
    if count < 0 or count >= len(samples):
        raise InvalidArgumentError(f"Cannot hold out {count} of {len(samples)} samples")
    if count == 0:
        return list(samples), []
    return list(samples[:-count]), list(samples[-count:])
