"""
Binary codecs for point clouds (VIPC) and spherical maps (VISM).

Both are little-endian: a 4-byte magic, u32 version, a small header and f32
payloads in row-major order.
"""
import os
import struct
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from common.errors import InvalidFormatError
from sphermap.convert import PointCloud, SphericalMap

PathLike = Union[str, Path]

CLOUD_MAGIC = b'VIPC'
MAP_MAGIC = b'VISM'
FORMAT_VERSION = 1


def _remaining(f: BinaryIO) -> int:
    return os.fstat(f.fileno()).st_size - f.tell()


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    if n > _remaining(f):
        raise InvalidFormatError(f"Truncated file: {what} needs {n} bytes, {_remaining(f)} left")
    data = f.read(n)
    if len(data) != n:
        raise InvalidFormatError(f"Truncated file while reading {what}")
    return data


def _decode_name(raw: bytes, what: str) -> str:
    try:
        return raw.decode('utf-8')
    except UnicodeDecodeError as e:
        raise InvalidFormatError(f"{what} is not valid UTF-8: {raw!r}") from e


def _read_u32(f: BinaryIO, what: str) -> int:
    return struct.unpack('<I', _read_exact(f, 4, what))[0]


def _read_f32(f: BinaryIO, count: int, what: str) -> np.ndarray:
    return np.frombuffer(_read_exact(f, 4 * count, what), dtype='<f4').astype(np.float64)


def _check_header(f: BinaryIO, magic: bytes) -> None:
    found = f.read(4)
    if found != magic:
        raise InvalidFormatError(f"Bad magic {found!r}, expected {magic!r}")
    version = _read_u32(f, 'version')
    if version != FORMAT_VERSION:
        raise InvalidFormatError(f"Unsupported {magic.decode()} version {version}")


def write_point_cloud(path: PathLike, cloud: PointCloud) -> None:
    with open(path, 'wb') as f:
        f.write(CLOUD_MAGIC)
        f.write(struct.pack('<III', FORMAT_VERSION, cloud.n_points, len(cloud.attrs)))
        for name, channels in cloud.catalog:
            encoded = name.encode('utf-8')
            if len(encoded) > 255:
                raise InvalidFormatError(f"Stream name too long: {name}")
            f.write(struct.pack('<B', len(encoded)))
            f.write(encoded)
            f.write(struct.pack('<I', channels))
        f.write(cloud.points.astype('<f4').tobytes())
        for values in cloud.attrs.values():
            f.write(values.astype('<f4').tobytes())


def read_point_cloud(path: PathLike) -> PointCloud:
    with open(path, 'rb') as f:
        _check_header(f, CLOUD_MAGIC)
        n = _read_u32(f, 'point count')
        stream_count = _read_u32(f, 'stream count')
        catalog = []
        for _ in range(stream_count):
            name_len = struct.unpack('<B', _read_exact(f, 1, 'stream name length'))[0]
            name = _decode_name(_read_exact(f, name_len, 'stream name'), 'Stream name')
            if name in [known for known, _ in catalog]:
                raise InvalidFormatError(f"Stream '{name}' declared twice in {path}")
            catalog.append((name, _read_u32(f, 'stream channels')))
        points = _read_f32(f, n * 3, 'coordinates').reshape(n, 3)
        attrs = {name: _read_f32(f, n * c, f"stream '{name}'").reshape(n, c) for name, c in catalog}
        if f.read(1):
            raise InvalidFormatError(f"Trailing bytes after point cloud in {path}")
    return PointCloud(points, attrs)


def write_spherical_map(path: PathLike, smap: SphericalMap) -> None:
    C, H, W = smap.data.shape
    with open(path, 'wb') as f:
        f.write(MAP_MAGIC)
        f.write(struct.pack('<IIII', FORMAT_VERSION, C, H, W))
        f.write(smap.data.astype('<f4').tobytes())


def read_spherical_map(path: PathLike) -> SphericalMap:
    with open(path, 'rb') as f:
        _check_header(f, MAP_MAGIC)
        C = _read_u32(f, 'channels')
        H = _read_u32(f, 'height')
        W = _read_u32(f, 'width')
        data = _read_f32(f, C * H * W, 'map values').reshape(C, H, W)
        if f.read(1):
            raise InvalidFormatError(f"Trailing bytes after spherical map in {path}")
    return SphericalMap(data)
