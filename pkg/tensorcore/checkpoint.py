"""
VICK checkpoint codec.

Layout (little-endian): b"VICK", u32 version=1, u32 header_len, header bytes
(UTF-8 key=value lines describing the architecture), u32 param_count, then per
parameter {u16 name_len, name, u8 rank, u32 dims[rank], f32 values row-major}.
"""
import logging
import math
import os
import struct
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from common.errors import InvalidArgumentError, InvalidFormatError
from tensorcore.module import Module

logger = logging.getLogger(__name__)

MAGIC = b'VICK'
VERSION = 1


def encode_header(fields: Dict[str, str]) -> str:
    return ''.join(f"{key}={value}\n" for key, value in fields.items())


def decode_header(text: str) -> Dict[str, str]:
    fields = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        if '=' not in line:
            raise InvalidFormatError(f"Malformed checkpoint header line: {line!r}")
        key, value = line.split('=', 1)
        fields[key.strip()] = value.strip()
    return fields


def save_checkpoint(path: Union[str, Path], model: Module, header: Dict[str, str]) -> None:
    named = model.named_parameters()
    names = [name for name, _ in named]
    if len(set(names)) != len(names):
        raise InvalidArgumentError("Parameter names must be unique within a model")
    header_bytes = encode_header(header).encode('utf-8')
    with open(path, 'wb') as f:
        f.write(MAGIC)
        f.write(struct.pack('<II', VERSION, len(header_bytes)))
        f.write(header_bytes)
        f.write(struct.pack('<I', len(named)))
        for name, param in named:
            encoded = name.encode('utf-8')
            f.write(struct.pack('<H', len(encoded)))
            f.write(encoded)
            f.write(struct.pack('<B', param.values.ndim))
            f.write(struct.pack(f'<{param.values.ndim}I', *param.shape))
            f.write(param.values.astype('<f4').tobytes())
    logger.info(f"Saved checkpoint with {len(named)} parameters to {path}")


def _read(f, n: int) -> bytes:
    if n > os.fstat(f.fileno()).st_size - f.tell():
        raise InvalidFormatError(f"Truncated checkpoint: {n} bytes declared past the end of the file")
    data = f.read(n)
    if len(data) != n:
        raise InvalidFormatError("Truncated checkpoint")
    return data


def _text(raw: bytes, what: str) -> str:
    try:
        return raw.decode('utf-8')
    except UnicodeDecodeError as e:
        raise InvalidFormatError(f"Checkpoint {what} is not valid UTF-8") from e


def read_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, str], Dict[str, np.ndarray]]:
    with open(path, 'rb') as f:
        if f.read(4) != MAGIC:
            raise InvalidFormatError(f"{path} is not a VICK checkpoint")
        version, header_len = struct.unpack('<II', _read(f, 8))
        if version != VERSION:
            raise InvalidFormatError(f"Unsupported checkpoint version {version}")
        header = decode_header(_text(_read(f, header_len), 'header'))
        (count,) = struct.unpack('<I', _read(f, 4))
        params = {}
        for _ in range(count):
            (name_len,) = struct.unpack('<H', _read(f, 2))
            name = _text(_read(f, name_len), 'parameter name')
            (rank,) = struct.unpack('<B', _read(f, 1))
            dims = struct.unpack(f'<{rank}I', _read(f, 4 * rank))
            size = math.prod(dims)
            values = np.frombuffer(_read(f, 4 * size), dtype='<f4').reshape(dims)
            if name in params:
                raise InvalidFormatError(f"Parameter {name} appears twice in {path}")
            params[name] = values
        if f.read(1):
            raise InvalidFormatError(f"Trailing bytes in checkpoint {path}")
    return header, params


def load_checkpoint(path: Union[str, Path], model: Module, expected_header: Dict[str, str]) -> Dict[str, str]:
    """Load parameters into model after checking the architecture matches"""
    header, params = read_checkpoint(path)
    mismatched = {k: (header.get(k), v) for k, v in expected_header.items() if header.get(k) != v}
    if mismatched:
        raise InvalidArgumentError(f"Checkpoint architecture mismatch: {mismatched}")
    named = dict(model.named_parameters())
    if set(named) != set(params):
        missing = sorted(set(named) - set(params))
        extra = sorted(set(params) - set(named))
        raise InvalidArgumentError(f"Checkpoint parameters differ from model (missing={missing}, extra={extra})")
    for name, param in named.items():
        if params[name].shape != param.shape:
            raise InvalidArgumentError(f"Parameter {name}: checkpoint {params[name].shape} vs model {param.shape}")
        param.values = params[name].astype(param.dtype)
    logger.info(f"Loaded {len(named)} parameters from {path}")
    return header
