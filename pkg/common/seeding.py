import hashlib

import numpy as np


def stream_key(name: str) -> int:
    digest = hashlib.sha256(name.encode('utf-8')).digest()
    return int.from_bytes(digest[:4], 'little')


def named_rng(seed: int, stream: str, *index: int) -> np.random.Generator:
    """Independent generator for a named stream (data/init/shuffle/...).

    Extra integer indices derive per-item generators, so work split across
    threads draws the same numbers regardless of scheduling.
    """
    return np.random.default_rng([int(seed), stream_key(stream), *[int(i) for i in index]])
