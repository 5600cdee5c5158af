"""Counter-based uniform streams.

Draw ``j`` of a batch always reads the same Philox counter block, so a batch
can be generated in any number of pieces, by any number of workers, and the
concatenation is bitwise identical to a single-shot call.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numpy.typing import NDArray

__all__ = ["draw_uniforms", "philox_key"]

# Philox emits four 64-bit words per counter increment.
_WORDS = 4
_HALF_ULP = 2.0**-54
_BLOCK = 1 << 14


def philox_key(seed: int, stream: int = 0) -> int:
    """128-bit Philox key from a 64-bit seed and a stream tag."""
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    if not 0 <= stream < 2**64:
        raise ValueError(f"stream must be an unsigned 64-bit integer, got {stream}")
    return seed | (stream << 64)


def _padded_width(width: int) -> int:
    return _WORDS * math.ceil(width / _WORDS)


def _chunk(key: int, start: int, count: int, width: int) -> NDArray[np.float64]:
    padded = _padded_width(width)
    bitgen = np.random.Philox(key=key, counter=[start * padded // _WORDS, 0, 0, 0])
    u = np.random.Generator(bitgen).random(count * padded).reshape(count, padded)
    # open interval (0, 1): inverse CDFs stay finite
    return u[:, :width] + _HALF_ULP


def draw_uniforms(
    seed: int,
    start: int,
    count: int,
    width: int,
    *,
    stream: int = 0,
    jobs: int = 1,
) -> NDArray[np.float64]:
    """Uniforms in (0, 1) for draws ``start .. start+count-1``.

    Returns an array of shape ``(count, width)``. Row ``i`` depends only on
    ``(seed, stream, start + i, width)``.
    """
    if count < 0 or width < 1 or start < 0:
        raise ValueError("count and start must be >= 0 and width >= 1")
    key = philox_key(seed, stream)
    if jobs <= 1 or count <= _BLOCK:
        return _chunk(key, start, count, width)
    bounds = list(range(start, start + count, _BLOCK)) + [start + count]
    pieces = list(zip(bounds[:-1], bounds[1:]))
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(lambda p: _chunk(key, p[0], p[1] - p[0], width), pieces))
    return np.concatenate(parts, axis=0)
