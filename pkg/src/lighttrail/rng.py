"""Counter-based random streams.

Every draw is a pure function of ``(seed, stream, frame, a, b)`` so that
frames and pixels can be generated in any order, on any number of workers,
and still reproduce bit-identical values. The mixer is the SplitMix64
finalizer applied to a chained combination of the counters.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

STREAM_BITS = 1
STREAM_NOISE = 2

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash64(seed: int, stream: int, frame, a, b) -> np.ndarray:
    parts = np.broadcast_arrays(
        np.asarray(frame, dtype=np.int64),
        np.asarray(a, dtype=np.int64),
        np.asarray(b, dtype=np.int64),
    )
    with np.errstate(over="ignore"):
        h = _mix(np.full(parts[0].shape, np.uint64(seed & 0xFFFFFFFFFFFFFFFF)))
        h = _mix(h ^ np.uint64(stream))
        for p in parts:
            h = _mix(h ^ p.astype(np.uint64))
    return h


def uniform(seed: int, stream: int, frame, a, b) -> np.ndarray:
    """Uniform draws in the open interval (0, 1)."""
    h = hash64(seed, stream, frame, a, b)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normal(seed: int, stream: int, frame, a, b) -> np.ndarray:
    """Standard normal draws by inverse-CDF of :func:`uniform`."""
    return ndtri(uniform(seed, stream, frame, a, b))


def bits(seed: int, frame, J: int, p_one: float = 0.5) -> np.ndarray:
    """Payload bits for ``frame`` (scalar or array), shape ``(..., J)``."""
    f = np.asarray(frame)[..., None]
    j = np.arange(J)
    return (uniform(seed, STREAM_BITS, f, j, 0) < p_one).astype(np.int8)
