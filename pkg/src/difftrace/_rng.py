"""Deterministic random streams.

Every stochastic routine in this package draws from a counter-based Philox
generator keyed by an explicit (seed, stream ids...) tuple, so results are
reproducible bit-for-bit across runs and platforms.  Normal variates are
produced by inverse-CDF transform of fixed-grid uniforms rather than the
generator's native (rejection-based) method, which keeps synthetic fixtures
byte-identical regardless of numpy internals.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr, ndtri

# Stage identifiers used when deriving per-stage streams from one top seed.
STREAM_SYNTH = 1
STREAM_LOCAL = 2
STREAM_HIER = 3


def stream(seed: int, *ids: int) -> np.random.Generator:
    """Return a Philox generator for the stream (seed, *ids).

    Distinct id tuples yield statistically independent streams; the same
    tuple always yields the same stream.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(i) for i in ids))
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))


def uniform_open(rng: np.random.Generator, size=None) -> np.ndarray | float:
    """Uniform variates on the open interval (0, 1).

    Uses a 2^53-point grid offset by half a cell so 0 and 1 are unreachable
    (ndtri of the endpoints would be infinite).
    """
    return (rng.integers(0, 1 << 53, size=size).astype(np.float64) + 0.5) / float(1 << 53)


def normal(rng: np.random.Generator, size=None) -> np.ndarray | float:
    """Standard normal variates via the inverse-CDF transform."""
    return ndtri(uniform_open(rng, size=size))


def truncated_normal(
    rng: np.random.Generator, mu: float, sigma: float, size=None
) -> np.ndarray | float:
    """Draws from a normal(mu, sigma^2) truncated to [0, inf), by inverse CDF."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    lo = ndtr(-mu / sigma)  # CDF mass below zero
    u = uniform_open(rng, size=size)
    return mu + sigma * ndtri(lo + u * (1.0 - lo))
