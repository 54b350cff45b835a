"""Deterministic random-stream construction.

Every stochastic stage derives its generator from (seed, stream id) via a
SeedSequence spawn key, so pipeline stages never share a stream and sweep
cells can run in parallel without racing a global generator.
"""

import numpy as np

from .errors import ConfigError

# stream ids, one per pipeline stage
DATA = 1
INIT = 2
TRAIN = 3
PREDICT = 4
SPLIT = 5
METRIC = 6
HOLDOUT = 7


def stream(seed: int, *key: int) -> np.random.Generator:
    """Generator for stage ``key`` of the pipeline rooted at ``seed``."""
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))
