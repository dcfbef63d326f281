"""Named random streams derived from a single root seed.

Every consumer of randomness asks for a stream by name, so adding draws to
one stream never perturbs another (reproducible sweeps and reruns).
"""

import hashlib

import numpy as np


def stream_seed(root_seed: int, name: str) -> int:
    """Stable 63-bit seed for the stream `name` under `root_seed`."""
    digest = hashlib.sha256(f"{root_seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def stream_rng(root_seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(stream_seed(root_seed, name))
