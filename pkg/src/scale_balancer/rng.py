"""Seeded random streams.

Every run derives its streams from one integer seed through numpy's
``SeedSequence``: the controller and the loss noise get independent PCG64
children, so replaying a recorded loss log with the same seed reproduces the
controller's draws exactly.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

CONTROLLER_STREAM = 0
NOISE_STREAM = 1
PROBLEM_STREAM = 2


def stream(seed: int, which: int) -> np.random.Generator:
    child = np.random.SeedSequence(seed, spawn_key=(which,))
    return np.random.Generator(np.random.PCG64(child))


def controller_rng(seed: int) -> np.random.Generator:
    return stream(seed, CONTROLLER_STREAM)


def noise_rng(seed: int) -> np.random.Generator:
    return stream(seed, NOISE_STREAM)


def problem_rng(seed: int) -> np.random.Generator:
    return stream(seed, PROBLEM_STREAM)


def state_digest(rng) -> str | None:
    """Short hash of a generator's internal state; ``None`` for non-numpy sources."""
    bitgen = getattr(rng, "bit_generator", None)
    if bitgen is None:
        return None
    blob = json.dumps(bitgen.state, sort_keys=True, default=int).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
