"""Seeding helpers.

All randomness in a pipeline flows from one root seed. Each stochastic stage
derives its own named substream so that adding a stage never perturbs the
draws of earlier stages, and identical (seed, stage name) pairs reproduce
byte-identical results on any platform.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_key(label: str) -> int:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def substream(seed: int, label: str) -> np.random.Generator:
    """Generator for the named substream of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), _label_key(label)]))


def as_generator(random_state) -> np.random.Generator:
    """Coerce seed material (int, SeedSequence, Generator, None) to a Generator.

    A Generator instance is returned unchanged, so callers that pass one share
    its stream; anything else seeds a fresh independent stream.
    """
    if isinstance(random_state, np.random.Generator):
        return random_state
    return np.random.default_rng(random_state)
