"""Per-component random streams derived from one root seed.

Each component owns a fixed spawn key, so changing how much randomness one
component draws never shifts another's stream.
"""

from __future__ import annotations

import numpy as np

COMPONENTS = ("init", "data", "svae_init", "sample")


def component_seed(root: int, name: str) -> np.random.SeedSequence:
    if name not in COMPONENTS:
        raise KeyError(f"unknown seed component {name!r}; known: {', '.join(COMPONENTS)}")
    return np.random.SeedSequence(root, spawn_key=(COMPONENTS.index(name),))


def component_rng(root: int, name: str) -> np.random.Generator:
    return np.random.default_rng(component_seed(root, name))


def component_int(root: int, name: str) -> int:
    """A 32-bit integer seed, for APIs that take plain ints."""
    return int(component_seed(root, name).generate_state(1)[0])
