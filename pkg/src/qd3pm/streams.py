"""Named random sub-streams derived from one integer seed."""

from __future__ import annotations

import numpy as np

STREAMS = ("dataset", "diffusion", "init", "training", "generation")


def stream(seed: int, name: str) -> np.random.Generator:
    """Generator for one named component; independent of every other stream."""
    if name not in STREAMS:
        raise ValueError(f"unknown stream {name!r}; choose from {STREAMS}")
    return np.random.default_rng(np.random.SeedSequence([int(seed), STREAMS.index(name)]))


def run_seed(seed: int, index: int) -> int:
    """Seed of the ``index``-th repeat of an experiment, stable under reordering."""
    return int(np.random.SeedSequence([int(seed), 1000 + int(index)]).generate_state(1)[0])
