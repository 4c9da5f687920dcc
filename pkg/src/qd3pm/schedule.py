"""Cosine noise schedule for the depolarizing forward process."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Retention weights of the forward process.

    Attributes:
        T: number of diffusion steps.
        s: offset of the cosine curve.
        alpha_bar: cumulative retention ``alpha_bar[t]`` for ``t = 0..T``.
        alpha: per-step retention, stored so that ``alpha[t]`` is step ``t``;
            ``alpha[0]`` is a placeholder equal to 1.
    """

    T: int
    s: float
    alpha_bar: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)

    def alpha_t(self, t: int) -> float:
        self._check_step(t)
        return float(self.alpha[t])

    def alpha_bar_t(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ValueError(f"timestep {t} outside 0..{self.T}")
        return float(self.alpha_bar[t])

    def _check_step(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside 1..{self.T}")


def cosine_schedule(T: int = 30, s: float = 0.008) -> NoiseSchedule:
    """Build ``alpha_bar_t = g(t) / g(0)`` with ``g(t) = cos^2((t/T + s) / (1 + s) * pi/2)``.

    The last value is pinned to exactly zero, which the floating-point cosine
    misses by about 1e-33.
    """
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if not s > 0:
        raise ValueError(f"offset s must be positive, got {s!r}")
    T = int(T)
    steps = np.arange(T + 1, dtype=float)
    g = np.cos((steps / T + s) / (1 + s) * np.pi / 2) ** 2
    alpha_bar = g / g[0]
    alpha_bar[0] = 1.0
    alpha_bar[T] = 0.0
    alpha = np.ones(T + 1)
    alpha[1:] = alpha_bar[1:] / alpha_bar[:-1]
    alpha_bar.setflags(write=False)
    alpha.setflags(write=False)
    return NoiseSchedule(T=T, s=float(s), alpha_bar=alpha_bar, alpha=alpha)
