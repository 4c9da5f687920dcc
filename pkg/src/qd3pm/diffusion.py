"""Forward diffusion of joint bitstring distributions through the depolarizing channel.

Every forward-process density matrix is diagonal in the computational basis,
so states are carried as probability vectors; the dense form below is only an
oracle.
"""

from __future__ import annotations

import numpy as np

from .schedule import NoiseSchedule
from .sim import BitString, DENSE_QUBIT_LIMIT, check_probvector, n_qubits


def _check_alpha(alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha!r}")
    return float(alpha)


def depolarize_prob(p: np.ndarray, alpha: float) -> np.ndarray:
    """Diagonal of ``(1 - alpha) I/d + alpha * diag(p)``."""
    alpha = _check_alpha(alpha)
    p = check_probvector(p)
    return alpha * p + (1.0 - alpha) / p.size


def dm_depolarize(dm: np.ndarray, alpha: float) -> np.ndarray:
    alpha = _check_alpha(alpha)
    dm = np.asarray(dm, dtype=complex)
    d = dm.shape[0]
    if n_qubits(dm[0]) > DENSE_QUBIT_LIMIT:
        raise MemoryError("dense path limited to 12 qubits")
    return alpha * dm + (1.0 - alpha) * np.trace(dm) * np.eye(d) / d


def forward_dist(x0: BitString, t: int, sched: NoiseSchedule) -> np.ndarray:
    """``q(x_t | x_0)``: mass ``abar + (1 - abar)/d`` on ``x0`` and ``(1 - abar)/d`` elsewhere."""
    abar = sched.alpha_bar_t(t)
    d = 1 << x0.width
    p = np.full(d, (1.0 - abar) / d)
    p[x0.index] += abar
    return p


def sample_xt_index(x0: int, width: int, t: int, sched: NoiseSchedule,
                    rng: np.random.Generator) -> int:
    """Index-level sampler behind :func:`sample_xt`.

    The forward distribution has only two distinct levels, so one uniform draw
    decides between "stay at x0" and a uniform draw over the whole space.
    """
    abar = sched.alpha_bar_t(t)
    d = 1 << width
    u = rng.random()
    if u < abar:
        return x0
    return int(rng.integers(d))


def sample_xt(x0: BitString, t: int, sched: NoiseSchedule,
              rng: np.random.Generator) -> BitString:
    return BitString.from_index(sample_xt_index(x0.index, x0.width, t, sched, rng), x0.width)


def sample_xt_batch(x0s: np.ndarray, width: int, ts: np.ndarray, sched: NoiseSchedule,
                    rng: np.random.Generator) -> np.ndarray:
    """Vectorized :func:`sample_xt_index` over a batch of ``(x0, t)`` pairs."""
    x0s = np.asarray(x0s, dtype=int)
    abar = sched.alpha_bar[np.asarray(ts, dtype=int)]
    keep = rng.random(x0s.shape) < abar
    fresh = rng.integers(1 << width, size=x0s.shape)
    return np.where(keep, x0s, fresh)
