"""Divergences, entropies and the factorization-gap report. Natural logs throughout."""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from .sim import BitString, check_probvector, index_bits, width_of

LN2 = math.log(2.0)


def _pair(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"width mismatch: {p.shape} vs {q.shape}")
    return p, q


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """``sum p log(p / q)``; ``inf`` when ``q`` misses part of the support of ``p``."""
    p, q = _pair(p, q)
    mask = p > 0
    if np.any(q[mask] <= 0):
        return math.inf
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    p, q = _pair(p, q)
    return float(0.5 * np.abs(p - q).sum())


def entropy(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=float)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def marginals(p: np.ndarray) -> np.ndarray:
    """``(N, 2)`` array of single-bit marginals, bit 0 the most significant."""
    p = check_probvector(p)
    bits = index_bits(width_of(p))
    one = p @ bits
    return np.stack([1.0 - one, one], axis=1)


def mutual_information_total(p: np.ndarray) -> float:
    """``sum_i H(P(x_i)) - H(P(x))``."""
    return float(sum(entropy(m) for m in marginals(p)) - entropy(p))


def empirical_distribution(samples: Iterable[BitString], width: int) -> np.ndarray:
    samples = list(samples)
    idx = np.array([s.index for s in samples], dtype=int)
    if idx.size == 0:
        raise ValueError("no samples")
    if any(s.width != width for s in samples):
        raise ValueError("sample width mismatch")
    counts = np.bincount(idx, minlength=1 << width)
    return counts / idx.size


def theorem1_report(widths: Sequence[int]) -> list[dict]:
    """Measured vs predicted ``KL(P || prod_i P_i)`` on the fully correlated dataset.

    Each width gets a row with the all-identity bijections; a final ``joint``
    row records ``KL(P || P)`` for a model of the joint distribution.
    """
    from .baseline import kl_factorized_bound, product_of_marginals
    from .datasets import dfc_distribution

    rows = []
    for n in widths:
        if not 2 <= n <= 10:
            raise ValueError(f"width {n} outside 2..10")
        p = dfc_distribution(n)
        measured = kl_divergence(p, product_of_marginals(p))
        predicted = kl_factorized_bound(n, 2)
        rows.append({"model": "factorized", "n": n, "measured": measured, "predicted": predicted,
                     "diff": abs(measured - predicted), "measured_bits": measured / LN2})
    if widths:
        n = max(widths)
        p = dfc_distribution(n)
        rows.append({"model": "joint", "n": n, "measured": kl_divergence(p, p), "predicted": 0.0,
                     "diff": abs(kl_divergence(p, p)), "measured_bits": 0.0})
    return rows
