"""Step distributions assembled from an x0-predictor, and sample generation.

An x0-predictor circuit outputs ``p_theta(x0 | x_t)``; the denoising step is
the mixture ``sum_k p_theta(k | x_t) q(x_{t-1} | x_t, x0 = k)``. Everything
here works on diagonals. :func:`dense_step_oracle` rebuilds the same quantity
from explicit density matrices for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import DenoiserCircuit, DenoiserParams, Topology, denoise_dist
from .diffusion import dm_depolarize
from .posterior import (DegeneratePosteriorError, PosteriorSpec, identity_weight, posterior_dist)
from .schedule import NoiseSchedule
from .sim import BitString, check_probvector

TARGET_KINDS = ("step-predictor", "x0-predictor")


@dataclass(frozen=True)
class StepMixture:
    x0_dist: np.ndarray
    xt: BitString
    t: int
    posterior_mode: str = "paper-eq17"


def mixture_step_dist(m: StepMixture, sched: NoiseSchedule) -> np.ndarray:
    """Marginalize the ground-truth posterior over the predicted ``x0``."""
    p = check_probvector(m.x0_dist)
    out = np.zeros(p.size)
    for k in np.flatnonzero(p > 0):
        spec = PosteriorSpec(BitString.from_index(int(k), m.xt.width), m.xt, m.t, sched,
                             m.posterior_mode)
        out += p[k] * posterior_dist(spec)
    return out


def _mixture_terms(ts, xts, d, sched, mode):
    ts = np.asarray(ts, dtype=int)
    xts = np.asarray(xts, dtype=int)
    alpha = sched.alpha[ts]
    abar = sched.alpha_bar[ts - 1]
    c = (1.0 - alpha) * identity_weight(mode, d)
    base = (1.0 - abar) / d
    # normalizer of q(. | x_t, x0 = k): one value for k = x_t, one for the rest
    z_other = alpha * base + c
    z_same = alpha * (base + abar) + c
    return alpha, abar, c, base, z_other, z_same, xts


def mixture_step_batch(x0_probs: np.ndarray, ts, xts, sched: NoiseSchedule,
                       mode: str = "paper-eq17") -> np.ndarray:
    """Rows of :func:`mixture_step_dist` for a batch, in ``O(B d)``.

    Args:
        x0_probs: ``(B, d)`` predicted ``p_theta(x0 | x_t)``.
        ts, xts: timestep and ``x_t`` index per row.
    """
    x0_probs = np.asarray(x0_probs, dtype=float)
    B, d = x0_probs.shape
    alpha, abar, c, base, z_other, z_same, xts = _mixture_terms(ts, xts, d, sched, mode)
    rows = np.arange(B)
    p_same = x0_probs[rows, xts]
    if np.any((z_other <= 0) & (x0_probs.sum(axis=1) - p_same > 0)) or np.any((z_same <= 0) & (p_same > 0)):
        raise DegeneratePosteriorError("mixture puts weight on a zero-probability conditioning event")
    with np.errstate(divide="ignore", invalid="ignore"):
        r = x0_probs / z_other[:, None]
        r[rows, xts] = np.where(p_same > 0, p_same / z_same, 0.0)
    r = np.nan_to_num(r, nan=0.0, posinf=0.0)
    total = r.sum(axis=1)
    # sum_k r_k rho_k(x_t)
    overlap = base * total + abar * r[rows, xts]
    out = c[:, None] * (base[:, None] * total[:, None] + abar[:, None] * r)
    out[rows, xts] += alpha * overlap
    return out


def mixture_step_vjp(cot: np.ndarray, ts, xts, sched: NoiseSchedule,
                     mode: str = "paper-eq17") -> np.ndarray:
    """Transpose of the linear map in :func:`mixture_step_batch` applied to ``cot``."""
    cot = np.asarray(cot, dtype=float)
    B, d = cot.shape
    alpha, abar, c, base, z_other, z_same, xts = _mixture_terms(ts, xts, d, sched, mode)
    rows = np.arange(B)
    g_xt = cot[rows, xts]
    # d out / d r_k = c (base * 1 + abar e_k) + alpha rho_k(x_t) e_{x_t}
    dr = c[:, None] * (base[:, None] * cot.sum(axis=1)[:, None] + abar[:, None] * cot)
    dr += (alpha * base * g_xt)[:, None]
    dr[rows, xts] += alpha * abar * g_xt
    z = np.repeat(z_other[:, None], d, axis=1)
    z[rows, xts] = z_same
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(z > 0, dr / z, 0.0)
    return out


def dense_step_oracle(x0_dist: np.ndarray, xt: BitString, t: int, sched: NoiseSchedule,
                      mode: str = "paper-eq17") -> np.ndarray:
    """Measure-then-re-encode path built from explicit density matrices.

    Encodes the predicted distribution as ``rho_enc``, depolarizes each basis
    component with ``alpha_bar_{t-1}``, forms the dense posterior state for
    every component and returns the diagonal of their weighted sum.
    """
    p = check_probvector(x0_dist)
    d = p.size
    alpha = sched.alpha_t(t)
    abar = sched.alpha_bar_t(t - 1)
    c = (1.0 - alpha) * identity_weight(mode, d)
    proj_xt = np.zeros((d, d), dtype=complex)
    proj_xt[xt.index, xt.index] = 1.0
    rho_final = np.zeros((d, d), dtype=complex)
    for k in range(d):
        if p[k] == 0:
            continue
        ket = np.zeros((d, d), dtype=complex)
        ket[k, k] = 1.0
        rho_prev = dm_depolarize(ket, abar)
        overlap = np.real(np.trace(proj_xt @ rho_prev))
        z = alpha * overlap + c
        if z <= 0:
            raise DegeneratePosteriorError("zero normalizer")
        rho_final += p[k] * (alpha * overlap * proj_xt + c * rho_prev) / z
    return np.real(np.diag(rho_final)).copy()


def direct_diagonal_step(t: int, xt: BitString, params: DenoiserParams, topo: Topology,
                         sched: NoiseSchedule, mode: str = "paper-eq17") -> np.ndarray:
    """Feed the circuit's exact output distribution straight into the mixture."""
    p = denoise_dist(t, xt, params, topo, sched.T)
    return mixture_step_batch(p[None, :], [t], [xt.index], sched, mode)[0]


# --------------------------------------------------------------------------
# generation


def transition_table(circ: DenoiserCircuit, theta: np.ndarray, t: int, sched: NoiseSchedule,
                     target_kind: str = "step-predictor", mode: str = "paper-eq17") -> np.ndarray:
    """``table[x, y] = p(x_{t-1} = y | x_t = x)`` for every ``x``."""
    d = circ.d
    xs = np.arange(d)
    ts = np.full(d, t)
    probs = circ.probs(theta, ts, xs)
    if target_kind == "step-predictor":
        return probs
    if target_kind == "x0-predictor":
        return mixture_step_batch(probs, ts, xs, sched, mode)
    raise ValueError(f"unknown target kind {target_kind!r}")


def exact_iterative_dist(circ: DenoiserCircuit, theta: np.ndarray, sched: NoiseSchedule,
                         target_kind: str = "step-predictor", mode: str = "paper-eq17") -> np.ndarray:
    """Exact distribution of ancestral generation from a uniform ``x_T``."""
    p = np.full(circ.d, 1.0 / circ.d)
    for t in range(sched.T, 0, -1):
        p = p @ transition_table(circ, theta, t, sched, target_kind, mode)
    return p


def exact_one_step_dist(circ: DenoiserCircuit, theta: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """``sum_{x_T} p_theta(. | x_T) / d`` at ``t = T``."""
    probs = circ.probs(theta, np.full(circ.d, sched.T), np.arange(circ.d))
    return probs.mean(axis=0)


def _draw_rows(table: np.ndarray, rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(table[rows], axis=1)
    u = rng.random(len(rows)) * cdf[:, -1]
    return np.minimum((u[:, None] >= cdf).sum(axis=1), table.shape[1] - 1)


def one_step_generate(params: DenoiserParams, topo: Topology, sched: NoiseSchedule,
                      rng: np.random.Generator, count: int) -> list[BitString]:
    """Draw ``x_T`` uniformly, then ``x0 ~ p_theta(. | x_T)`` in a single circuit call."""
    if count <= 0:
        return []
    circ = DenoiserCircuit(params.width, params.layers, topo, sched.T)
    x_T = rng.integers(circ.d, size=count)
    table = circ.probs(params.flat(), np.full(circ.d, sched.T), np.arange(circ.d))
    out = _draw_rows(table, x_T, rng)
    return [BitString.from_index(int(i), params.width) for i in out]


def iterative_generate(params: DenoiserParams, topo: Topology, sched: NoiseSchedule,
                       rng: np.random.Generator, count: int,
                       target_kind: str = "step-predictor", mode: str = "paper-eq17") -> list[BitString]:
    """Ancestral sampling from a uniform ``x_T`` down to ``x_0``."""
    if count <= 0:
        return []
    circ = DenoiserCircuit(params.width, params.layers, topo, sched.T)
    theta = params.flat()
    x = rng.integers(circ.d, size=count)
    for t in range(sched.T, 0, -1):
        table = transition_table(circ, theta, t, sched, target_kind, mode)
        x = _draw_rows(table, x, rng)
    return [BitString.from_index(int(i), params.width) for i in x]
