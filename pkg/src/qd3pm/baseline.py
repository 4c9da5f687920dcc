"""Factorized classical diffusion baseline and the product-of-marginals model.

Each bit diffuses on its own with ``Q_t = alpha_t I + (1 - alpha_t)/2 11^T``
and is denoised by its own table ``p_i(x_{t-1} | x_t, t)``. The joint model is
the product over bits, which cannot represent correlations between them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .metrics import kl_divergence, marginals
from .schedule import NoiseSchedule, cosine_schedule
from .sim import BitString, check_probvector, index_bits, width_of
from .streams import stream
from .training import (AdamState, TrainConfig, adam_step, build_kernel, cosine_lr, mmd_rows,
                       training_pool)


def classical_posterior_dim(xt_i: int, x0_i: int, t: int, sched: NoiseSchedule) -> np.ndarray:
    """``q(x_{t-1} | x_t, x_0)`` for one bit under the uniform transition matrix."""
    if xt_i not in (0, 1) or x0_i not in (0, 1):
        raise ValueError("bits must be 0 or 1")
    alpha = sched.alpha_t(t)
    abar = sched.alpha_bar_t(t - 1)
    prior = np.full(2, (1.0 - abar) / 2)
    prior[x0_i] += abar
    like = np.full(2, (1.0 - alpha) / 2)
    like[xt_i] += alpha
    num = like * prior
    z = num.sum()
    if z <= 0:
        raise ZeroDivisionError("degenerate per-dimension posterior")
    return num / z


def _posterior_dims(xt_bits: np.ndarray, x0_bits: np.ndarray, ts: np.ndarray,
                    sched: NoiseSchedule) -> np.ndarray:
    """Vectorized :func:`classical_posterior_dim`, output ``(B, N, 2)``."""
    alpha = sched.alpha[ts][:, None, None]
    abar = sched.alpha_bar[ts - 1][:, None, None]
    vals = np.arange(2)[None, None, :]
    prior = (1.0 - abar) / 2 + abar * (vals == x0_bits[:, :, None])
    like = (1.0 - alpha) / 2 + alpha * (vals == xt_bits[:, :, None])
    num = like * prior
    return num / num.sum(axis=2, keepdims=True)


def product_of_marginals(p: np.ndarray) -> np.ndarray:
    """``prod_i P(x_i)`` as a joint distribution."""
    return _kron_rows(marginals(p)[None])[0]


def kl_factorized_bound(N: int, K: int) -> float:
    """Worst-case ``KL(P || prod_i P_i) = (N - 1) ln K`` on fully correlated data."""
    if N < 1 or K < 2:
        raise ValueError("need N >= 1 and K >= 2")
    return (N - 1) * math.log(K)


def _kron_rows(v: np.ndarray) -> np.ndarray:
    """``(B, N, 2)`` per-bit distributions to ``(B, 2**N)`` joint rows."""
    B, N, _ = v.shape
    out = v[:, 0]
    for i in range(1, N):
        out = (out[:, :, None] * v[:, i][:, None, :]).reshape(B, -1)
    return out


def _kron_vjp(v: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Gradient of ``sum g . kron(v_1..v_N)`` with respect to each ``v_i``."""
    B, N, _ = v.shape
    gt = g.reshape((B,) + (2,) * N)
    out = np.empty_like(v)
    for i in range(N):
        t = gt
        # contract every other bit, highest axis first so indices stay valid
        for j in reversed(range(N)):
            if j != i:
                t = np.einsum("b...k,bk->b...", np.moveaxis(t, j + 1, -1), v[:, j])
        out[:, i] = t
    return out


@dataclass
class FactorizedModel:
    """Logits ``(N, T, 2)``: entry ``[i, t-1, b]`` gives ``p_i(x_{t-1} = 1 | x_t = b)``."""

    logits: np.ndarray

    @property
    def width(self) -> int:
        return self.logits.shape[0]

    @property
    def T(self) -> int:
        return self.logits.shape[1]

    @property
    def tables(self) -> np.ndarray:
        """``(N, T, 2, 2)`` with ``[i, t-1, x_t, x_{t-1}]``; rows sum to one."""
        s = 1.0 / (1.0 + np.exp(-self.logits))
        return np.stack([1.0 - s, s], axis=-1)

    def step_dims(self, ts: np.ndarray, xt_bits: np.ndarray) -> np.ndarray:
        """Per-bit step distributions ``(B, N, 2)``."""
        tab = self.tables
        n = np.arange(self.width)[None, :]
        return tab[n, ts[:, None] - 1, xt_bits]

    def generated_marginals(self) -> np.ndarray:
        """Per-bit distribution of ``x_0`` after ancestral sampling from uniform ``x_T``."""
        tab = self.tables
        m = np.full((self.width, 2), 0.5)
        for t in range(self.T, 0, -1):
            m = np.einsum("nb,nbc->nc", m, tab[:, t - 1])
        return m

    def generated_dist(self) -> np.ndarray:
        return _kron_rows(self.generated_marginals()[None])[0]

    def generate(self, rng: np.random.Generator, count: int) -> list[BitString]:
        """Independent per-bit ancestral sampling."""
        tab = self.tables
        x = rng.integers(2, size=(count, self.width))
        n = np.arange(self.width)[None, :]
        for t in range(self.T, 0, -1):
            p1 = tab[n, t - 1, x, 1]
            x = (rng.random(x.shape) < p1).astype(int)
        return [BitString(tuple(int(b) for b in row)) for row in x]


@dataclass
class FactorizedHistory:
    config: TrainConfig
    losses: np.ndarray
    lrs: np.ndarray
    kl_iters: list
    kl_values: list
    model: FactorizedModel

    @property
    def final_kl(self) -> float:
        return self.kl_values[-1] if self.kl_values else math.nan


def sample_dims_forward(x0_bits: np.ndarray, ts: np.ndarray, sched: NoiseSchedule,
                        rng: np.random.Generator) -> np.ndarray:
    """Per-bit forward sampling: keep each bit with prob ``abar_t``, else a fair coin."""
    abar = sched.alpha_bar[ts][:, None]
    keep = rng.random(x0_bits.shape) < abar
    coin = rng.integers(2, size=x0_bits.shape)
    return np.where(keep, x0_bits, coin)


def factorized_loss_grad(model: FactorizedModel, x0_bits, ts, xt_bits, x1_bits,
                         sched: NoiseSchedule, gram: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch-mean ``L_{t-1} + L_0`` on joint product distributions and its logit gradient."""
    B, N = x0_bits.shape
    ts_all = np.concatenate([ts, np.ones(B, dtype=int)])
    xs_all = np.concatenate([xt_bits, x1_bits])
    v = model.step_dims(ts_all, xs_all)
    tgt = np.empty_like(v)
    tgt[:B] = _posterior_dims(xt_bits, x0_bits, ts, sched)
    tgt[B:] = np.stack([1 - x0_bits, x0_bits], axis=-1)
    vals, g = mmd_rows(_kron_rows(v), _kron_rows(tgt), gram)
    gv = _kron_vjp(v, g / B)
    s = v[..., 1]
    dlogit = (gv[..., 1] - gv[..., 0]) * s * (1 - s)
    grad = np.zeros_like(model.logits)
    n = np.broadcast_to(np.arange(N)[None, :], xs_all.shape)
    np.add.at(grad, (n, np.broadcast_to(ts_all[:, None] - 1, xs_all.shape), xs_all), dlogit)
    return float(vals.sum() / B), grad


def train_factorized(dataset_dist: np.ndarray, config: TrainConfig) -> FactorizedHistory:
    """Train per-bit tables with the same loss, batch sampling and optimizer as the circuit.

    Raises:
        FloatingPointError: the loss became NaN or infinite.
    """
    dist = check_probvector(dataset_dist)
    width = width_of(dist)
    sched = cosine_schedule(config.T, config.s)
    gram = build_kernel(width, config.bandwidths).gram
    bits = index_bits(width)
    data_rng = stream(config.seed, "dataset")
    pool = training_pool(dist, config)
    noise_rng = stream(config.seed, "diffusion")
    logits = stream(config.seed, "init").normal(0.0, config.init_sigma, size=(width, config.T, 2))
    model = FactorizedModel(logits)
    theta = logits.ravel()
    state = AdamState.zeros(theta.size)
    n_it = config.iterations
    losses, lrs = np.zeros(n_it), np.zeros(n_it)
    kl_iters, kl_values = [], []
    for it in range(n_it):
        if pool is None:
            x0 = data_rng.choice(dist.size, size=config.batch_size, p=dist)
        else:
            x0 = pool[data_rng.integers(pool.size, size=config.batch_size)]
        x0_bits = bits[x0]
        ts = noise_rng.integers(2, config.T + 1, size=config.batch_size) if config.T > 1 \
            else np.ones(config.batch_size, dtype=int)
        xt_bits = sample_dims_forward(x0_bits, ts, sched, noise_rng)
        x1_bits = sample_dims_forward(x0_bits, np.ones_like(ts), sched, noise_rng)
        loss, grad = factorized_loss_grad(model, x0_bits, ts, xt_bits, x1_bits, sched, gram)
        if not math.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at iteration {it}")
        lr = cosine_lr(it, config)
        theta, state = adam_step(theta, grad.ravel(), state, lr)
        model = FactorizedModel(theta.reshape(width, config.T, 2))
        losses[it], lrs[it] = loss, lr
        if (it + 1) % config.kl_every == 0 and it + 1 < n_it:
            kl_iters.append(it + 1)
            kl_values.append(kl_divergence(dist, model.generated_dist()))
    kl_iters.append(n_it)
    kl_values.append(kl_divergence(dist, model.generated_dist()))
    return FactorizedHistory(config, losses, lrs, kl_iters, kl_values, model)
