"""MMD objective, gradients, Adam with cosine decay, and the training loop.

The loss for one data point ``x0`` is

    MMD(p_theta(. | t, x_t), q(. | x_t, x0)) + MMD(p_theta(. | 1, x_1), delta_x0)

with ``t ~ U{2..T}``, ``x_t ~ q(x_t | x0)`` and ``x_1 ~ q(x_1 | x0)``, averaged
over the batch. MMD is evaluated exactly as ``(p - q)^T K (p - q)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .denoiser import TOPOLOGIES, DenoiserCircuit, DenoiserParams, make_topology
from .diffusion import sample_xt_batch
from .metrics import kl_divergence
from .onestep import (TARGET_KINDS, exact_iterative_dist, exact_one_step_dist,
                      mixture_step_batch, mixture_step_vjp)
from .posterior import MODES, posterior_batch
from .schedule import cosine_schedule
from .sim import BitString, check_probvector, index_bits, width_of
from .streams import stream

BANDWIDTH_FACTORS = (0.01, 0.1, 0.25, 0.5, 1.0, 10.0)
GRAD_METHODS = ("adjoint", "parameter-shift", "finite-difference")

# --------------------------------------------------------------------------
# kernel and MMD


@dataclass(frozen=True)
class KernelSpec:
    bandwidths: tuple
    combine: str
    gram: np.ndarray


def mean_bandwidths(width: int) -> tuple:
    return tuple(f * width for f in BANDWIDTH_FACTORS)


def build_kernel(width: int, bandwidths: Optional[Sequence[float]] = None) -> KernelSpec:
    """Gaussian kernel on bit vectors, averaged over ``bandwidths``.

    ``gram[x, y] = mean_sigma exp(-H(x, y) / (2 sigma^2))`` with ``H`` the
    Hamming distance. ``None`` selects the multi-bandwidth default
    ``[0.01, 0.1, 0.25, 0.5, 1, 10] * width``.
    """
    if bandwidths is None:
        bandwidths = mean_bandwidths(width)
    bandwidths = tuple(float(s) for s in np.atleast_1d(bandwidths))
    if not bandwidths or any(s <= 0 or not math.isfinite(s) for s in bandwidths):
        raise ValueError(f"bandwidths must be positive, got {bandwidths}")
    bits = index_bits(width)
    ham = (bits[:, None, :] != bits[None, :, :]).sum(axis=2).astype(float)
    gram = np.mean([np.exp(-ham / (2 * s * s)) for s in bandwidths], axis=0)
    gram.setflags(write=False)
    return KernelSpec(bandwidths, "single" if len(bandwidths) == 1 else "mean", gram)


def mmd_loss(p: np.ndarray, q: np.ndarray, k: KernelSpec) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.shape != k.gram.shape[:1]:
        raise ValueError(f"shape mismatch: {p.shape}, {q.shape}, kernel {k.gram.shape}")
    diff = p - q
    return float(diff @ k.gram @ diff)


def mmd_rows(p: np.ndarray, q: np.ndarray, gram: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row MMD and its gradient with respect to ``p``."""
    diff = p - q
    kd = diff @ gram
    return np.einsum("bi,bi->b", kd, diff), 2.0 * kd


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters. Defaults are the 4-bit BAS step-predictor row."""

    batch_size: int = 16
    iterations: int = 6000
    lr_initial: float = 1e-3
    lr_final: float = 1e-4
    lr_decay_steps: int = 3000
    seed: int = 0
    T: int = 30
    s: float = 0.008
    L: int = 12
    topology: str = "all-to-all"
    posterior_mode: str = "paper-eq17"
    target_kind: str = "step-predictor"
    init_sigma: float = 0.01
    bandwidths: Optional[tuple] = None
    grad_method: str = "adjoint"
    train_size: Optional[int] = None
    kl_every: int = 100

    def __post_init__(self):
        for name in ("batch_size", "T", "L", "kl_every"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        for name in ("iterations", "lr_decay_steps"):
            if int(getattr(self, name)) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("lr_initial", "lr_final", "s", "init_sigma"):
            if not float(getattr(self, name)) > 0:
                raise ValueError(f"{name} must be positive")
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.posterior_mode not in MODES:
            raise ValueError(f"unknown posterior mode {self.posterior_mode!r}")
        if self.target_kind not in TARGET_KINDS:
            raise ValueError(f"unknown target kind {self.target_kind!r}")
        if self.grad_method not in GRAD_METHODS:
            raise ValueError(f"unknown gradient method {self.grad_method!r}")
        if self.train_size is not None and self.train_size < 1:
            raise ValueError("train_size must be positive")
        if self.bandwidths is not None:
            object.__setattr__(self, "bandwidths", tuple(float(b) for b in np.atleast_1d(self.bandwidths)))

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# rows keyed by N; values (L, batch_size)
_STEP_BAS = {4: (12, 16), 6: (14, 32), 8: (15, 128), 9: (16, 256), 10: (20, 256)}
_STEP_MG = {4: (12, 32), 6: (12, 64), 8: (8, 128), 9: (10, 128), 10: (12, 256)}
_X0 = {4: (14, 16), 6: (20, 32), 8: (22, 128), 9: (25, 256), 10: (30, 256)}
PRESET_WIDTHS = (4, 6, 8, 9, 10)


def preset_config(dataset: str, width: int, target_kind: str = "step-predictor",
                  **overrides) -> TrainConfig:
    """Published hyperparameters for a dataset/width pair."""
    if width not in PRESET_WIDTHS:
        raise ValueError(f"no preset for width {width}; presets exist for {PRESET_WIDTHS}")
    if target_kind == "x0-predictor":
        L, bs = _X0[width]
        cfg = TrainConfig(batch_size=bs, L=L, lr_final=1e-5, lr_decay_steps=1000,
                          target_kind=target_kind)
    elif dataset == "bas":
        L, bs = _STEP_BAS[width]
        cfg = TrainConfig(batch_size=bs, L=L, lr_final=1e-4 if width == 4 else 1e-5)
    elif dataset == "mixed-gaussian":
        L, bs = _STEP_MG[width]
        cfg = TrainConfig(batch_size=bs, L=L, lr_final=1e-5, lr_decay_steps=5000,
                          train_size=5000 if width <= 6 else 50000)
    else:
        raise ValueError(f"no step-predictor preset for dataset {dataset!r}")
    return cfg.with_(**overrides)


def estimate_samples(width: int) -> int:
    """Sample count used to estimate the generated distribution."""
    return 10000 if width <= 6 else 100000


# --------------------------------------------------------------------------
# one training batch


@dataclass(frozen=True)
class Batch:
    x0s: np.ndarray
    ts: np.ndarray
    xts: np.ndarray
    x1s: np.ndarray


def draw_batch(x0s: np.ndarray, width: int, sched, rng: np.random.Generator) -> Batch:
    """Sample ``t ~ U{2..T}``, ``x_t`` and ``x_1`` for each data point."""
    x0s = np.asarray(x0s, dtype=int)
    if sched.T < 2:
        ts = np.ones(len(x0s), dtype=int)
    else:
        ts = rng.integers(2, sched.T + 1, size=len(x0s))
    xts = sample_xt_batch(x0s, width, ts, sched, rng)
    x1s = sample_xt_batch(x0s, width, np.ones(len(x0s), dtype=int), sched, rng)
    return Batch(x0s, ts, xts, x1s)


class Objective:
    """Batched loss and gradient for one model/kernel/schedule combination."""

    def __init__(self, width: int, config: TrainConfig, kernel: Optional[KernelSpec] = None):
        self.width = width
        self.d = 1 << width
        self.config = config
        self.sched = cosine_schedule(config.T, config.s)
        self.topo = make_topology(config.topology, width)
        self.circ = DenoiserCircuit(width, config.L, self.topo, config.T)
        self.kernel = kernel if kernel is not None else build_kernel(width, config.bandwidths)

    def _inputs(self, batch: Batch):
        B = len(batch.x0s)
        ts = np.concatenate([batch.ts, np.ones(B, dtype=int)])
        xs = np.concatenate([batch.xts, batch.x1s])
        targets = np.zeros((2 * B, self.d))
        targets[:B] = posterior_batch(batch.x0s, batch.xts, batch.ts, self.width, self.sched,
                                      self.config.posterior_mode)
        targets[B + np.arange(B), batch.x0s] = 1.0
        return ts, xs, targets

    def _model(self, probs, ts, xs):
        if self.config.target_kind == "x0-predictor":
            return mixture_step_batch(probs, ts, xs, self.sched, self.config.posterior_mode)
        return probs

    def loss(self, theta: np.ndarray, batch: Batch) -> float:
        ts, xs, targets = self._inputs(batch)
        model = self._model(self.circ.probs(theta, ts, xs), ts, xs)
        vals, _ = mmd_rows(model, targets, self.kernel.gram)
        return float(vals.sum() / len(batch.x0s))

    def loss_and_grad(self, theta: np.ndarray, batch: Batch,
                      method: Optional[str] = None) -> tuple[float, np.ndarray]:
        method = method or self.config.grad_method
        ts, xs, targets = self._inputs(batch)
        B = len(batch.x0s)
        out = {}

        def cot(probs):
            model = self._model(probs, ts, xs)
            vals, g = mmd_rows(model, targets, self.kernel.gram)
            out["loss"] = float(vals.sum() / B)
            g /= B
            if self.config.target_kind == "x0-predictor":
                g = mixture_step_vjp(g, ts, xs, self.sched, self.config.posterior_mode)
            return g

        if method == "adjoint":
            _, grad = self.circ.vjp(theta, ts, xs, cot)
        elif method == "parameter-shift":
            _, grad = self.circ.vjp_parameter_shift(theta, ts, xs, cot)
        elif method == "finite-difference":
            _, grad = self.circ.vjp_finite_difference(theta, ts, xs, cot)
        else:
            raise ValueError(f"unknown gradient method {method!r}")
        return out["loss"], grad

    def generated_dist(self, theta: np.ndarray) -> np.ndarray:
        """Exact distribution the trained model generates.

        Step-predictors use ancestral sampling over all ``T`` steps; x0-predictors
        use the one-step mixture ``sum_{x_T} p_theta(. | T, x_T) / d``.
        """
        if self.config.target_kind == "x0-predictor":
            return exact_one_step_dist(self.circ, theta, self.sched)
        return exact_iterative_dist(self.circ, theta, self.sched)


def total_loss(x0: BitString, t: int, params: DenoiserParams, config: TrainConfig,
               rng: Optional[np.random.Generator] = None, xt: Optional[BitString] = None,
               x1: Optional[BitString] = None) -> float:
    """Single-sample ``L_{t-1} + L_0``.

    ``xt`` and ``x1`` are drawn from the forward process with ``rng`` unless
    given explicitly.
    """
    if not 2 <= t <= config.T:
        raise ValueError(f"loss timestep {t} outside 2..{config.T}")
    obj = Objective(x0.width, config)
    if xt is None or x1 is None:
        if rng is None:
            raise ValueError("rng required when xt or x1 are not given")
        draw = sample_xt_batch(np.array([x0.index, x0.index]), x0.width, np.array([t, 1]),
                               obj.sched, rng)
        xt = xt or BitString.from_index(int(draw[0]), x0.width)
        x1 = x1 or BitString.from_index(int(draw[1]), x0.width)
    batch = Batch(np.array([x0.index]), np.array([t]), np.array([xt.index]), np.array([x1.index]))
    return obj.loss(params.flat(), batch)


def grad_params(batch: Batch, params: DenoiserParams, config: TrainConfig,
                method: Optional[str] = None) -> np.ndarray:
    """Gradient of the batch-mean loss, shaped like ``params.flat()``."""
    obj = Objective(params.width, config)
    return obj.loss_and_grad(params.flat(), batch, method)[1]


# --------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState,
              lr: float) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns new arrays, leaves inputs untouched."""
    grad = np.asarray(grad, dtype=float)
    step = state.step + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = m / (1 - state.beta1**step)
    v_hat = v / (1 - state.beta2**step)
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, step, state.beta1, state.beta2, state.eps)


def cosine_lr(iteration: int, config: TrainConfig) -> float:
    """Half-cosine from ``lr_initial`` to ``lr_final`` over ``lr_decay_steps``, then flat."""
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    if config.lr_decay_steps == 0 or iteration >= config.lr_decay_steps:
        return config.lr_final
    frac = iteration / config.lr_decay_steps
    return config.lr_final + 0.5 * (config.lr_initial - config.lr_final) * (1 + math.cos(math.pi * frac))


def init_params(rng: np.random.Generator, init_sigma: float, width: int, layers: int,
                topology: str = "all-to-all") -> DenoiserParams:
    """I.i.d. ``N(0, init_sigma^2)`` entries for every trainable angle."""
    if not init_sigma > 0:
        raise ValueError("init_sigma must be positive")
    topo = make_topology(topology, width)
    zeros = DenoiserParams.zeros(width, layers, topo)
    flat = rng.normal(0.0, init_sigma, size=zeros.flat().size)
    return DenoiserParams.from_flat(flat, width, layers, topo)


# --------------------------------------------------------------------------
# training loop


@dataclass
class TrainHistory:
    config: TrainConfig
    width: int
    losses: np.ndarray
    lrs: np.ndarray
    kl_iters: list = field(default_factory=list)
    kl_values: list = field(default_factory=list)
    params: Optional[DenoiserParams] = None
    generated: Optional[np.ndarray] = None

    @property
    def final_kl(self) -> float:
        return self.kl_values[-1] if self.kl_values else math.nan


def training_pool(dist: np.ndarray, config: TrainConfig) -> Optional[np.ndarray]:
    """Fixed training set drawn once from ``dist``, or ``None`` to sample afresh."""
    if config.train_size is None:
        return None
    rng = stream(config.seed, "dataset")
    return rng.choice(dist.size, size=config.train_size, p=dist)


def train(dataset_dist: np.ndarray, config: TrainConfig,
          callback: Optional[Callable[[int, float], None]] = None) -> TrainHistory:
    """Run the batched training loop and record loss, learning rate and KL snapshots.

    KL snapshots are exact ``KL(target || generated)`` taken every
    ``config.kl_every`` iterations and after the last one.

    Raises:
        FloatingPointError: the loss became NaN or infinite.
    """
    dist = check_probvector(dataset_dist)
    width = width_of(dist)
    obj = Objective(width, config)
    data_rng = stream(config.seed, "dataset")
    pool = training_pool(dist, config)
    noise_rng = stream(config.seed, "diffusion")
    params = init_params(stream(config.seed, "init"), config.init_sigma, width, config.L,
                         config.topology)
    theta = params.flat()
    state = AdamState.zeros(theta.size)
    n_it = config.iterations
    hist = TrainHistory(config, width, np.zeros(n_it), np.zeros(n_it))

    def snapshot(it):
        gen = obj.generated_dist(theta)
        hist.kl_iters.append(it)
        hist.kl_values.append(kl_divergence(dist, gen))
        return gen

    for it in range(n_it):
        if pool is None:
            x0s = data_rng.choice(dist.size, size=config.batch_size, p=dist)
        else:
            x0s = pool[data_rng.integers(pool.size, size=config.batch_size)]
        batch = draw_batch(x0s, width, obj.sched, noise_rng)
        loss, grad = obj.loss_and_grad(theta, batch)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise FloatingPointError(
                f"non-finite loss {loss} at iteration {it} (lr {cosine_lr(it, config):.3g}, "
                f"max |theta| {np.max(np.abs(theta)):.3g})")
        lr = cosine_lr(it, config)
        theta, state = adam_step(theta, grad, state, lr)
        hist.losses[it] = loss
        hist.lrs[it] = lr
        if callback is not None:
            callback(it, loss)
        if (it + 1) % config.kl_every == 0 and it + 1 < n_it:
            snapshot(it + 1)
    hist.generated = snapshot(n_it)
    hist.params = DenoiserParams.from_flat(theta, width, config.L, obj.topo)
    return hist
