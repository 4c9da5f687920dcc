"""Repeated training runs and the experiment presets behind the figure data.

Every run is a pure function of its job description, so runs can be farmed
out to worker processes without changing any result.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from .baseline import train_factorized
from .datasets import dataset_distribution
from .training import TrainConfig, preset_config, train
from .streams import run_seed

MODELS = ("qd3pm", "factorized")


@dataclass(frozen=True)
class Job:
    label: str
    model: str
    dataset: str
    width: int
    config: TrainConfig


@dataclass
class RunResult:
    job: Job
    final_kl: float
    kl_iters: list
    kl_values: list
    losses: np.ndarray
    lrs: np.ndarray
    seconds: float
    generated: Optional[np.ndarray] = None
    params: Optional[np.ndarray] = None


def run_job(job: Job) -> RunResult:
    dist = dataset_distribution(job.dataset, job.width)
    t0 = time.perf_counter()
    if job.model == "factorized":
        h = train_factorized(dist, job.config)
        gen, params = h.model.generated_dist(), h.model.logits.ravel()
    elif job.model == "qd3pm":
        h = train(dist, job.config)
        gen, params = h.generated, h.params.flat()
    else:
        raise ValueError(f"unknown model {job.model!r}")
    return RunResult(job, h.final_kl, list(h.kl_iters), list(h.kl_values), h.losses, h.lrs,
                     time.perf_counter() - t0, gen, params)


def run_jobs(jobs: Sequence[Job], threads: int = 1) -> list[RunResult]:
    """Run jobs on up to ``threads`` worker processes; output order follows ``jobs``."""
    if threads < 1:
        raise ValueError("threads must be positive")
    if threads == 1 or len(jobs) <= 1:
        return [run_job(j) for j in jobs]
    return Parallel(n_jobs=threads, backend="loky")(delayed(run_job)(j) for j in jobs)


def seed_jobs(label: str, model: str, dataset: str, width: int, config: TrainConfig,
              seeds: int, base_seed: int = 0) -> list[Job]:
    return [Job(label, model, dataset, width, config.with_(seed=run_seed(base_seed, i)))
            for i in range(seeds)]


# --------------------------------------------------------------------------
# presets

PRESETS = ("fig6", "fig7", "fig8", "fig9", "topology")
FIG9_BANDWIDTHS = (0.5, 1.0, 2.0, 5.0)
FIG9_LAYERS = (6, 8, 10, 12)


def preset_jobs(name: str, seeds: int = 5, base_seed: int = 0,
                widths: Optional[Sequence[int]] = None,
                iterations: Optional[int] = None) -> list[Job]:
    """Jobs for one figure.

    ``fig6`` mixed Gaussian; ``fig7`` BAS with the factorized baseline; ``fig8``
    one-step x0-predictor on BAS; ``fig9`` bandwidth and depth sweep on 4-bit
    BAS; ``topology`` star and chain connectivity on 4-bit BAS.
    """
    over = {} if iterations is None else {"iterations": iterations}
    jobs: list[Job] = []
    if name == "fig6":
        for n in widths or (4, 6, 8, 9, 10):
            cfg = preset_config("mixed-gaussian", n, **over)
            jobs += seed_jobs(f"mg-n{n}", "qd3pm", "mixed-gaussian", n, cfg, seeds, base_seed)
    elif name == "fig7":
        for n in widths or (4, 6, 8, 9, 10):
            cfg = preset_config("bas", n, **over)
            jobs += seed_jobs(f"bas-n{n}", "qd3pm", "bas", n, cfg, seeds, base_seed)
            jobs += seed_jobs(f"bas-n{n}-factorized", "factorized", "bas", n, cfg, seeds, base_seed)
    elif name == "fig8":
        for n in widths or (4, 6, 8, 9, 10):
            cfg = preset_config("bas", n, "x0-predictor", **over)
            jobs += seed_jobs(f"bas-n{n}-onestep", "qd3pm", "bas", n, cfg, seeds, base_seed)
    elif name == "fig9":
        for L in FIG9_LAYERS:
            for bw in (None,) + FIG9_BANDWIDTHS:
                cfg = preset_config("bas", 4, L=L, bandwidths=bw, **over)
                tag = "mean" if bw is None else f"sigma{bw:g}"
                jobs += seed_jobs(f"bas-n4-L{L}-{tag}", "qd3pm", "bas", 4, cfg, seeds, base_seed)
    elif name == "topology":
        for topo in ("star", "chain"):
            for L in FIG9_LAYERS:
                cfg = preset_config("bas", 4, L=L, topology=topo, **over)
                jobs += seed_jobs(f"bas-n4-{topo}-L{L}", "qd3pm", "bas", 4, cfg, seeds, base_seed)
    else:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")
    return jobs
