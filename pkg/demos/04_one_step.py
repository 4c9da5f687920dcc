"""Ancestral sampling against one-step sampling.

An x0-predictor maps pure noise straight to data, so one circuit call
replaces the T-step chain. This script trains a small one and compares the
exact distributions produced by both samplers.
"""

import sys

from qd3pm.datasets import bas_distribution
from qd3pm.denoiser import DenoiserCircuit, make_topology
from qd3pm.metrics import kl_divergence
from qd3pm.onestep import exact_iterative_dist, exact_one_step_dist
from qd3pm.schedule import cosine_schedule
from qd3pm.training import preset_config, train

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 200
target = bas_distribution(2, 2)
cfg = preset_config("bas", 4, "x0-predictor", iterations=iterations, kl_every=iterations, seed=3)
hist = train(target, cfg)

sched = cosine_schedule(cfg.T, cfg.s)
circ = DenoiserCircuit(4, cfg.L, make_topology(cfg.topology, 4), cfg.T)
theta = hist.params.flat()
one = exact_one_step_dist(circ, theta, sched)
chain = exact_iterative_dist(circ, theta, sched, "x0-predictor", cfg.posterior_mode)
print(f"{iterations} iterations, L={cfg.L}")
print(f"one-step  KL(target || generated) {kl_divergence(target, one):.4f}")
print(f"iterative KL(target || generated) {kl_divergence(target, chain):.4f}")
