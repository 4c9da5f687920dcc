"""A short training run on 4-bit bars and stripes.

Uses the published 4-bit preset with fewer iterations so it finishes in a
few seconds. Pass a number on the command line for a longer run; 6000 is
the full setting.
"""

import sys

import numpy as np

from qd3pm.datasets import bas_distribution
from qd3pm.metrics import kl_divergence
from qd3pm.training import preset_config, train

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 300
target = bas_distribution(2, 2)
cfg = preset_config("bas", 4, iterations=iterations, kl_every=max(iterations // 5, 1), seed=1)
hist = train(target, cfg)

for it, kl in zip(hist.kl_iters, hist.kl_values):
    print(f"iteration {it:>5}  KL(target || generated) {kl:.4f}")

top = np.argsort(hist.generated)[::-1][:8]
print("\nmost likely generated patterns")
for i in top:
    bits = format(i, "04b")
    print(f"  {bits[:2]}/{bits[2:]}  p={hist.generated[i]:.3f}  target={target[i]:.3f}")
print(f"\ncheck: {kl_divergence(target, hist.generated):.4f}")
