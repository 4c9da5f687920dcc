"""The two posterior modes, side by side on a single bit.

``paper-eq17`` weights the identity term by (1 - alpha)/d^2 and
``bayes-consistent`` by (1 - alpha)/d. Only the second agrees with Bayes'
rule applied to the depolarizing forward process, which this script
checks by brute-force enumeration.
"""

import numpy as np

from qd3pm.posterior import PosteriorSpec, bayes_enumeration, posterior_circuit_sim, posterior_dist
from qd3pm.schedule import cosine_schedule
from qd3pm.sim import BitString

sched = cosine_schedule()
x0, xt = BitString.from_str("0"), BitString.from_str("1")
print(" t   eq17 p(1)   bayes p(1)   enumeration p(1)")
for t in (2, 5, 10, 20, 30):
    eq17 = posterior_dist(PosteriorSpec(x0, xt, t, sched, "paper-eq17"))
    spec = PosteriorSpec(x0, xt, t, sched, "bayes-consistent")
    print(f"{t:>2}   {eq17[1]:.6f}    {posterior_dist(spec)[1]:.6f}     {bayes_enumeration(spec)[1]:.6f}")

# the state-preparation circuit reproduces either formula
spec = PosteriorSpec(BitString.from_str("0110"), BitString.from_str("0111"), 7, sched, "paper-eq17")
gap = np.max(np.abs(posterior_circuit_sim(spec) - posterior_dist(spec)))
print(f"\n4-bit circuit vs closed form: max deviation {gap:.1e}")
