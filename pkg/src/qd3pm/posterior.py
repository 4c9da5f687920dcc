"""Ground-truth posteriors ``q(x_{t-1} | x_t, x_0)`` under depolarizing diffusion.

Two readings of the posterior are supported everywhere through ``mode``:

``"paper-eq17"``
    The published closed form, whose identity term carries ``(1 - alpha_t) / d**2``.
``"bayes-consistent"``
    Classical Bayes over the joint kernel
    ``q(x_t | y) = alpha_t [x_t = y] + (1 - alpha_t) / d``, which is also what
    a normalized contraction of the Choi-operator derivation gives.

Both are mixtures ``gamma1 |x_t><x_t| + gamma2 rho_{t-1}`` and differ only in
the weight of the identity term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import forward_dist
from .schedule import NoiseSchedule
from .sim import BitString, GateOp, apply_gate, marginal_probs

MODES = ("paper-eq17", "bayes-consistent")
CIRCUIT_WIDTH_LIMIT = 10
CHOI_WIDTH_LIMIT = 3


class DegeneratePosteriorError(ZeroDivisionError):
    """Conditioning on an ``x_t`` that has probability zero."""


@dataclass(frozen=True)
class PosteriorSpec:
    x0: BitString
    xt: BitString
    t: int
    sched: NoiseSchedule
    mode: str = "paper-eq17"

    def __post_init__(self):
        if self.x0.width != self.xt.width:
            raise ValueError("x0 and xt must have the same width")
        if not 1 <= self.t <= self.sched.T:
            raise ValueError(f"posterior timestep {self.t} outside 1..{self.sched.T}")
        if self.mode not in MODES:
            raise ValueError(f"unknown posterior mode {self.mode!r}; choose from {MODES}")

    @property
    def d(self) -> int:
        return 1 << self.x0.width


@dataclass(frozen=True)
class PosteriorMixture:
    gamma1: float
    gamma2: float
    peak: BitString
    base: np.ndarray

    def dist(self) -> np.ndarray:
        out = self.gamma2 * self.base
        out[self.peak.index] += self.gamma1
        return out


def identity_weight(mode: str, d: int) -> float:
    """Factor multiplying ``(1 - alpha_t) * rho_{t-1}`` in the posterior numerator."""
    if mode == "paper-eq17":
        return 1.0 / d**2
    if mode == "bayes-consistent":
        return 1.0 / d
    raise ValueError(f"unknown posterior mode {mode!r}")


def overlap_xt_rho(spec: PosteriorSpec) -> float:
    """``<x_t| rho_{t-1} |x_t>`` for ``rho_{t-1}`` diffused from ``x0``."""
    abar = spec.sched.alpha_bar_t(spec.t - 1)
    value = (1.0 - abar) / spec.d
    if spec.xt == spec.x0:
        value += abar
    return value


def _gammas(alpha: float, overlap: float, mode: str, d: int) -> tuple[float, float]:
    peak = alpha * overlap
    flat = (1.0 - alpha) * identity_weight(mode, d)
    z = peak + flat
    if z <= 0.0:
        raise DegeneratePosteriorError(
            "x_t has zero probability under the forward process (alpha_t = 1, x_t unreachable)")
    return peak / z, flat / z


def posterior_mixture(spec: PosteriorSpec) -> PosteriorMixture:
    alpha = spec.sched.alpha_t(spec.t)
    g1, g2 = _gammas(alpha, overlap_xt_rho(spec), spec.mode, spec.d)
    base = forward_dist(spec.x0, spec.t - 1, spec.sched)
    return PosteriorMixture(gamma1=g1, gamma2=g2, peak=spec.xt, base=base)


def posterior_dist(spec: PosteriorSpec) -> np.ndarray:
    return posterior_mixture(spec).dist()


def posterior_angle_phi(spec: PosteriorSpec) -> float:
    """Ancilla ``Ry`` angle ``phi`` with ``cos^2(phi / 2) = gamma1``."""
    g1 = min(max(posterior_mixture(spec).gamma1, 0.0), 1.0)
    return float(2.0 * np.arccos(np.sqrt(g1)))


def posterior_matrix(t: int, xt: int, width: int, sched: NoiseSchedule,
                     mode: str = "paper-eq17") -> np.ndarray:
    """Column ``k`` is ``q(. | x_t, x_0 = k)``; used to mix over predicted ``x_0``.

    Columns whose normalizer vanishes are returned as NaN, so only mixtures
    that put weight on them are poisoned.
    """
    d = 1 << width
    alpha = sched.alpha_t(t)
    abar = sched.alpha_bar_t(t - 1)
    # rho[y, k] = diag of rho_{t-1} started from x0 = k
    rho = np.full((d, d), (1.0 - abar) / d)
    rho[np.arange(d), np.arange(d)] += abar
    c = (1.0 - alpha) * identity_weight(mode, d)
    num = c * rho
    num[xt, :] += alpha * rho[xt, :]
    z = alpha * rho[xt, :] + c
    with np.errstate(invalid="ignore", divide="ignore"):
        out = num / z
    out[:, z <= 0] = np.nan
    return out


# --------------------------------------------------------------------------
# circuit route


def posterior_circuit_sim(spec: PosteriorSpec) -> np.ndarray:
    """Measurement distribution of the controlled-swap posterior circuit.

    Qubit 0 is the ancilla, register A (qubits ``1..N``) holds ``rho_{t-1}``
    and register B (qubits ``N+1..2N``) holds ``|x_t>``. After ``Ry(phi)`` on
    the ancilla and a controlled swap of A and B, register B carries
    ``cos^2(phi/2)|x_t><x_t| + sin^2(phi/2) rho_{t-1}``. The diagonal mixed
    input on A is handled as a convex sum of basis-state runs.
    """
    width = spec.x0.width
    if width > CIRCUIT_WIDTH_LIMIT:
        raise MemoryError(f"posterior circuit needs {2 * width + 1} qubits; limit is "
                          f"{2 * CIRCUIT_WIDTH_LIMIT + 1}")
    n = 2 * width + 1
    phi = posterior_angle_phi(spec)
    gates = [GateOp("Ry", (0,), (phi,))]
    gates += [GateOp("CSWAP", (0, 1 + i, 1 + width + i)) for i in range(width)]
    reg_b = list(range(1 + width, n))

    rho = forward_dist(spec.x0, spec.t - 1, spec.sched)
    out = np.zeros(spec.d)
    for y in np.flatnonzero(rho > 0):
        psi = np.zeros(1 << n, dtype=complex)
        psi[(int(y) << width) | spec.xt.index] = 1.0
        for gate in gates:
            psi = apply_gate(psi, gate)
        out += rho[y] * marginal_probs(psi, reg_b)
    return out


# --------------------------------------------------------------------------
# dense Choi-operator oracle


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.conj().T) / 2)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


def _trace_middle(op: np.ndarray, d: int) -> np.ndarray:
    """Partial trace of the middle factor of an operator on ``d x d x d``."""
    t = op.reshape(d, d, d, d, d, d)
    return np.einsum("amjcmk->ajck", t).reshape(d * d, d * d)


def _choi_conditional(spec: PosteriorSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalized conditional operator, outcome distribution and ``rho_{t-1}``.

    The conditional operator is returned with shape ``(d, d, d, d)`` indexed
    ``(x_t, h, x_t', h')``.
    """
    width = spec.x0.width
    if width > CHOI_WIDTH_LIMIT:
        raise MemoryError(f"Choi oracle limited to width {CHOI_WIDTH_LIMIT}")
    d = spec.d
    alpha = spec.sched.alpha_t(spec.t)
    eye = np.eye(d)

    phi = eye.reshape(-1) / np.sqrt(d)
    phi_dm = np.outer(phi, phi)
    # channel on the first factor: (E (x) id)(Y) = a Y + (1 - a) I/d (x) Tr_1 Y
    reduced = np.einsum("abad->bd", phi_dm.reshape(d, d, d, d))
    choi = alpha * phi_dm + (1.0 - alpha) * np.kron(eye / d, reduced)

    meas = np.zeros((d * d, d * d))
    for x in range(d):
        meas[x * d + x, x * d + x] = 1.0

    # spaces ordered X_t, H_t, H_{t-1}
    prod = np.kron(meas, eye) @ np.kron(eye, choi)
    cond = _trace_middle(prod, d).reshape(d, d, d, d)

    rho_prev = np.diag(forward_dist(spec.x0, spec.t - 1, spec.sched)).astype(complex)
    outcome = np.array([np.trace(cond[x, :, x, :] @ rho_prev).real for x in range(d)])
    total = outcome.sum()
    return cond / total, outcome / total, rho_prev


def choi_posterior_oracle(spec: PosteriorSpec) -> np.ndarray:
    """Posterior density matrix from the conditional-state route, in dense form.

    Steps: the channel's Choi operator on ``H_t (x) H_{t-1}`` from the
    normalized maximally entangled state; the measurement operator on
    ``X_t (x) H_t``; their product traced over ``H_t``; rescaling so the
    induced outcome distribution over ``X_t`` sums to one; and the star-product
    Bayes update ``N^{1/2} M N^{1/2}`` with ``N = rho_{t-1} / p(x_t)``.

    Independent of ``spec.mode``: the normalized contraction reproduces the
    ``"bayes-consistent"`` posterior.
    """
    cond, outcome, rho_prev = _choi_conditional(spec)
    xt = spec.xt.index
    if outcome[xt] <= 0.0:
        raise DegeneratePosteriorError("x_t has zero probability")
    root = _psd_sqrt(rho_prev / outcome[xt])
    return root @ cond[xt, :, xt, :] @ root


def choi_outcome_distribution(spec: PosteriorSpec) -> np.ndarray:
    """Outcome distribution over ``X_t`` induced by the normalized conditional operator."""
    return _choi_conditional(spec)[1]


def posterior_batch(x0s, xts, ts, width: int, sched: NoiseSchedule,
                    mode: str = "paper-eq17") -> np.ndarray:
    """Rows of :func:`posterior_dist` for arrays of ``x0`` and ``x_t`` indices."""
    x0s = np.asarray(x0s, dtype=int)
    xts = np.asarray(xts, dtype=int)
    ts = np.asarray(ts, dtype=int)
    d = 1 << width
    rows = np.arange(x0s.size)
    alpha = sched.alpha[ts]
    abar = sched.alpha_bar[ts - 1]
    rho = np.repeat(((1.0 - abar) / d)[:, None], d, axis=1)
    rho[rows, x0s] += abar
    peak = alpha * rho[rows, xts]
    flat = (1.0 - alpha) * identity_weight(mode, d)
    z = peak + flat
    if np.any(z <= 0.0):
        raise DegeneratePosteriorError("x_t has zero probability under the forward process")
    out = (flat / z)[:, None] * rho
    out[rows, xts] += peak / z
    return out


def bayes_enumeration(spec: PosteriorSpec) -> np.ndarray:
    """``q(x_t | y) q(y | x_0) / q(x_t | x_0)`` summed out over every ``y`` explicitly.

    Builds the one-step transition matrix of the joint depolarizing kernel and
    the ``(t-1)``-step marginal by repeated multiplication, independent of the
    closed forms above.
    """
    d = spec.d
    sched = spec.sched
    step = lambda a: a * np.eye(d) + (1.0 - a) / d * np.ones((d, d))
    prior = np.zeros(d)
    prior[spec.x0.index] = 1.0
    for s in range(1, spec.t):
        prior = prior @ step(sched.alpha_t(s))
    like = step(sched.alpha_t(spec.t))[:, spec.xt.index]
    joint = like * prior
    z = joint.sum()
    if z <= 0:
        raise DegeneratePosteriorError("x_t has zero probability")
    return joint / z
