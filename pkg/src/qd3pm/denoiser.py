"""Time-conditioned parameterized denoising circuit.

The circuit acts on ``N + 1`` qubits. Qubit 0 carries the timestep through
``Ry(2 pi t / (T + 1))``; qubit ``i`` (``1..N``) carries bit ``i - 1`` of
``x_t`` through ``Ry(w_i * x_i)``. Then ``L`` identical layers follow, each a
composite rotation ``Rx(a) Ry(b) Rx(c)`` (applied in that time order) on every
qubit and a ``ZZ(v)`` on every topology edge. The data register is read out
exactly by tracing away qubit 0.

The flat parameter vector is ``[w, v_singles.ravel(), v_entanglers.ravel()]``
and every entry drives exactly one gate angle, which both gradient routes rely
on.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np

from .sim import BitString, GateOp, index_bits, marginal_probs, run_circuit

TOPOLOGIES = ("all-to-all", "chain", "star")


@dataclass(frozen=True)
class Topology:
    kind: str
    n_qubits: int
    edges: tuple[tuple[int, int], ...]


def make_topology(kind: str, width: int) -> Topology:
    """Entangler edges over the ``width + 1`` circuit qubits, lexicographically ordered."""
    n = width + 1
    if kind == "all-to-all":
        edges = tuple(combinations(range(n), 2))
    elif kind == "chain":
        edges = tuple((i, i + 1) for i in range(n - 1))
    elif kind == "star":
        edges = tuple((0, i) for i in range(1, n))
    else:
        raise ValueError(f"unknown topology {kind!r}; choose from {TOPOLOGIES}")
    return Topology(kind=kind, n_qubits=n, edges=edges)


def param_count(width: int, layers: int, topo: Topology) -> int:
    return width + layers * (3 * (width + 1) + len(topo.edges))


@dataclass
class DenoiserParams:
    w: np.ndarray
    v_singles: np.ndarray
    v_entanglers: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        self.v_singles = np.asarray(self.v_singles, dtype=float)
        self.v_entanglers = np.asarray(self.v_entanglers, dtype=float)
        n = self.w.size + 1
        if self.v_singles.shape != (self.layers, n, 3):
            raise ValueError(f"v_singles shape {self.v_singles.shape} != {(self.layers, n, 3)}")
        if self.v_entanglers.ndim != 2 or self.v_entanglers.shape[0] != self.layers:
            raise ValueError(f"v_entanglers shape {self.v_entanglers.shape} inconsistent")
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.v_singles))
                and np.all(np.isfinite(self.v_entanglers))):
            raise ValueError("parameters must be finite")

    @property
    def width(self) -> int:
        return self.w.size

    @property
    def layers(self) -> int:
        return self.v_singles.shape[0]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w, self.v_singles.ravel(), self.v_entanglers.ravel()])

    @classmethod
    def from_flat(cls, flat: np.ndarray, width: int, layers: int, topo: Topology) -> "DenoiserParams":
        flat = np.asarray(flat, dtype=float)
        n, e = width + 1, len(topo.edges)
        if flat.size != param_count(width, layers, topo):
            raise ValueError(f"expected {param_count(width, layers, topo)} parameters, got {flat.size}")
        w = flat[:width]
        singles = flat[width:width + layers * n * 3].reshape(layers, n, 3)
        ents = flat[width + layers * n * 3:].reshape(layers, e)
        return cls(w.copy(), singles.copy(), ents.copy())

    @classmethod
    def zeros(cls, width: int, layers: int, topo: Topology) -> "DenoiserParams":
        return cls.from_flat(np.zeros(param_count(width, layers, topo)), width, layers, topo)


def time_angle(t: int, T: int) -> float:
    return 2.0 * np.pi * t / (T + 1)


def encode(t: int, xt: BitString, w: np.ndarray, T: int) -> np.ndarray:
    """Product state ``Ry(2 pi t/(T+1))|0> (x) Ry(w_i x_i)|0>`` over ``N + 1`` qubits."""
    w = np.asarray(w, dtype=float)
    if w.shape != (xt.width,):
        raise ValueError(f"need {xt.width} encoding weights, got shape {w.shape}")
    angles = [time_angle(t, T)] + [wi * b for wi, b in zip(w, xt.bits)]
    state = np.ones(1, dtype=complex)
    for a in angles:
        state = np.kron(state, [np.cos(a / 2), np.sin(a / 2)])
    return state


def circuit_gates(params: DenoiserParams, topo: Topology) -> list[GateOp]:
    """Gate list of the trainable block, for the general-purpose simulator."""
    gates = []
    for layer in range(params.layers):
        for q in range(topo.n_qubits):
            a, b, c = params.v_singles[layer, q]
            gates += [GateOp("Rx", (q,), (a,)), GateOp("Ry", (q,), (b,)), GateOp("Rx", (q,), (c,))]
        for e, (q1, q2) in enumerate(topo.edges):
            gates.append(GateOp("ZZ", (q1, q2), (params.v_entanglers[layer, e],)))
    return gates


def reference_denoise_dist(t: int, xt: BitString, params: DenoiserParams, topo: Topology,
                           T: int) -> np.ndarray:
    """Gate-by-gate evaluation through :mod:`qd3pm.sim`; slow, used as a cross-check."""
    psi = run_circuit(encode(t, xt, params.w, T), circuit_gates(params, topo))
    return marginal_probs(psi, list(range(1, topo.n_qubits)))


# --------------------------------------------------------------------------
# batched engine

_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
# circuits up to this many qubits apply each rotation block as one dense matrix
DENSE_BLOCK_QUBITS = 7


def _rx(theta):
    """``Rx`` for an array of angles, shape ``theta.shape + (2, 2)``."""
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    out = np.empty(theta.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c
    out[..., 0, 1] = -1j * s
    out[..., 1, 0] = -1j * s
    out[..., 1, 1] = c
    return out


def _ry(theta):
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    out = np.empty(theta.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    return out


def _dagger(m):
    return np.swapaxes(m, -1, -2).conj()


def _rotations(singles):
    """Composite rotations and their output-frame generators.

    Args:
        singles: angles ``(..., 3)`` applied as ``Rx``, ``Ry``, ``Rx`` in time order.

    Returns:
        ``(u, gens)`` with ``u`` of shape ``(..., 2, 2)`` and ``gens`` of shape
        ``(..., 3, 2, 2)``; ``gens[..., k, :, :]`` is the generator of angle ``k``
        conjugated by the gates that follow it.
    """
    ra, rb, rc = _rx(singles[..., 0]), _ry(singles[..., 1]), _rx(singles[..., 2])
    outer = rc @ rb
    u = outer @ ra
    gens = np.empty(singles.shape[:-1] + (3, 2, 2), dtype=complex)
    gens[..., 0, :, :] = outer @ _X @ _dagger(outer)
    gens[..., 1, :, :] = rc @ _Y @ _dagger(rc)
    gens[..., 2, :, :] = _X
    return u, gens


def _kron_qubits(us):
    """Kronecker product over the qubit axis of ``(L, n, 2, 2)``, qubit 0 most significant."""
    full = us[:, 0]
    for q in range(1, us.shape[1]):
        m = full.shape[-1]
        full = np.einsum("lij,lkm->likjm", full, us[:, q]).reshape(-1, 2 * m, 2 * m)
    return full


def _resolve_cot(cot, probs):
    if callable(cot):
        cot = cot(probs)
    cot = np.asarray(cot, dtype=float)
    if cot.shape != probs.shape:
        raise ValueError(f"cotangent shape {cot.shape} does not match outputs {probs.shape}")
    return cot


class DenoiserCircuit:
    """Evaluates the denoiser for many ``(t, x_t)`` inputs at once.

    Args:
        width: number of data bits ``N``.
        layers: number of trainable layers ``L``.
        topo: entangler topology.
        T: total diffusion steps (sets the time-encoding angle).
    """

    def __init__(self, width: int, layers: int, topo: Topology, T: int):
        if topo.n_qubits != width + 1:
            raise ValueError("topology does not match width")
        self.width = width
        self.layers = layers
        self.topo = topo
        self.T = T
        self.n = width + 1
        self.d = 1 << width
        self.n_params = param_count(width, layers, topo)
        bits = index_bits(self.n)
        if topo.edges:
            e = np.array(topo.edges)
            self._parity = (1 - 2 * (bits[:, e[:, 0]] ^ bits[:, e[:, 1]])).T.astype(float)
        else:
            self._parity = np.zeros((0, 1 << self.n))
        self._xbits = index_bits(width).astype(float)
        self._n_single = layers * self.n * 3
        self._dense = self.n <= DENSE_BLOCK_QUBITS
        if self._dense:
            # einsum subscripts reducing a (2,)*2n cross matrix onto one qubit
            letters = "abcdefghijklmnopqrstuvwxyz"
            self._reduce = []
            for q in range(self.n):
                rows = list(letters[:self.n])
                cols = list(rows)
                rows[q], cols[q] = "Y", "Z"
                self._reduce.append("".join(rows) + "".join(cols) + "->YZ")

    def unpack(self, theta: np.ndarray):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {theta.shape}")
        w = theta[:self.width]
        singles = theta[self.width:self.width + self._n_single].reshape(self.layers, self.n, 3)
        ents = theta[self.width + self._n_single:].reshape(self.layers, len(self.topo.edges))
        return w, singles, ents

    # -- forward ---------------------------------------------------------

    def _encode(self, w, ts, xs, shift=None):
        ts = np.asarray(ts)
        xs = np.asarray(xs, dtype=int)
        B = len(xs)
        enc = self._xbits[xs] * w[None, :]  # (B, N) data angles
        if shift is not None:
            enc = enc + shift[:self.width][None, :]
        tang = 2.0 * np.pi * ts / (self.T + 1)
        psi = np.stack([np.cos(tang / 2), np.sin(tang / 2)], axis=1).astype(complex)
        for i in range(self.width):
            qv = np.stack([np.cos(enc[:, i] / 2), np.sin(enc[:, i] / 2)], axis=1)
            psi = (psi[:, :, None] * qv[:, None, :]).reshape(B, -1)
        return psi

    def _apply_1q(self, psi, u, q):
        B = psi.shape[0]
        view = psi.reshape(B << q, 2, 1 << (self.n - q - 1))
        return np.matmul(u, view).reshape(B, -1)

    def _blocks(self, singles):
        us, gens = _rotations(singles)
        full = _kron_qubits(us) if self._dense else None
        return us, gens, full

    def _apply_block(self, psi, us, full, adjoint=False):
        if full is not None:
            # row-vector states: psi' = psi U^T, undone by psi U*
            return psi @ (full.conj() if adjoint else full.T)
        for q in range(self.n):
            u = us[q]
            psi = self._apply_1q(psi, u.conj().T if adjoint else u, q)
        return psi

    def states(self, theta, ts, xs, shift: Optional[np.ndarray] = None) -> np.ndarray:
        """Output statevectors ``(B, 2**(N+1))``; ``shift`` offsets gate angles."""
        w, singles, ents = self.unpack(theta)
        if shift is not None:
            _, s_singles, s_ents = self.unpack(shift)
            singles = singles + s_singles
            ents = ents + s_ents
        return self._run(self._encode(w, ts, xs, shift), self._blocks(singles), ents)

    def _run(self, psi, blocks, ents):
        us, _, full = blocks
        phases = np.exp(-0.5j * (ents @ self._parity)) if len(self.topo.edges) else None
        for layer in range(self.layers):
            psi = self._apply_block(psi, us[layer], None if full is None else full[layer])
            if phases is not None:
                psi = psi * phases[layer]
        return psi

    def probs_from_states(self, psi: np.ndarray) -> np.ndarray:
        return (psi.real**2 + psi.imag**2).reshape(psi.shape[0], 2, self.d).sum(axis=1)

    def probs(self, theta, ts, xs, shift=None) -> np.ndarray:
        """Exact ``p_theta(. | t, x_t)`` for each input, shape ``(B, 2**N)``."""
        return self.probs_from_states(self.states(theta, ts, xs, shift))

    # -- gradients -------------------------------------------------------

    def _reduced_cross(self, psi, lam, q, cross=None):
        """``R[i, j] = sum conj(lam_j) psi_i`` over the batch and every qubit but ``q``."""
        if cross is not None:
            return np.einsum(self._reduce[q], cross)
        B = psi.shape[0]
        shape = (B << q, 2, 1 << (self.n - q - 1))
        return np.einsum("mik,mjk->ij", psi.reshape(shape), lam.conj().reshape(shape))

    def vjp(self, theta, ts, xs, cot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Probabilities and ``sum_b cot[b] . d p_b / d theta`` by adjoint differentiation.

        ``cot`` has shape ``(B, 2**N)`` (the loss gradient with respect to the
        output probabilities), or is a callable mapping the forward
        probabilities to that array. The backward sweep uncomputes each block on the
        state and the co-state together, so memory stays ``O(B 2**(N+1))``.
        For a gate ``exp(-i a G / 2)`` the derivative is ``Im <lam|G|psi>``.
        """
        theta = np.asarray(theta, dtype=float)
        w, singles, ents = self.unpack(theta)
        xs = np.asarray(xs, dtype=int)
        B = len(xs)
        blocks = self._blocks(singles)
        us, gens, full = blocks
        psi = self._run(self._encode(w, ts, xs), blocks, ents)
        probs = self.probs_from_states(psi)
        cot = _resolve_cot(cot, probs)
        lam = psi * np.tile(cot, (1, 2))
        grad = np.zeros_like(theta)
        g_singles = grad[self.width:self.width + self._n_single].reshape(self.layers, self.n, 3)
        g_ents = grad[self.width + self._n_single:].reshape(self.layers, len(self.topo.edges))

        pair = np.concatenate([psi, lam], axis=0)
        for layer in reversed(range(self.layers)):
            if len(self.topo.edges):
                ip = (pair[B:].conj() * pair[:B]).imag.sum(axis=0)
                g_ents[layer] = self._parity @ ip
                pair = pair * np.exp(0.5j * (ents[layer] @ self._parity))
            # rotations on different qubits commute, so each qubit's generators
            # can be read off at the block output
            cross = None
            if self._dense:
                cross = (pair[:B].T @ pair[B:].conj()).reshape((2,) * (2 * self.n))
            for q in range(self.n):
                r = self._reduced_cross(pair[:B], pair[B:], q, cross)
                g_singles[layer, q] = np.einsum("cij,ji->c", gens[layer, q], r).imag
            pair = self._apply_block(pair, us[layer], None if full is None else full[layer],
                                     adjoint=True)
        # encoding: d/dw_i = x_i * Im <lam| Y_i |psi>, per input
        lam, psi = pair[B:], pair[:B]
        for i in range(self.width):
            q = i + 1
            shape = (B, 1 << q, 2, 1 << (self.n - q - 1))
            l4, p4 = lam.reshape(shape).conj(), psi.reshape(shape)
            z = (-1j * (l4[:, :, 0] * p4[:, :, 1]) + 1j * (l4[:, :, 1] * p4[:, :, 0])).sum(axis=(1, 2))
            grad[i] = (z.imag * self._xbits[xs, i]).sum()
        return probs, grad

    def vjp_parameter_shift(self, theta, ts, xs, cot) -> tuple[np.ndarray, np.ndarray]:
        """Same contract as :meth:`vjp`, via the two-term shift rule on every gate angle.

        Every gate is ``exp(-i a G / 2)`` with ``G^2 = I``, so
        ``d p / d a = (p(a + pi/2) - p(a - pi/2)) / 2``. Encoding angles are
        ``w_i x_i``, which adds the chain factor ``x_i`` per input.
        """
        theta = np.asarray(theta, dtype=float)
        xs = np.asarray(xs, dtype=int)
        probs = self.probs(theta, ts, xs)
        cot = _resolve_cot(cot, probs)
        grad = np.zeros_like(theta)
        shift = np.zeros_like(theta)
        for j in range(self.n_params):
            shift[j] = np.pi / 2
            plus = self.probs(theta, ts, xs, shift)
            shift[j] = -np.pi / 2
            minus = self.probs(theta, ts, xs, shift)
            shift[j] = 0.0
            per_item = ((plus - minus) / 2 * cot).sum(axis=1)
            if j < self.width:
                per_item = per_item * self._xbits[xs, j]
            grad[j] = per_item.sum()
        return probs, grad

    def vjp_finite_difference(self, theta, ts, xs, cot, step: float = 1e-3):
        """Central differences on the parameters; oracle only."""
        theta = np.asarray(theta, dtype=float)
        probs = self.probs(theta, ts, xs)
        cot = _resolve_cot(cot, probs)
        grad = np.zeros_like(theta)
        for j in range(self.n_params):
            tp, tm = theta.copy(), theta.copy()
            tp[j] += step
            tm[j] -= step
            diff = self.probs(tp, ts, xs) - self.probs(tm, ts, xs)
            grad[j] = (diff * cot).sum() / (2 * step)
        return probs, grad


def denoise_dist(t: int, xt: BitString, params: DenoiserParams, topo: Topology, T: int) -> np.ndarray:
    """``p_theta(x_{t-1} | x_t)`` (or ``p_theta(x_0 | x_t)`` for an x0-predictor)."""
    if not 1 <= t <= T:
        raise ValueError(f"timestep {t} outside 1..{T}")
    circ = DenoiserCircuit(params.width, params.layers, topo, T)
    return circ.probs(params.flat(), [t], [xt.index])[0]


def sample_denoised(t: int, xt: BitString, params: DenoiserParams, topo: Topology, T: int,
                    rng: np.random.Generator) -> BitString:
    p = denoise_dist(t, xt, params, topo, T)
    return BitString.from_index(int(rng.choice(p.size, p=p / p.sum())), xt.width)
