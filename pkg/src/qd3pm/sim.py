"""Exact pure-state simulation primitives and a small dense density-matrix path.

Conventions:
    Qubit 0 is the most significant bit of a basis index, so the amplitude of
    ``|b_0 b_1 ... b_{n-1}>`` lives at ``sum(b_q << (n - 1 - q))``. Reshaping a
    flat state to ``(2,) * n`` puts qubit ``q`` on axis ``q``.

Global phases are not tracked; only probabilities and density matrices are
meaningful outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DENSE_QUBIT_LIMIT = 12

_I2 = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


@dataclass(frozen=True)
class BitString:
    """A fixed-width binary sample, first bit most significant."""

    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if not bits:
            raise ValueError("BitString needs at least one bit")
        if any(b not in (0, 1) for b in bits):
            raise ValueError(f"bits must be 0/1, got {self.bits!r}")
        object.__setattr__(self, "bits", bits)

    @property
    def width(self) -> int:
        return len(self.bits)

    @property
    def index(self) -> int:
        value = 0
        for b in self.bits:
            value = (value << 1) | b
        return value

    @classmethod
    def from_index(cls, index: int, width: int) -> "BitString":
        if width < 1:
            raise ValueError("width must be positive")
        if not 0 <= index < 1 << width:
            raise ValueError(f"index {index} out of range for width {width}")
        return cls(tuple((index >> (width - 1 - i)) & 1 for i in range(width)))

    @classmethod
    def from_str(cls, text: str) -> "BitString":
        return cls(tuple(int(c) for c in text.strip()))

    def __str__(self) -> str:
        return "".join(str(b) for b in self.bits)

    def __len__(self) -> int:
        return len(self.bits)


def index_bits(width: int) -> np.ndarray:
    """Return the ``(2**width, width)`` table of basis-index bits."""
    idx = np.arange(1 << width)
    shifts = np.arange(width - 1, -1, -1)
    return (idx[:, None] >> shifts) & 1


def basis_state(index: int, n: int) -> np.ndarray:
    state = np.zeros(1 << n, dtype=complex)
    state[index] = 1.0
    return state


def random_state(n: int, rng: np.random.Generator) -> np.ndarray:
    amps = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    return amps / np.linalg.norm(amps)


def check_probvector(p: np.ndarray, atol: float = 1e-9) -> np.ndarray:
    """Validate a probability vector over ``2**N`` outcomes and return it as floats."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size < 2 or p.size & (p.size - 1):
        raise ValueError(f"probability vector length must be a power of two >= 2, got {p.shape}")
    if np.any(p < -atol):
        raise ValueError("probability vector has negative entries")
    if abs(p.sum() - 1.0) > atol:
        raise ValueError(f"probability vector sums to {p.sum()!r}")
    return p


def width_of(p: np.ndarray) -> int:
    return int(np.log2(len(p)) + 0.5)


# --------------------------------------------------------------------------
# gates


def rx(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])


def ry(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rz(theta: float) -> np.ndarray:
    return np.array([[np.exp(-0.5j * theta), 0], [0, np.exp(0.5j * theta)]])


def r3(a: float, b: float, c: float) -> np.ndarray:
    """Composite rotation applying ``Rx(a)``, then ``Ry(b)``, then ``Rx(c)``."""
    return rx(c) @ ry(b) @ rx(a)


_ARITY = {"Rx": (1, 1), "Ry": (1, 1), "Rz": (1, 1), "R3": (1, 3), "ZZ": (2, 1), "CSWAP": (3, 0)}


@dataclass(frozen=True)
class GateOp:
    """One gate: ``kind`` in {Rx, Ry, Rz, R3, ZZ, CSWAP}.

    CSWAP targets are ``(control, a, b)``.
    """

    kind: str
    targets: tuple[int, ...]
    angles: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in _ARITY:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        n_targets, n_angles = _ARITY[self.kind]
        targets = tuple(int(q) for q in self.targets)
        angles = tuple(float(a) for a in self.angles)
        if len(targets) != n_targets:
            raise ValueError(f"{self.kind} takes {n_targets} target(s), got {len(targets)}")
        if len(set(targets)) != len(targets):
            raise ValueError(f"{self.kind} targets must be distinct: {targets}")
        if len(angles) != n_angles:
            raise ValueError(f"{self.kind} takes {n_angles} angle(s), got {len(angles)}")
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "angles", angles)

    def inverse(self) -> "GateOp":
        if self.kind == "CSWAP":
            return self
        if self.kind == "R3":
            a, b, c = self.angles
            return GateOp("R3", self.targets, (-c, -b, -a))
        return GateOp(self.kind, self.targets, tuple(-a for a in self.angles))


def n_qubits(state: np.ndarray) -> int:
    n = int(np.log2(state.size) + 0.5)
    if 1 << n != state.size:
        raise ValueError(f"state length {state.size} is not a power of two")
    return n


def _apply_1q_inplace(psi: np.ndarray, u: np.ndarray, q: int, n: int) -> None:
    view = psi.reshape(1 << q, 2, 1 << (n - q - 1))
    a0 = view[:, 0, :].copy()
    a1 = view[:, 1, :]
    view[:, 0, :] = u[0, 0] * a0 + u[0, 1] * a1
    view[:, 1, :] = u[1, 0] * a0 + u[1, 1] * a1


def zz_phases(n: int, q1: int, q2: int, theta: float) -> np.ndarray:
    bits = index_bits(n)
    parity = 1 - 2 * (bits[:, q1] ^ bits[:, q2])
    return np.exp(-0.5j * theta * parity)


def apply_gate(state: np.ndarray, gate: GateOp) -> np.ndarray:
    """Return ``gate`` applied to a flat statevector (the input is not modified)."""
    n = n_qubits(state)
    if any(q < 0 or q >= n for q in gate.targets):
        raise ValueError(f"gate targets {gate.targets} invalid for {n} qubits")
    psi = np.array(state, dtype=complex)
    if gate.kind in ("Rx", "Ry", "Rz", "R3"):
        u = {"Rx": rx, "Ry": ry, "Rz": rz, "R3": r3}[gate.kind](*gate.angles)
        _apply_1q_inplace(psi, u, gate.targets[0], n)
    elif gate.kind == "ZZ":
        psi *= zz_phases(n, gate.targets[0], gate.targets[1], gate.angles[0])
    else:
        c, a, b = gate.targets
        t = psi.reshape((2,) * n)
        sel = [slice(None)] * n
        sel[c] = 1
        branch = t[tuple(sel)]
        # axes of the control-1 branch shift down by one above the control
        ia, ib = (a - (a > c)), (b - (b > c))
        t[tuple(sel)] = np.swapaxes(branch, ia, ib).copy()
    return psi


def run_circuit(state: np.ndarray, gates: Iterable[GateOp]) -> np.ndarray:
    for gate in gates:
        state = apply_gate(state, gate)
    return state


def marginal_probs(state: np.ndarray, keep: Sequence[int]) -> np.ndarray:
    """Outcome distribution of measuring the ``keep`` qubits, in the given order."""
    n = n_qubits(state)
    keep = list(keep)
    if not keep:
        raise ValueError("keep must name at least one qubit")
    if len(set(keep)) != len(keep) or any(q < 0 or q >= n for q in keep):
        raise ValueError(f"invalid keep set {keep} for {n} qubits")
    probs = (np.abs(state) ** 2).reshape((2,) * n)
    drop = tuple(q for q in range(n) if q not in keep)
    marg = probs.sum(axis=drop)
    # remaining axes are in ascending qubit order; reorder to match keep
    order = sorted(keep)
    marg = np.transpose(marg, [order.index(q) for q in keep])
    return marg.reshape(-1)


# --------------------------------------------------------------------------
# dense oracle path


def _check_dense(n: int) -> None:
    if n > DENSE_QUBIT_LIMIT:
        raise MemoryError(f"dense path limited to {DENSE_QUBIT_LIMIT} qubits, got {n}")


def dm_from_statevector(state: np.ndarray) -> np.ndarray:
    _check_dense(n_qubits(state))
    psi = np.asarray(state, dtype=complex)
    return np.outer(psi, psi.conj())


def dm_partial_trace(dm: np.ndarray, trace_out: Iterable[int]) -> np.ndarray:
    """Trace out the listed qubits; remaining qubits keep ascending order."""
    dm = np.asarray(dm)
    n = n_qubits(dm[0])
    _check_dense(n)
    out = sorted(set(int(q) for q in trace_out))
    if any(q < 0 or q >= n for q in out):
        raise ValueError(f"invalid qubits {out} for {n} qubits")
    if len(out) == n:
        raise ValueError("cannot trace out every qubit")
    t = dm.reshape((2,) * (2 * n))
    # trace from the highest axis down so lower indices stay valid
    for k, q in enumerate(sorted(out, reverse=True)):
        remaining = n - k
        t = np.trace(t, axis1=q, axis2=q + remaining)
    m = 1 << (n - len(out))
    return t.reshape(m, m)


def check_density_matrix(dm: np.ndarray, atol: float = 1e-10) -> None:
    if not np.allclose(dm, dm.conj().T, atol=atol):
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(dm) - 1) > atol:
        raise ValueError("density matrix trace is not 1")
    if np.linalg.eigvalsh(dm).min() < -1e-9:
        raise ValueError("density matrix has negative eigenvalues")


def kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    out = np.eye(1, dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out


def gate_matrix(gate: GateOp, n: int) -> np.ndarray:
    """Full ``2**n`` unitary of a gate, built independently of ``apply_gate``."""
    _check_dense(n)
    if gate.kind in ("Rx", "Ry", "Rz", "R3"):
        u = {"Rx": rx, "Ry": ry, "Rz": rz, "R3": r3}[gate.kind](*gate.angles)
        return kron_all([u if q == gate.targets[0] else _I2 for q in range(n)])
    if gate.kind == "ZZ":
        g = kron_all([PAULI_Z if q in gate.targets else _I2 for q in range(n)])
        w, v = np.linalg.eigh(g)
        return (v * np.exp(-0.5j * gate.angles[0] * w)) @ v.conj().T
    c, a, b = gate.targets
    bits = index_bits(n)
    perm = bits.copy()
    on = bits[:, c] == 1
    perm[on, a], perm[on, b] = bits[on, b], bits[on, a]
    dst = perm @ (1 << np.arange(n - 1, -1, -1))
    mat = np.zeros((1 << n, 1 << n), dtype=complex)
    mat[dst, np.arange(1 << n)] = 1
    return mat
