"""Dense statevector engine: preparation, unitary application, standard and
Bell-basis measurement, and exact marginal distributions.

Conventions shared by the whole package:

* Amplitude indexing is little-endian: qubit ``q`` occupies bit ``q`` of the
  array index, so qubit 0 is the least significant bit.
* In any explicitly listed qubit sequence (gate targets, marginal queries,
  measured lists) the first listed qubit is the most significant bit of the
  corresponding matrix index or outcome value, and the leftmost character
  when outcomes are rendered as text.
* Measured qubits stay in the vector, projected and renormalized; callers
  are responsible for tracking which qubits are consumed.
* Gates are validated for unitarity only; the global phase is free.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from math import sqrt
from typing import Mapping, Sequence

import numpy as np

DEFAULT_WIDTH_CAP = 26
WIDTH_CAP_ENV = "TELESIM_WIDTH_CAP"

UNITARY_TOL = 1e-12
PROB_FLOOR = 1e-12


class ZeroProbabilityError(ValueError):
    """Projecting or conditioning on an outcome of (numerically) zero probability."""


def width_cap() -> int:
    """Maximum register width; override with the TELESIM_WIDTH_CAP env var."""
    raw = os.environ.get(WIDTH_CAP_ENV)
    return int(raw) if raw else DEFAULT_WIDTH_CAP


@dataclass(frozen=True, eq=False)
class Gate:
    """A 1- or 2-qubit unitary.

    The matrix is indexed with the first target qubit as the most significant
    bit. Unitarity is enforced at construction within 1e-12; determinant
    (global phase) is not constrained.
    """

    matrix: np.ndarray
    label: str | None = None

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=complex)
        if m.shape not in ((2, 2), (4, 4)):
            raise ValueError(f"gate matrix must be 2x2 or 4x4, got {m.shape}")
        dev = float(np.abs(m.conj().T @ m - np.eye(m.shape[0])).max())
        if dev > UNITARY_TOL:
            raise ValueError(
                f"matrix {self.label or ''} is not unitary (max deviation {dev:.3e})"
            )
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def arity(self) -> int:
        return 1 if self.matrix.shape[0] == 2 else 2

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Gate({self.label or f'{self.matrix.shape[0]}x{self.matrix.shape[0]}'})"


_SQ2 = 1.0 / sqrt(2.0)

I2 = Gate(np.eye(2), "I")
X = Gate(np.array([[0, 1], [1, 0]]), "X")
Y = Gate(np.array([[0, -1j], [1j, 0]]), "Y")
Z = Gate(np.array([[1, 0], [0, -1]]), "Z")
H = Gate(np.array([[1, 1], [1, -1]]) * _SQ2, "H")
S = Gate(np.array([[1, 0], [0, 1j]]), "S")
T = Gate(np.array([[1, 0], [0, np.exp(1j * np.pi / 4)]]), "T")
XZ = Gate(X.matrix @ Z.matrix, "XZ")
CNOT = Gate(
    np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]]), "CNOT"
)
CZ = Gate(np.diag([1, 1, 1, -1]), "CZ")
SWAP = Gate(
    np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]]), "SWAP"
)

# Rotates the Bell basis onto the standard basis; outcome pairs read
# 00 = Psi+, 01 = Psi-, 10 = Phi+, 11 = Phi-.
BELL_ROTATION = Gate(
    np.array(
        [[0, 1, 1, 0], [0, 1, -1, 0], [1, 0, 0, 1], [1, 0, 0, -1]], dtype=complex
    )
    * _SQ2,
    "BELL",
)

GATE_TABLE: dict[str, Gate] = {
    g.label: g for g in (I2, X, Y, Z, H, S, T, XZ, CNOT, CZ, SWAP, BELL_ROTATION)
}


def register_gate(gate: Gate) -> Gate:
    """Make a labeled gate resolvable by name (used by circuit serialization)."""
    if not gate.label:
        raise ValueError("only labeled gates can be registered")
    GATE_TABLE[gate.label] = gate
    return gate


def named_gate(name: str) -> Gate:
    try:
        return GATE_TABLE[name]
    except KeyError:
        raise KeyError(f"unknown gate name {name!r}") from None


@dataclass(eq=False)
class StateVector:
    """Pure state of ``width`` qubits as 2**width complex amplitudes."""

    width: int
    amps: np.ndarray

    def copy(self) -> "StateVector":
        return StateVector(self.width, self.amps.copy())

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))


def zero_state(width: int, *, cap: int | None = None) -> StateVector:
    """The all-zeros computational basis state on ``width`` qubits."""
    limit = width_cap() if cap is None else cap
    if not 1 <= width <= limit:
        raise ValueError(f"width {width} outside supported range [1, {limit}]")
    amps = np.zeros(1 << width, dtype=complex)
    amps[0] = 1.0
    return StateVector(width, amps)


def _check_targets(state: StateVector, targets: Sequence[int], count: int) -> None:
    if len(targets) != count:
        raise ValueError(f"expected {count} target(s), got {len(targets)}")
    if len(set(targets)) != len(targets):
        raise ValueError(f"duplicate targets {targets}")
    for t in targets:
        if not 0 <= t < state.width:
            raise ValueError(f"target {t} out of range for width {state.width}")


def apply_gate(state: StateVector, gate: Gate, targets: Sequence[int]) -> StateVector:
    """Apply ``gate`` to ``targets``; first listed target is the most
    significant bit of the gate-matrix index. Returns a new state."""
    targets = tuple(targets)
    _check_targets(state, targets, gate.arity)
    w, k = state.width, gate.arity
    psi = state.amps.reshape([2] * w)
    axes = [w - 1 - t for t in targets]
    mat = gate.matrix.reshape([2] * (2 * k))
    out = np.tensordot(mat, psi, axes=(list(range(k, 2 * k)), axes))
    out = np.moveaxis(out, list(range(k)), axes)
    return StateVector(w, np.ascontiguousarray(out).reshape(-1))


def probability_of(
    state: StateVector, qubits: Sequence[int], bits: Sequence[int]
) -> float:
    """Exact probability that the listed qubits read the given bits."""
    qubits, bits = tuple(qubits), tuple(int(b) for b in bits)
    _check_targets(state, qubits, len(qubits))
    if len(bits) != len(qubits) or any(b not in (0, 1) for b in bits):
        raise ValueError(f"bits {bits} do not match qubits {qubits}")
    w = state.width
    sl: list[object] = [slice(None)] * w
    for q, b in zip(qubits, bits):
        sl[w - 1 - q] = b
    block = state.amps.reshape([2] * w)[tuple(sl)]
    return float(np.sum(np.abs(block) ** 2))


def project(
    state: StateVector, qubits: Sequence[int], bits: Sequence[int]
) -> StateVector:
    """Project onto the given outcome and renormalize. The measured qubits
    remain in the register, pinned to their bits."""
    qubits, bits = tuple(qubits), tuple(int(b) for b in bits)
    p = probability_of(state, qubits, bits)
    if p <= PROB_FLOOR:
        raise ZeroProbabilityError(
            f"outcome {bits} on qubits {qubits} has probability {p:.3e}"
        )
    w = state.width
    sl: list[object] = [slice(None)] * w
    for q, b in zip(qubits, bits):
        sl[w - 1 - q] = b
    src = state.amps.reshape([2] * w)
    out = np.zeros_like(src)
    out[tuple(sl)] = src[tuple(sl)] / sqrt(p)
    return StateVector(w, out.reshape(-1))


def measure_standard(
    state: StateVector, qubit: int, rng: np.random.Generator
) -> tuple[int, StateVector]:
    """Born-rule sample of one qubit; returns (bit, projected state).

    One uniform draw is consumed per call. Degenerate probabilities take the
    certain branch exactly, so a zero-probability branch is never selected.
    """
    p1 = probability_of(state, (qubit,), (1,))
    u = rng.random()
    if p1 <= PROB_FLOOR:
        bit = 0
    elif p1 >= 1.0 - PROB_FLOOR:
        bit = 1
    else:
        bit = 1 if u < p1 else 0
    return bit, project(state, (qubit,), (bit,))


def measure_bell(
    state: StateVector, q1: int, q2: int, rng: np.random.Generator
) -> tuple[tuple[int, int], StateVector]:
    """Bell measurement of (q1, q2): rotate the Bell basis onto the standard
    basis, then read both qubits. Outcome pairs: 00 = Psi+, 01 = Psi-,
    10 = Phi+, 11 = Phi-. The returned state is post-rotation with both
    qubits pinned to their outcome bits."""
    if q1 == q2:
        raise ValueError("Bell measurement needs two distinct qubits")
    st = apply_gate(state, BELL_ROTATION, (q1, q2))
    b1, st = measure_standard(st, q1, rng)
    b2, st = measure_standard(st, q2, rng)
    return (b1, b2), st


def outcome_distribution(state: StateVector, qubits: Sequence[int]) -> np.ndarray:
    """Exact marginal over the listed qubits in the standard basis.

    Entry ``i`` is the probability of the outcome whose bits spell ``i`` with
    the first listed qubit as the most significant bit.
    """
    qubits = tuple(qubits)
    if not qubits:
        return np.ones(1)
    _check_targets(state, qubits, len(qubits))
    w = state.width
    probs = np.abs(state.amps.reshape([2] * w)) ** 2
    keep = [w - 1 - q for q in qubits]
    rest = [ax for ax in range(w) if ax not in set(keep)]
    probs = probs.transpose(keep + rest)
    if rest:
        probs = probs.sum(axis=tuple(range(len(keep), w)))
    return probs.reshape(-1)


def fidelity(a: StateVector, b: StateVector) -> float:
    """Squared overlap |<a|b>|**2."""
    if a.width != b.width:
        raise ValueError(f"width mismatch {a.width} != {b.width}")
    return float(abs(np.vdot(a.amps, b.amps)) ** 2)


def subvector(
    state: StateVector, keep: Sequence[int], fixed: Mapping[int, int]
) -> np.ndarray:
    """Amplitudes over ``keep`` with every other qubit pinned to ``fixed``.

    ``keep`` and ``fixed`` together must cover the register. The result is
    indexed with the first kept qubit as the most significant bit; it is not
    renormalized.
    """
    keep = tuple(keep)
    w = state.width
    if sorted(set(keep) | set(fixed)) != list(range(w)) or set(keep) & set(fixed):
        raise ValueError("keep and fixed must partition the register")
    sl: list[object] = [slice(None)] * w
    for q, b in fixed.items():
        sl[w - 1 - q] = int(b)
    block = state.amps.reshape([2] * w)[tuple(sl)]
    remaining = sorted(keep, reverse=True)  # axis order after slicing
    perm = [remaining.index(q) for q in keep]
    return np.ascontiguousarray(block.transpose(perm)).reshape(-1)
