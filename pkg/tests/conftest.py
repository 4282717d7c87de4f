"""Shared helpers: independent oracles and randomized fixture builders."""

from __future__ import annotations

import numpy as np
import pytest

from telesim import statevector as sv
from telesim.circuits import Circuit


def random_state(rng: np.random.Generator, width: int) -> sv.StateVector:
    v = rng.normal(size=1 << width) + 1j * rng.normal(size=1 << width)
    return sv.StateVector(width, v / np.linalg.norm(v))


def random_unitary(rng: np.random.Generator, dim: int) -> np.ndarray:
    m = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(m)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def oracle_apply(amps: np.ndarray, matrix: np.ndarray, targets, width: int) -> np.ndarray:
    """Index-arithmetic gate application, independent of the engine's
    reshape/tensordot path. First listed target is the matrix MSB."""
    out = np.zeros_like(amps)
    m = len(targets)
    for i in range(1 << width):
        col = 0
        for t in targets:
            col = (col << 1) | ((i >> t) & 1)
        for row in range(1 << m):
            j = i
            for pos, t in enumerate(targets):
                bit = (row >> (m - 1 - pos)) & 1
                j = (j & ~(1 << t)) | (bit << t)
            out[j] += matrix[row, col] * amps[i]
    return out


ONE_QUBIT_POOL = [sv.H, sv.X, sv.Z, sv.S, sv.T]

RY = sv.Gate(
    np.array(
        [
            [np.cos(0.305), -np.sin(0.305)],
            [np.sin(0.305), np.cos(0.305)],
        ]
    ),
    "RY61",
)


def random_source_circuit(
    rng: np.random.Generator,
    max_width: int = 4,
    max_cnots: int = 5,
    gate_pool=None,
) -> Circuit:
    """Random CNOT + 1-qubit-gate circuit with a nonempty measured list."""
    pool = gate_pool if gate_pool is not None else ONE_QUBIT_POOL
    width = int(rng.integers(2, max_width + 1))
    n_layers = int(rng.integers(1, 5))
    cnots_left = int(rng.integers(0, max_cnots + 1))
    layers = []
    for _ in range(n_layers):
        free = list(range(width))
        rng.shuffle(free)
        layer = []
        while free:
            if cnots_left > 0 and len(free) >= 2 and rng.random() < 0.45:
                c, t = free.pop(), free.pop()
                layer.append((sv.CNOT, (c, t)))
                cnots_left -= 1
            elif rng.random() < 0.7:
                q = free.pop()
                layer.append((pool[int(rng.integers(len(pool)))], (q,)))
            else:
                free.pop()
        if layer:
            layers.append(layer)
    if not layers:
        layers = [[(sv.H, (0,))]]
    n_meas = int(rng.integers(1, width + 1))
    measured = list(rng.permutation(width)[:n_meas])
    return Circuit(width, layers, measured)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
