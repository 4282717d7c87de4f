"""Gate-teleportation compiler in the Gottesman-Chuang style.

Every CNOT in a source circuit (CNOT plus arbitrary 1-qubit gates) is
replaced by a teleportation gadget: a fresh 4-qubit resource block, two Bell
measurements pairing the data qubits with block qubits 1 and 4, and a pair
of outcome-dependent Pauli corrections on the surviving block qubits 2 and 3
which then carry the data. The adaptive result uses only 1-qubit gates in
its stages; flattening with a guess string yields a circuit of depth at most
four.

Gadget Bell outcomes are encoded in the Pauli frame: the two bits of a pair
are the (X, Z) exponents of the correction owed by the teleported qubit, so
00 names the correction-free outcome (the Phi+ result) and the all-zero
guess string corresponds to identity corrections everywhere. This is the
standard-basis readout after the ``BELL_PAULI`` rotation; it differs from
the statevector module's ``BELL`` rotation only by relabelling the first bit
of each pair.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from functools import lru_cache, reduce
from typing import Sequence

import numpy as np

from . import statevector as sv
from .circuits import (
    AdaptiveCircuit,
    Circuit,
    ConstantRule,
    MeasuredGroup,
    NonadaptiveCircuit,
    PlacedGate,
    Stage,
    circuit_from_obj,
    circuit_to_obj,
    final_state,
    output_distribution,
    register_rule,
)
from .statevector import Gate

_SQ2 = 1.0 / np.sqrt(2.0)

# Rotates the Bell basis onto the standard basis with Pauli-frame outcome
# bits: 00 = Phi+, 01 = Phi-, 10 = Psi+, 11 = Psi-.
BELL_PAULI_ROTATION = sv.register_gate(
    Gate(
        np.array(
            [[1, 0, 0, 1], [1, 0, 0, -1], [0, 1, 1, 0], [0, 1, -1, 0]], dtype=complex
        )
        * _SQ2,
        "BELL_PAULI",
    )
)

# Creates Phi+ from |00>: Hadamard on the first qubit, then CNOT onto the
# second, merged into a single 2-qubit gate for the flattened form.
PAIR_GATE = sv.register_gate(
    Gate(sv.CNOT.matrix @ np.kron(sv.H.matrix, np.eye(2)), "BELL_PAIR")
)

# Reversed-control CNOT (control on the second listed target).
_CNOT_REVERSED = Gate(
    np.array([[1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0], [0, 1, 0, 0]]), "CNOT_REV"
)

PAULI_BY_BITS: dict[tuple[int, int], Gate] = {
    (0, 0): sv.I2,
    (0, 1): sv.Z,
    (1, 0): sv.X,
    (1, 1): sv.XZ,
}

CorrectionTable = dict[tuple[tuple[int, int], tuple[int, int]], tuple[Gate, Gate]]


class CorrectionSearchError(RuntimeError):
    """No Pauli correction restores the CNOT for some Bell outcome; the
    resource-state wiring is wrong."""


def _offline_cnot(orientation: str) -> Gate:
    if orientation == "forward":
        return sv.CNOT
    if orientation == "reverse":
        return _CNOT_REVERSED
    raise ValueError(f"unknown orientation {orientation!r}")


def _resource_layers(
    a1: int, a2: int, a3: int, a4: int, orientation: str
) -> list[tuple]:
    return [
        ((sv.H, (a1,)), (sv.H, (a3,))),
        ((sv.CNOT, (a1, a2)), (sv.CNOT, (a3, a4))),
        ((_offline_cnot(orientation), (a2, a3)),),
    ]


def _resource_state(orientation: str) -> np.ndarray:
    circ = Circuit(4, _resource_layers(0, 1, 2, 3, orientation))
    return final_state(circ).amps


def _spanning_inputs() -> list[np.ndarray]:
    """Basis states plus two fixed pseudo-random 2-qubit states; enough to
    single out one Pauli pair among the sixteen candidates."""
    states = [np.eye(4, dtype=complex)[i] for i in range(4)]
    rng = np.random.default_rng(7)
    for _ in range(2):
        v = rng.normal(size=4) + 1j * rng.normal(size=4)
        states.append(v / np.linalg.norm(v))
    return states


def _derive_table(orientation: str) -> CorrectionTable | None:
    """Search, per Bell outcome pair, for the unique Pauli pair (U, V) that
    makes the teleportation gadget act as a plain CNOT. Returns None when
    some outcome admits no (or no unique) correction."""
    resource = _resource_state(orientation)
    inputs = _spanning_inputs()
    # Reference outputs: CNOT with control = data qubit 0 (little-endian pair).
    refs = []
    for phi in inputs:
        st = sv.StateVector(2, phi.copy())
        refs.append(sv.apply_gate(st, sv.CNOT, (0, 1)).amps)
    table: CorrectionTable = {}
    paulis = list(PAULI_BY_BITS.items())
    for b1 in ((x, z) for x in (0, 1) for z in (0, 1)):
        for b2 in ((x, z) for x in (0, 1) for z in (0, 1)):
            survivors = []
            for (ub, ugate) in paulis:
                for (vb, vgate) in paulis:
                    survivors.append(((ub, ugate), (vb, vgate)))
            for phi, ref in zip(inputs, refs):
                # Data on qubits (0, 1); resource block on (2, 3, 4, 5).
                full = sv.StateVector(6, np.kron(resource, phi))
                full = sv.apply_gate(full, BELL_PAULI_ROTATION, (0, 2))
                full = sv.apply_gate(full, BELL_PAULI_ROTATION, (1, 5))
                proj = sv.project(full, (0, 2, 1, 5), b1 + b2)
                sub = sv.subvector(
                    proj, keep=(4, 3), fixed={0: b1[0], 2: b1[1], 1: b2[0], 5: b2[1]}
                )
                kept = []
                for cand in survivors:
                    st = sv.StateVector(2, sub.copy())
                    st = sv.apply_gate(st, cand[0][1], (0,))
                    st = sv.apply_gate(st, cand[1][1], (1,))
                    if abs(np.vdot(st.amps, ref)) ** 2 >= 1.0 - 1e-9:
                        kept.append(cand)
                survivors = kept
                if not survivors:
                    break
            if len(survivors) != 1:
                return None
            ((_, ugate), (_, vgate)) = survivors[0]
            table[(b1, b2)] = (ugate, vgate)
    return table


@lru_cache(maxsize=1)
def resolve_wiring() -> tuple[str, tuple]:
    """Fix the offline CNOT orientation inside the resource block empirically:
    keep the orientation for which all sixteen Bell outcomes admit a unique
    Pauli correction pair. The result is cached for the process."""
    for orientation in ("forward", "reverse"):
        table = _derive_table(orientation)
        if table is not None:
            return orientation, tuple(sorted(table.items()))
    raise CorrectionSearchError(
        "neither offline-CNOT orientation admits Pauli corrections for all "
        "16 Bell outcomes; resource-state wiring is inconsistent"
    )


def correction_table() -> CorrectionTable:
    """Bell outcome pair (Pauli-frame bits) -> correction gates (U, V) on the
    surviving block qubits 2 and 3. The all-zero outcome maps to (I, I)."""
    return dict(resolve_wiring()[1])


def resource_circuit() -> Circuit:
    """Three-layer fragment preparing the 4-qubit teleportation resource on
    fresh qubits 0..3 (block labels 1..4): two Phi+ pairs, then the offline
    CNOT across them in the empirically resolved orientation."""
    orientation = resolve_wiring()[0]
    return Circuit(4, _resource_layers(0, 1, 2, 3, orientation))


# ---------------------------------------------------------------------------
# Compilation


@dataclass(frozen=True)
class Gadget:
    """One teleported CNOT: its resource block (labels 1..4) and the physical
    qubits feeding the two Bell measurements."""

    block: tuple[int, int, int, int]
    control_carrier: int
    target_carrier: int


@dataclass(frozen=True, eq=False)
class TeleportedCircuit:
    """Compiled form of a source circuit: the adaptive staged circuit plus the
    plan needed to flatten it (gadgets, per-stage 1-qubit gates, and where
    the source outputs ended up)."""

    source: Circuit
    adaptive: AdaptiveCircuit
    gadgets: tuple[Gadget, ...]
    stage_gates: tuple[tuple[PlacedGate, ...], ...]
    output_carriers: tuple[int, ...]

    @property
    def width(self) -> int:
        return self.adaptive.width

    @property
    def guess_width(self) -> int:
        return 4 * len(self.gadgets)


def _is_cnot(gate: Gate) -> bool:
    return gate.arity == 2 and bool(
        np.allclose(gate.matrix, sv.CNOT.matrix, atol=1e-12)
    )


def validate_source(circuit: Circuit) -> None:
    """Source circuits may use arbitrary 1-qubit gates and CNOT only."""
    for layer in circuit.layers:
        for pg in layer:
            if pg.gate.arity == 2 and not _is_cnot(pg.gate):
                raise ValueError(
                    f"2-qubit gate {pg.gate.label or 'custom'} is not CNOT; "
                    "source circuits are restricted to CNOT + 1-qubit gates"
                )
    if not circuit.measured:
        raise ValueError("source circuit must measure at least one qubit")


def _gates_circuit(width: int, placed: Sequence[PlacedGate]) -> Circuit:
    return Circuit(width, [(pg,) for pg in placed], ())


class TeleportCorrectionRule:
    """Continuation rule of a post-gadget stage: look up the Pauli pair for
    the four preceding Bell-outcome bits, then play this stage's gates."""

    name = "teleport_correction"

    def __init__(self, width: int, u_qubit: int, v_qubit: int, tail: tuple[PlacedGate, ...]):
        self.width = width
        self.u_qubit = u_qubit
        self.v_qubit = v_qubit
        self.tail = tuple(tail)

    def __call__(self, prior: tuple[int, ...]) -> Circuit:
        if len(prior) < 4:
            raise ValueError("correction rule expects at least 4 prior outcome bits")
        x1, z1, x2, z2 = prior[-4:]
        u, v = correction_table()[((x1, z1), (x2, z2))]
        layers: list[tuple[PlacedGate, ...]] = [
            (PlacedGate(u, (self.u_qubit,)), PlacedGate(v, (self.v_qubit,)))
        ]
        layers.extend((pg,) for pg in self.tail)
        return Circuit(self.width, layers, ())

    def params(self) -> dict:
        return {
            "width": self.width,
            "u_qubit": self.u_qubit,
            "v_qubit": self.v_qubit,
            "tail": circuit_to_obj(_gates_circuit(self.width, self.tail)),
        }


def _correction_rule_from_params(params) -> TeleportCorrectionRule:
    tail_circuit = circuit_from_obj(params["tail"])
    tail = tuple(pg for layer in tail_circuit.layers for pg in layer)
    return TeleportCorrectionRule(
        int(params["width"]), int(params["u_qubit"]), int(params["v_qubit"]), tail
    )


register_rule("teleport_correction", _correction_rule_from_params)


def compile_adaptive(src: Circuit) -> TeleportedCircuit:
    """Replace each CNOT, in program order, by a teleportation gadget.

    The compiled width is source width + 4 per gadget; block qubits are
    allocated after the data qubits. Every stage circuit holds 1-qubit gates
    only; each pre-final stage measures its gadget's two Bell pairs in the
    Pauli frame; the final stage measures the carriers of the source outputs.
    """
    validate_source(src)
    carrier = {q: q for q in range(src.width)}
    gadgets: list[Gadget] = []
    stage_gates: list[list[PlacedGate]] = [[]]
    for layer in src.layers:
        for pg in layer:
            if pg.gate.arity == 1:
                stage_gates[-1].append(PlacedGate(pg.gate, (carrier[pg.targets[0]],)))
            else:
                c, t = pg.targets
                base = src.width + 4 * len(gadgets)
                gadgets.append(
                    Gadget((base, base + 1, base + 2, base + 3), carrier[c], carrier[t])
                )
                carrier[c], carrier[t] = base + 1, base + 2
                stage_gates.append([])
    width = src.width + 4 * len(gadgets)
    output_carriers = tuple(carrier[q] for q in src.measured)

    stages: list[Stage] = []
    for j in range(len(gadgets) + 1):
        tail = tuple(stage_gates[j])
        if j == 0:
            rule = ConstantRule(_gates_circuit(width, tail))
        else:
            prev = gadgets[j - 1]
            rule = TeleportCorrectionRule(width, prev.block[1], prev.block[2], tail)
        if j < len(gadgets):
            g = gadgets[j]
            measure = (
                MeasuredGroup((g.control_carrier, g.block[0]), BELL_PAULI_ROTATION),
                MeasuredGroup((g.target_carrier, g.block[3]), BELL_PAULI_ROTATION),
            )
        else:
            measure = tuple(MeasuredGroup((q,)) for q in output_carriers)
        stages.append(Stage(rule, measure))

    prelude = None
    if gadgets:
        orientation = resolve_wiring()[0]
        la, lb, lc = [], [], []
        for g in gadgets:
            a1, a2, a3, a4 = g.block
            block_layers = _resource_layers(a1, a2, a3, a4, orientation)
            la.extend(block_layers[0])
            lb.extend(block_layers[1])
            lc.extend(block_layers[2])
        prelude = Circuit(width, [la, lb, lc])

    return TeleportedCircuit(
        src,
        AdaptiveCircuit(width, tuple(stages), prelude),
        tuple(gadgets),
        tuple(tuple(gs) for gs in stage_gates),
        output_carriers,
    )


def validate_structure(tc: TeleportedCircuit, *, sample_paths: int = 4) -> None:
    """Structural checks on a compiled circuit: stages carry 1-qubit gates
    only (sampled over outcome paths), each pre-final stage measures two
    Pauli-frame Bell pairs using a fresh block's qubits 1 and 4 exactly once,
    and the prelude touches ancilla blocks only."""
    ac = tc.adaptive
    rng = np.random.default_rng(2024)
    paths = [tuple([0] * (4 * len(tc.gadgets)))]
    for _ in range(sample_paths):
        paths.append(tuple(int(b) for b in rng.integers(0, 2, 4 * len(tc.gadgets))))
    for bits in paths:
        prior: list[int] = []
        for idx, stage in enumerate(ac.stages):
            circ = stage.rule(tuple(prior))
            for layer in circ.layers:
                for pg in layer:
                    if pg.gate.arity != 1:
                        raise ValueError(
                            f"stage {idx} contains a {pg.gate.arity}-qubit gate"
                        )
            if idx < len(ac.stages) - 1:
                prior.extend(bits[4 * idx : 4 * idx + 4])
    used_blocks: set[tuple[int, ...]] = set()
    for j, g in enumerate(tc.gadgets):
        stage = ac.stages[j]
        if len(stage.measure) != 2:
            raise ValueError(f"stage {j} must hold exactly two Bell measurements")
        first, second = stage.measure
        if first.rotation is not BELL_PAULI_ROTATION or second.rotation is not BELL_PAULI_ROTATION:
            raise ValueError(f"stage {j} measurements are not Pauli-frame Bell pairs")
        if first.qubits[1] != g.block[0] or second.qubits[1] != g.block[3]:
            raise ValueError(
                f"stage {j} must pair block qubits 1 and 4 of its own fresh block"
            )
        if g.block in used_blocks:
            raise ValueError("resource block reused across gadgets")
        used_blocks.add(g.block)
    for g in ac.stages[-1].measure:
        if g.rotation is not None or g.bits != 1:
            raise ValueError("final stage must measure single qubits in the standard basis")
    if tc.gadgets:
        prelude = ac.prelude
        if prelude is None:
            raise ValueError("compiled circuit with gadgets needs a resource prelude")
        data = set(range(tc.source.width))
        for layer in prelude.layers:
            for pg in layer:
                if data & set(pg.targets):
                    raise ValueError("prelude must not touch data qubits")


# ---------------------------------------------------------------------------
# Flattening to depth <= 4


def _product(mats: Sequence[np.ndarray] | None) -> np.ndarray:
    """Compose 1-qubit matrices listed in application order."""
    if not mats:
        return np.eye(2, dtype=complex)
    return reduce(lambda acc, m: m @ acc, mats, np.eye(2, dtype=complex))


def flatten_nonadaptive(tc: TeleportedCircuit, guess: Sequence[int]) -> NonadaptiveCircuit:
    """Pack the guessed circuit into at most four time steps.

    Layer I creates the Phi+ pairs (one 2-qubit gate each) and plays the
    composite of all 1-qubit gates each original data qubit ever receives.
    Layer II applies, per gadget, a single 2-qubit gate merging the offline
    CNOT with the guess-selected corrections and with every later 1-qubit
    gate on the surviving block qubits. Layer III rotates each Bell pair into
    the Pauli frame; the final step measures guessed qubits then outputs.
    """
    bits = tuple(int(b) for b in guess)
    m = len(tc.gadgets)
    if len(bits) != 4 * m:
        raise ValueError(f"guess length {len(bits)} != {4 * m}")
    table = correction_table()
    offline = _offline_cnot(resolve_wiring()[0]).matrix

    pending: dict[int, list[np.ndarray]] = defaultdict(list)
    for j, g in enumerate(tc.gadgets):
        pair1 = (bits[4 * j], bits[4 * j + 1])
        pair2 = (bits[4 * j + 2], bits[4 * j + 3])
        u, v = table[(pair1, pair2)]
        pending[g.block[1]].append(u.matrix)
        pending[g.block[2]].append(v.matrix)
    for stage in tc.stage_gates:
        for pg in stage:
            pending[pg.targets[0]].append(pg.gate.matrix)

    layer1: list[PlacedGate] = []
    layer2: list[PlacedGate] = []
    layer3: list[PlacedGate] = []
    guess_qubits: list[int] = []
    for g in tc.gadgets:
        a1, a2, a3, a4 = g.block
        layer1.append(PlacedGate(PAIR_GATE, (a1, a2)))
        layer1.append(PlacedGate(PAIR_GATE, (a3, a4)))
        merged = np.kron(_product(pending.get(a2)), _product(pending.get(a3))) @ offline
        layer2.append(PlacedGate(Gate(merged, "TELE_MERGED"), (a2, a3)))
        layer3.append(PlacedGate(BELL_PAULI_ROTATION, (g.control_carrier, a1)))
        layer3.append(PlacedGate(BELL_PAULI_ROTATION, (g.target_carrier, a4)))
        guess_qubits.extend((g.control_carrier, a1, g.target_carrier, a4))
    for q in range(tc.source.width):
        mats = pending.get(q)
        if mats:
            layer1.append(PlacedGate(Gate(_product(mats), "MERGED_1Q"), (q,)))

    layers = [layer for layer in (layer1, layer2, layer3) if layer]
    measured = tuple(guess_qubits) + tc.output_carriers
    base = Circuit(tc.width, layers, measured)
    return NonadaptiveCircuit(base, bits, tuple(guess_qubits), tc.output_carriers)


def guess_hit_probability(nc: NonadaptiveCircuit, *, cap: int | None = None) -> float:
    """Exact probability that the deferred intermediate outcomes equal the
    guess; 2**-k for teleported circuits with k guessed bits."""
    if not nc.guess_qubits:
        return 1.0
    state = final_state(nc.base, cap=cap)
    return sv.probability_of(state, nc.guess_qubits, nc.guess)


def conditional_output_distribution(
    nc: NonadaptiveCircuit, *, cap: int | None = None
) -> np.ndarray:
    """Exact distribution of the output qubits given the guess was hit."""
    state = final_state(nc.base, cap=cap)
    if nc.guess_qubits:
        state = sv.project(state, nc.guess_qubits, nc.guess)
    if not nc.output_qubits:
        return np.ones(1)
    return sv.outcome_distribution(state, nc.output_qubits)


def source_output_distribution(tc: TeleportedCircuit) -> np.ndarray:
    """Reference distribution: direct simulation of the source circuit."""
    return output_distribution(tc.source)
