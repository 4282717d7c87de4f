"""Layered circuit model: plain circuits with a final standard measurement,
adaptive staged circuits whose gates depend on earlier outcomes, and their
nonadaptive counterparts where outcomes are replaced by a guess string and
every measurement is deferred to the end.

Depth accounting: a circuit of ``n`` gate layers has depth ``n + 1`` — the
final measurement is its own time step. Guess bits are ordered by (stage,
measurement group within the stage, bit within the group), and bit strings
render most-significant-first as text.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import statevector as sv
from .statevector import Gate, StateVector

PROB_FLOOR = sv.PROB_FLOOR


@dataclass(frozen=True, eq=False)
class PlacedGate:
    gate: Gate
    targets: tuple[int, ...]


def place(gate: Gate | str, *targets: int) -> PlacedGate:
    """Convenience constructor; accepts a Gate or a registered gate name."""
    if isinstance(gate, str):
        gate = sv.named_gate(gate)
    return PlacedGate(gate, tuple(targets))


def _as_placed(item: object) -> PlacedGate:
    if isinstance(item, PlacedGate):
        return item
    if isinstance(item, (tuple, list)) and len(item) >= 2:
        gate = item[0]
        if isinstance(gate, str):
            gate = sv.named_gate(gate)
        targets = item[1]
        if isinstance(targets, int):
            targets = tuple(int(t) for t in item[1:])
        else:
            targets = tuple(int(t) for t in targets)
        return PlacedGate(gate, targets)
    raise TypeError(f"cannot interpret {item!r} as a placed gate")


class Circuit:
    """Gate layers followed by one standard measurement of ``measured``.

    Within each layer all gate target sets must be pairwise disjoint; this is
    validated at construction and violating circuits are rejected.
    """

    __slots__ = ("width", "layers", "measured")

    def __init__(
        self,
        width: int,
        layers: Iterable[Iterable[object]] = (),
        measured: Iterable[int] = (),
    ):
        self.width = int(width)
        if self.width < 1:
            raise ValueError("circuit width must be positive")
        norm_layers = []
        for layer in layers:
            placed = tuple(_as_placed(item) for item in layer)
            used: set[int] = set()
            for pg in placed:
                if len(pg.targets) != pg.gate.arity:
                    raise ValueError(
                        f"gate {pg.gate.label} arity {pg.gate.arity} != "
                        f"{len(pg.targets)} targets"
                    )
                if len(set(pg.targets)) != len(pg.targets):
                    raise ValueError(f"duplicate targets {pg.targets}")
                for t in pg.targets:
                    if not 0 <= t < self.width:
                        raise ValueError(f"target {t} out of range")
                    if t in used:
                        raise ValueError(
                            f"layer places two gates on qubit {t}; layers must be disjoint"
                        )
                    used.add(t)
            norm_layers.append(placed)
        self.layers: tuple[tuple[PlacedGate, ...], ...] = tuple(norm_layers)
        meas = tuple(int(q) for q in measured)
        if len(set(meas)) != len(meas):
            raise ValueError(f"measured qubits {meas} are not distinct")
        for q in meas:
            if not 0 <= q < self.width:
                raise ValueError(f"measured qubit {q} out of range")
        self.measured: tuple[int, ...] = meas

    def depth(self) -> int:
        return len(self.layers) + 1

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return (
            f"Circuit(width={self.width}, layers={len(self.layers)}, "
            f"measured={list(self.measured)})"
        )


def depth(circuit: Circuit) -> int:
    """Gate-layer count plus one for the final measurement step."""
    return circuit.depth()


def apply_circuit(state: StateVector, circuit: Circuit) -> StateVector:
    """Run the gate layers (no measurement) on ``state``."""
    for layer in circuit.layers:
        for pg in layer:
            state = sv.apply_gate(state, pg.gate, pg.targets)
    return state


def final_state(circuit: Circuit, *, cap: int | None = None) -> StateVector:
    """State just before the final measurement, starting from all zeros."""
    return apply_circuit(sv.zero_state(circuit.width, cap=cap), circuit)


def output_distribution(circuit: Circuit, *, cap: int | None = None) -> np.ndarray:
    """Exact distribution of the final measurement outcomes."""
    if not circuit.measured:
        return np.ones(1)
    return sv.outcome_distribution(final_state(circuit, cap=cap), circuit.measured)


def survivors(circuit: Circuit) -> tuple[int, ...]:
    """Qubits left unmeasured by the final step, in ascending order."""
    gone = set(circuit.measured)
    return tuple(q for q in range(circuit.width) if q not in gone)


def _targets_of(layer: Sequence[PlacedGate]) -> set[int]:
    out: set[int] = set()
    for pg in layer:
        out.update(pg.targets)
    return out


def _concat_layers(
    first: Sequence[tuple[PlacedGate, ...]], second: Sequence[tuple[PlacedGate, ...]]
) -> list[tuple[PlacedGate, ...]]:
    """Concatenate layer lists, merging at the boundary when disjoint."""
    first, second = list(first), list(second)
    if first and second and not (_targets_of(first[-1]) & _targets_of(second[0])):
        return first[:-1] + [first[-1] + second[0]] + second[1:]
    return first + second


def compose(first: Circuit, second: Circuit) -> Circuit:
    """Feed the unmeasured register of ``first`` into ``second``.

    ``second``'s qubit ``j`` acts on the j-th surviving qubit of ``first`` in
    ascending index order; first's measurement is deferred to the single
    final step, so depth(result) <= depth(first) + depth(second).
    """
    surv = survivors(first)
    if second.width != len(surv):
        raise ValueError(
            f"second circuit width {second.width} != surviving register {len(surv)}"
        )
    mapped = [
        tuple(PlacedGate(pg.gate, tuple(surv[t] for t in pg.targets)) for pg in layer)
        for layer in second.layers
    ]
    layers = _concat_layers(first.layers, mapped)
    measured = first.measured + tuple(surv[q] for q in second.measured)
    return Circuit(first.width, layers, measured)


# ---------------------------------------------------------------------------
# Measurement groups and adaptive circuits


@dataclass(frozen=True, eq=False)
class MeasuredGroup:
    """One measurement unit: one or two qubits, optionally read in a rotated
    basis (the rotation is applied, then the qubits are read standard)."""

    qubits: tuple[int, ...]
    rotation: Gate | None = None

    def __post_init__(self) -> None:
        qs = tuple(int(q) for q in self.qubits)
        object.__setattr__(self, "qubits", qs)
        if not 1 <= len(qs) <= 2 or len(set(qs)) != len(qs):
            raise ValueError(f"measurement group must hold 1 or 2 distinct qubits, got {qs}")
        if self.rotation is not None and self.rotation.arity != len(qs):
            raise ValueError("rotation arity does not match group size")

    @property
    def bits(self) -> int:
        return len(self.qubits)


def group_distribution(state: StateVector, group: MeasuredGroup) -> np.ndarray:
    if group.rotation is not None:
        state = sv.apply_gate(state, group.rotation, group.qubits)
    return sv.outcome_distribution(state, group.qubits)


def _outcome_bits(outcome: int, nbits: int) -> tuple[int, ...]:
    return tuple((outcome >> (nbits - 1 - i)) & 1 for i in range(nbits))


def project_group(state: StateVector, group: MeasuredGroup, outcome: int) -> StateVector:
    if group.rotation is not None:
        state = sv.apply_gate(state, group.rotation, group.qubits)
    return sv.project(state, group.qubits, _outcome_bits(outcome, group.bits))


def measure_group(
    state: StateVector, group: MeasuredGroup, rng: np.random.Generator
) -> tuple[tuple[int, ...], StateVector]:
    if group.rotation is not None:
        state = sv.apply_gate(state, group.rotation, group.qubits)
    bits = []
    for q in group.qubits:
        b, state = sv.measure_standard(state, q, rng)
        bits.append(b)
    return tuple(bits), state


ContinuationRule = Callable[[tuple[int, ...]], Circuit]


@dataclass(frozen=True, eq=False)
class Stage:
    """One round of an adaptive computation: a rule mapping all earlier
    outcome bits to this round's gate circuit, plus this round's measurement."""

    rule: ContinuationRule
    measure: tuple[MeasuredGroup, ...]

    def __post_init__(self) -> None:
        groups = tuple(self.measure)
        object.__setattr__(self, "measure", groups)
        used: set[int] = set()
        for g in groups:
            if used & set(g.qubits):
                raise ValueError("stage measurement groups overlap")
            used.update(g.qubits)

    @property
    def bits(self) -> int:
        return sum(g.bits for g in self.measure)


@dataclass(frozen=True, eq=False)
class AdaptiveCircuit:
    """Staged circuit: every stage's gates may depend on all earlier
    measurement outcomes. The last stage's measurement is the final output;
    earlier stages produce intermediate outcomes. ``prelude`` holds gates
    preparing the initial resource state and runs once, before stage 0."""

    width: int
    stages: tuple[Stage, ...]
    prelude: Circuit | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise ValueError("adaptive circuit needs at least one stage")
        if self.prelude is not None and self.prelude.width != self.width:
            raise ValueError("prelude width mismatch")
        for st in self.stages:
            for g in st.measure:
                for q in g.qubits:
                    if not 0 <= q < self.width:
                        raise ValueError(f"measured qubit {q} out of range")

    def stage_bits(self) -> tuple[int, ...]:
        return tuple(st.bits for st in self.stages)

    def guess_width(self) -> int:
        return sum(self.stage_bits()[:-1])


@dataclass(frozen=True)
class RunTranscript:
    """Outcome record of one run: per-stage intermediate bits, final output
    bits, and (for nonadaptive runs) whether the outcomes matched the guess."""

    intermediate: tuple[tuple[int, ...], ...]
    final: tuple[int, ...]
    guess_hit: bool | None = None


def _check_stage_circuit(ac: AdaptiveCircuit, circ: Circuit, consumed: set[int]) -> None:
    if circ.width != ac.width:
        raise ValueError(
            f"continuation rule produced width {circ.width}, expected {ac.width}"
        )
    if circ.measured:
        raise ValueError("stage circuits must not carry their own measured list")
    for layer in circ.layers:
        touched = _targets_of(layer) & consumed
        if touched:
            raise ValueError(f"stage circuit acts on consumed qubits {sorted(touched)}")


def run_adaptive(
    ac: AdaptiveCircuit, rng: np.random.Generator, *, cap: int | None = None
) -> RunTranscript:
    """Execute the staged circuit, sampling each measurement and selecting
    every following stage from the outcomes observed so far."""
    state = sv.zero_state(ac.width, cap=cap)
    if ac.prelude is not None:
        state = apply_circuit(state, ac.prelude)
    consumed: set[int] = set()
    outcomes: list[tuple[int, ...]] = []
    prior: list[int] = []
    for idx, stage in enumerate(ac.stages):
        circ = stage.rule(tuple(prior))
        _check_stage_circuit(ac, circ, consumed)
        state = apply_circuit(state, circ)
        bits: list[int] = []
        for group in stage.measure:
            if set(group.qubits) & consumed:
                raise ValueError("measurement group touches a consumed qubit")
            got, state = measure_group(state, group, rng)
            bits.extend(got)
            consumed.update(group.qubits)
        outcomes.append(tuple(bits))
        if idx < len(ac.stages) - 1:
            prior.extend(bits)
    return RunTranscript(tuple(outcomes[:-1]), outcomes[-1], None)


@dataclass(frozen=True, eq=False)
class NonadaptiveCircuit:
    """A flattened adaptive circuit: outcome dependence replaced by ``guess``,
    all measurements moved to the single final step. ``base.measured`` lists
    the guessed (intermediate) qubits first, then the output qubits."""

    base: Circuit
    guess: tuple[int, ...]
    guess_qubits: tuple[int, ...]
    output_qubits: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "guess", tuple(int(b) for b in self.guess))
        object.__setattr__(self, "guess_qubits", tuple(self.guess_qubits))
        object.__setattr__(self, "output_qubits", tuple(self.output_qubits))
        if len(self.guess) != len(self.guess_qubits):
            raise ValueError("guess length != number of guessed bits")
        if self.base.measured != self.guess_qubits + self.output_qubits:
            raise ValueError("base.measured must list guess qubits then outputs")


def deferred_prefix(
    ac: AdaptiveCircuit,
    stage_outcomes: Sequence[tuple[int, ...]],
    upto: int,
) -> tuple[Circuit, tuple[tuple[MeasuredGroup, ...], ...]]:
    """Stages 0..upto with gates fixed by ``stage_outcomes`` (outcomes of
    stages < upto) and every measurement deferred to the end.

    Returns the deferred circuit plus the per-stage measurement groups, in
    canonical order. Basis rotations of rotated groups are appended as a
    final gate layer; they commute past later stages because later stages
    never touch consumed qubits.
    """
    if not 0 <= upto < len(ac.stages):
        raise ValueError(f"stage index {upto} out of range")
    if len(stage_outcomes) < upto:
        raise ValueError("missing outcomes for earlier stages")
    layers: list[tuple[PlacedGate, ...]] = list(
        ac.prelude.layers if ac.prelude is not None else ()
    )
    consumed: set[int] = set()
    prior: list[int] = []
    stage_groups: list[tuple[MeasuredGroup, ...]] = []
    for idx in range(upto + 1):
        stage = ac.stages[idx]
        circ = stage.rule(tuple(prior))
        _check_stage_circuit(ac, circ, consumed)
        layers = _concat_layers(layers, circ.layers)
        for g in stage.measure:
            if set(g.qubits) & consumed:
                raise ValueError("measurement group touches a consumed qubit")
            consumed.update(g.qubits)
        stage_groups.append(stage.measure)
        if idx < upto:
            bits = tuple(int(b) for b in stage_outcomes[idx])
            if len(bits) != stage.bits:
                raise ValueError(f"stage {idx} expects {stage.bits} outcome bits")
            prior.extend(bits)
    rotations = tuple(
        PlacedGate(g.rotation, g.qubits)
        for groups in stage_groups
        for g in groups
        if g.rotation is not None
    )
    if rotations:
        layers = layers + [rotations]
    measured = tuple(q for groups in stage_groups for g in groups for q in g.qubits)
    return Circuit(ac.width, layers, measured), tuple(stage_groups)


def _split_guess(ac: AdaptiveCircuit, guess: Sequence[int]) -> list[tuple[int, ...]]:
    bits = tuple(int(b) for b in guess)
    if len(bits) != ac.guess_width():
        raise ValueError(
            f"guess length {len(bits)} != expected {ac.guess_width()} bits"
        )
    out, cursor = [], 0
    for nb in ac.stage_bits()[:-1]:
        out.append(bits[cursor : cursor + nb])
        cursor += nb
    return out


def flatten(ac: AdaptiveCircuit, guess: Sequence[int]) -> NonadaptiveCircuit:
    """Nonadaptive counterpart for one guess string: stage gates are selected
    by the guessed bits and all measurements land in the final step."""
    per_stage = _split_guess(ac, guess)
    circuit, stage_groups = deferred_prefix(ac, per_stage, len(ac.stages) - 1)
    k = ac.guess_width()
    return NonadaptiveCircuit(
        circuit,
        tuple(int(b) for b in guess),
        circuit.measured[:k],
        circuit.measured[k:],
    )


def run_nonadaptive(
    nc: NonadaptiveCircuit, rng: np.random.Generator, *, cap: int | None = None
) -> RunTranscript:
    """Run the deferred circuit, read every measured qubit, and flag whether
    the intermediate outcomes hit the guess."""
    state = final_state(nc.base, cap=cap)
    bits: list[int] = []
    for q in nc.base.measured:
        b, state = sv.measure_standard(state, q, rng)
        bits.append(b)
    k = len(nc.guess_qubits)
    y, out = tuple(bits[:k]), tuple(bits[k:])
    return RunTranscript((y,), out, y == nc.guess)


# ---------------------------------------------------------------------------
# Exhaustive path enumeration


@dataclass(frozen=True)
class PathEntry:
    """One intermediate-outcome path: its flattened bits, its probability, and
    the exact final-output distribution conditioned on it."""

    path: tuple[int, ...]
    probability: float
    final_distribution: np.ndarray


def _stage_rotated(state: StateVector, stage: Stage) -> tuple[StateVector, tuple[int, ...]]:
    for g in stage.measure:
        if g.rotation is not None:
            state = sv.apply_gate(state, g.rotation, g.qubits)
    qubits = tuple(q for g in stage.measure for q in g.qubits)
    return state, qubits


def enumerate_outcome_tree(
    ac: AdaptiveCircuit, *, cap_bits: int = 20, cap: int | None = None
) -> list[PathEntry]:
    """Exhaustively enumerate every intermediate outcome path with its exact
    probability and conditional final distribution. Paths of probability
    below the floor (1e-12) are pruned; the rest sum to 1."""
    total = sum(ac.stage_bits())
    if total > cap_bits:
        raise ValueError(f"{total} outcome bits exceed enumeration cap {cap_bits}")
    entries: list[PathEntry] = []
    last = len(ac.stages) - 1

    def recurse(
        state: StateVector,
        consumed: set[int],
        idx: int,
        prior: tuple[int, ...],
        path: tuple[int, ...],
        prob: float,
    ) -> None:
        stage = ac.stages[idx]
        circ = stage.rule(prior)
        _check_stage_circuit(ac, circ, consumed)
        state = apply_circuit(state, circ)
        state, qubits = _stage_rotated(state, stage)
        if idx == last:
            dist = (
                sv.outcome_distribution(state, qubits) if qubits else np.ones(1)
            )
            entries.append(PathEntry(path, prob, dist))
            return
        dist = sv.outcome_distribution(state, qubits)
        for outcome, p in enumerate(dist):
            if p <= PROB_FLOOR:
                continue
            bits = _outcome_bits(outcome, len(qubits))
            child = sv.project(state, qubits, bits)
            recurse(
                child,
                consumed | set(qubits),
                idx + 1,
                prior + bits,
                path + bits,
                prob * float(p),
            )

    init = sv.zero_state(ac.width, cap=cap)
    if ac.prelude is not None:
        init = apply_circuit(init, ac.prelude)
    recurse(init, set(), 0, (), (), 1.0)
    return entries


def has_fix_property(
    ac: AdaptiveCircuit, *, tol: float = 1e-10, cap_bits: int = 20
) -> bool:
    """True when the final-output distribution is identical across every
    intermediate outcome path (within ``tol``)."""
    entries = enumerate_outcome_tree(ac, cap_bits=cap_bits)
    ref = max(entries, key=lambda e: e.probability).final_distribution
    return all(
        float(np.abs(e.final_distribution - ref).max()) <= tol for e in entries
    )


# ---------------------------------------------------------------------------
# Bit-string text form and JSON serialization


def bits_to_text(bits: Sequence[int]) -> str:
    """Most-significant-first rendering; bits[0] is the leftmost character."""
    return "".join("1" if int(b) else "0" for b in bits)


def text_to_bits(text: str) -> tuple[int, ...]:
    if any(c not in "01" for c in text):
        raise ValueError(f"bit string {text!r} must be over 0/1")
    return tuple(1 if c == "1" else 0 for c in text)


def _gate_to_obj(gate: Gate) -> dict:
    if gate.label and gate.label in sv.GATE_TABLE:
        table = sv.GATE_TABLE[gate.label]
        if table.matrix.shape == gate.matrix.shape and np.allclose(
            table.matrix, gate.matrix, atol=1e-15
        ):
            return {"gate": gate.label}
    obj: dict = {
        "gate": "matrix",
        "matrix": [[float(z.real), float(z.imag)] for z in gate.matrix.reshape(-1)],
    }
    if gate.label:
        obj["label"] = gate.label
    return obj


def _gate_from_obj(obj: Mapping) -> Gate:
    name = obj["gate"]
    if name != "matrix":
        return sv.named_gate(name)
    flat = obj["matrix"]
    dim = int(round(len(flat) ** 0.5))
    if dim * dim != len(flat) or dim not in (2, 4):
        raise ValueError(f"matrix entry count {len(flat)} is not 4 or 16")
    mat = np.array([complex(re, im) for re, im in flat]).reshape(dim, dim)
    return Gate(mat, obj.get("label"))


def circuit_to_obj(circuit: Circuit) -> dict:
    return {
        "width": circuit.width,
        "layers": [
            [dict(_gate_to_obj(pg.gate), targets=list(pg.targets)) for pg in layer]
            for layer in circuit.layers
        ],
        "measured": list(circuit.measured),
    }


def circuit_from_obj(obj: Mapping) -> Circuit:
    layers = [
        [PlacedGate(_gate_from_obj(g), tuple(g["targets"])) for g in layer]
        for layer in obj.get("layers", [])
    ]
    return Circuit(int(obj["width"]), layers, obj.get("measured", []))


def circuit_to_json(circuit: Circuit) -> str:
    return json.dumps(circuit_to_obj(circuit), sort_keys=True)


def circuit_from_json(text: str) -> Circuit:
    return circuit_from_obj(json.loads(text))


def nonadaptive_to_obj(nc: NonadaptiveCircuit) -> dict:
    obj = circuit_to_obj(nc.base)
    obj["guess"] = bits_to_text(nc.guess)
    obj["guess_qubits"] = list(nc.guess_qubits)
    obj["output_qubits"] = list(nc.output_qubits)
    return obj


def nonadaptive_from_obj(obj: Mapping) -> NonadaptiveCircuit:
    return NonadaptiveCircuit(
        circuit_from_obj(obj),
        text_to_bits(obj["guess"]),
        tuple(obj["guess_qubits"]),
        tuple(obj["output_qubits"]),
    )


# Continuation-rule registry: rules serialized by name + parameters. A rule
# object must expose .name and .params() to be serializable.

RULE_REGISTRY: dict[str, Callable[[Mapping], ContinuationRule]] = {}


def register_rule(name: str, factory: Callable[[Mapping], ContinuationRule]) -> None:
    RULE_REGISTRY[name] = factory


class ConstantRule:
    """Continuation rule that ignores outcomes and returns a fixed circuit."""

    name = "constant"

    def __init__(self, circuit: Circuit):
        self.circuit = circuit

    def __call__(self, prior: tuple[int, ...]) -> Circuit:
        return self.circuit

    def params(self) -> dict:
        return {"circuit": circuit_to_obj(self.circuit)}


register_rule("constant", lambda params: ConstantRule(circuit_from_obj(params["circuit"])))


def _group_to_obj(group: MeasuredGroup) -> dict:
    return {
        "qubits": list(group.qubits),
        "rotation": None if group.rotation is None else _gate_to_obj(group.rotation),
    }


def _group_from_obj(obj: Mapping) -> MeasuredGroup:
    rot = obj.get("rotation")
    return MeasuredGroup(
        tuple(obj["qubits"]), None if rot is None else _gate_from_obj(rot)
    )


def adaptive_to_obj(ac: AdaptiveCircuit) -> dict:
    rounds = []
    for st in ac.stages:
        rule = st.rule
        name = getattr(rule, "name", None)
        if name is None or name not in RULE_REGISTRY:
            raise ValueError(
                "stage rule is not registered for serialization; give it a "
                ".name present in RULE_REGISTRY and a .params() method"
            )
        rounds.append(
            {
                "rule": {"name": name, "params": rule.params()},
                "measure": [_group_to_obj(g) for g in st.measure],
            }
        )
    return {
        "width": ac.width,
        "prelude": None if ac.prelude is None else circuit_to_obj(ac.prelude),
        "rounds": rounds,
    }


def adaptive_from_obj(obj: Mapping) -> AdaptiveCircuit:
    stages = []
    for rnd in obj["rounds"]:
        spec = rnd["rule"]
        try:
            factory = RULE_REGISTRY[spec["name"]]
        except KeyError:
            raise KeyError(
                f"continuation rule {spec['name']!r} is not in the rule registry"
            ) from None
        stages.append(
            Stage(factory(spec["params"]), tuple(_group_from_obj(g) for g in rnd["measure"]))
        )
    prelude = obj.get("prelude")
    return AdaptiveCircuit(
        int(obj["width"]),
        tuple(stages),
        None if prelude is None else circuit_from_obj(prelude),
    )
