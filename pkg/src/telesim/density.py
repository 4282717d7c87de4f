"""Conditional-probability oracles and the samplers built on them.

A density oracle answers p(outcome of group i | fixed outcomes of any other
groups) for a partition of a circuit's final measurement into groups of at
most two qubits. Provided here: an exact brute-force oracle backed by the
statevector engine, a blockwise oracle for depth-three circuits that never
materializes more than a 4-qubit amplitude object, the staged reduction that
samples an adaptive circuit through oracles for its fixed nonadaptive
prefixes, the shortcut oracle for adaptive circuits whose output law ignores
intermediate outcomes, and coin-driven deterministic simulations with a
relative-accuracy contract.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import statevector as sv
from .circuits import (
    AdaptiveCircuit,
    Circuit,
    MeasuredGroup,
    PathEntry,
    RunTranscript,
    deferred_prefix,
    depth,
    final_state,
    has_fix_property,
    output_distribution,
)
from .statevector import Gate, StateVector, ZeroProbabilityError

PROB_FLOOR = sv.PROB_FLOOR

BLOCK_ENTRY_LIMIT = 16  # 4 qubits of amplitudes, the depth-3 invariant


class DepthError(ValueError):
    """Circuit depth outside what the specialized simulator supports."""


class FixPropertyError(ValueError):
    """The adaptive circuit's output law depends on intermediate outcomes."""


class MeasurementPartition:
    """Ordered disjoint qubit groups (each of size one or two) that cover the
    measured qubits of the circuit they are used with."""

    __slots__ = ("groups",)

    def __init__(self, groups: Sequence[Sequence[int]]):
        norm = tuple(tuple(int(q) for q in g) for g in groups)
        seen: set[int] = set()
        for g in norm:
            if not 1 <= len(g) <= 2:
                raise ValueError(f"group {g} must hold one or two qubits")
            for q in g:
                if q < 0:
                    raise ValueError(f"negative qubit index {q}")
                if q in seen:
                    raise ValueError(f"qubit {q} appears in two groups")
                seen.add(q)
        self.groups: tuple[tuple[int, ...], ...] = norm

    def __len__(self) -> int:
        return len(self.groups)

    def __iter__(self):
        return iter(self.groups)

    def outcomes(self, index: int) -> int:
        return 1 << len(self.groups[index])

    def qubits(self) -> tuple[int, ...]:
        return tuple(q for g in self.groups for q in g)


def partition_for(
    circuit: Circuit, groups: Sequence[Sequence[int]] | None = None
) -> MeasurementPartition:
    """Default partition: singleton groups in measured order. A custom
    grouping must cover every measured qubit."""
    if groups is None:
        return MeasurementPartition(tuple((q,) for q in circuit.measured))
    part = MeasurementPartition(groups)
    missing = set(circuit.measured) - set(part.qubits())
    if missing:
        raise ValueError(f"groups do not cover measured qubits {sorted(missing)}")
    return part


def _bits_of(outcome: int, nbits: int) -> tuple[int, ...]:
    return tuple((outcome >> (nbits - 1 - i)) & 1 for i in range(nbits))


class DensityOracle:
    """Interface: cond_prob(i, fixed) -> distribution over group i's outcomes
    given the outcomes pinned in ``fixed`` (a mapping group index -> outcome)."""

    partition: MeasurementPartition

    def cond_prob(self, index: int, fixed: Mapping[int, int] | None = None) -> np.ndarray:
        raise NotImplementedError


class BruteForceOracle(DensityOracle):
    """Exact oracle from the full statevector; the ground truth at desk scale."""

    def __init__(self, circuit: Circuit, partition: MeasurementPartition, *, cap: int | None = None):
        self.partition = partition
        self._state = final_state(circuit, cap=cap)

    def cond_prob(self, index: int, fixed: Mapping[int, int] | None = None) -> np.ndarray:
        fixed = dict(fixed or {})
        if index in fixed:
            raise ValueError(f"group {index} is already fixed")
        qubits_f: list[int] = []
        bits_f: list[int] = []
        for j, outcome in fixed.items():
            g = self.partition.groups[j]
            qubits_f.extend(g)
            bits_f.extend(_bits_of(outcome, len(g)))
        p_fixed = (
            sv.probability_of(self._state, qubits_f, bits_f) if fixed else 1.0
        )
        if p_fixed <= PROB_FLOOR:
            raise ZeroProbabilityError(
                f"conditioning event {fixed} has probability {p_fixed:.3e}"
            )
        group = self.partition.groups[index]
        dist = np.empty(1 << len(group))
        for o in range(dist.size):
            dist[o] = sv.probability_of(
                self._state,
                qubits_f + list(group),
                bits_f + list(_bits_of(o, len(group))),
            )
        return dist / p_fixed


def brute_force_oracle(
    circuit: Circuit,
    partition: MeasurementPartition | None = None,
    *,
    cap: int | None = None,
) -> BruteForceOracle:
    """Exact conditional probabilities from projected statevectors."""
    if partition is None:
        partition = partition_for(circuit)
    return BruteForceOracle(circuit, partition, cap=cap)


def _sample_index(dist: np.ndarray, rng: np.random.Generator) -> int:
    u = rng.random()
    acc = 0.0
    last = 0
    for i, p in enumerate(dist):
        if p <= 0.0:
            continue
        acc += float(p)
        last = i
        if u < acc:
            return i
    return last


def sample_via_density(
    oracle: DensityOracle, rng: np.random.Generator
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Sample the full outcome by fixing groups sequentially, conditioning
    each on everything already fixed. One cond_prob call per group, so at
    most (group count) x (outcomes per group) conditional probabilities are
    evaluated. Returns (flat bits, per-group outcomes)."""
    fixed: dict[int, int] = {}
    for i in range(len(oracle.partition)):
        dist = oracle.cond_prob(i, fixed)
        fixed[i] = _sample_index(dist, rng)
    bits: list[int] = []
    for i, g in enumerate(oracle.partition.groups):
        bits.extend(_bits_of(fixed[i], len(g)))
    return tuple(bits), tuple(fixed[i] for i in range(len(oracle.partition)))


def implied_joint(
    oracle: DensityOracle, order: Sequence[int] | None = None
) -> dict[tuple[int, ...], float]:
    """Joint distribution implied by chain-ruling the oracle in the given
    group order (keys are per-group outcomes in group-index order)."""
    n = len(oracle.partition)
    visit = tuple(order) if order is not None else tuple(range(n))
    if sorted(visit) != list(range(n)):
        raise ValueError("order must be a permutation of the group indices")
    out: dict[tuple[int, ...], float] = {}

    def recurse(pos: int, fixed: dict[int, int], acc: float) -> None:
        if pos == n:
            out[tuple(fixed[i] for i in range(n))] = acc
            return
        i = visit[pos]
        dist = oracle.cond_prob(i, fixed)
        for o, p in enumerate(dist):
            if p <= PROB_FLOOR:
                continue
            fixed[i] = o
            recurse(pos + 1, fixed, acc * float(p))
            del fixed[i]

    recurse(0, {}, 1.0)
    return out


# ---------------------------------------------------------------------------
# Depth-3 blockwise oracle


@dataclass
class _Block:
    qubits: tuple[int, ...]
    amps: np.ndarray  # 2**len(qubits) entries; first listed qubit = MSB


def _apply_small(amps: np.ndarray, nqubits: int, matrix: np.ndarray, positions: Sequence[int]) -> np.ndarray:
    arity = len(positions)
    psi = amps.reshape([2] * nqubits)
    mat = matrix.reshape([2] * (2 * arity))
    out = np.tensordot(mat, psi, axes=(list(range(arity, 2 * arity)), list(positions)))
    out = np.moveaxis(out, list(range(arity)), list(positions))
    return np.ascontiguousarray(out).reshape(-1)


class BlockState:
    """Product-form register: disjoint blocks of at most two live qubits,
    transiently four inside a measurement step. Exceeding 16 amplitude
    entries in any merged object is a hard error."""

    def __init__(self, width: int):
        self.width = width
        self._next = 0
        self.blocks: dict[int, _Block] = {}
        self.where: dict[int, int] = {}
        self.peak_entries = 2
        for q in range(width):
            self._add(_Block((q,), np.array([1.0 + 0j, 0.0 + 0j])))

    def _add(self, block: _Block) -> int:
        bid = self._next
        self._next += 1
        self.blocks[bid] = block
        for q in block.qubits:
            self.where[q] = bid
        return bid

    def _merge(self, qubits: Sequence[int]) -> tuple[int, _Block]:
        ids: list[int] = []
        for q in qubits:
            bid = self.where[q]
            if bid not in ids:
                ids.append(bid)
        parts = [self.blocks[b] for b in ids]
        merged = parts[0]
        for extra in parts[1:]:
            merged = _Block(
                merged.qubits + extra.qubits, np.kron(merged.amps, extra.amps)
            )
        if merged.amps.size > BLOCK_ENTRY_LIMIT:
            raise RuntimeError(
                f"merged amplitude object of {merged.amps.size} entries exceeds "
                f"the {BLOCK_ENTRY_LIMIT}-entry bound"
            )
        self.peak_entries = max(self.peak_entries, merged.amps.size)
        for b in ids:
            del self.blocks[b]
        bid = self._add(merged)
        return bid, merged

    def apply_gate(self, gate: Gate, targets: Sequence[int]) -> None:
        bid, block = self._merge(targets)
        positions = [block.qubits.index(t) for t in targets]
        block.amps = _apply_small(block.amps, len(block.qubits), gate.matrix, positions)

    def distribution(self, qubits: Sequence[int]) -> np.ndarray:
        _, block = self._merge(qubits)
        k = len(block.qubits)
        probs = np.abs(block.amps.reshape([2] * k)) ** 2
        keep = [block.qubits.index(q) for q in qubits]
        rest = [ax for ax in range(k) if ax not in set(keep)]
        probs = probs.transpose(keep + rest)
        if rest:
            probs = probs.sum(axis=tuple(range(len(keep), k)))
        return probs.reshape(-1)

    def project(self, qubits: Sequence[int], bits: Sequence[int]) -> None:
        bid, block = self._merge(qubits)
        k = len(block.qubits)
        sl: list[object] = [slice(None)] * k
        for q, b in zip(qubits, bits):
            sl[block.qubits.index(q)] = int(b)
        picked = block.amps.reshape([2] * k)[tuple(sl)]
        p = float(np.sum(np.abs(picked) ** 2))
        if p <= PROB_FLOOR:
            raise ZeroProbabilityError(
                f"outcome {tuple(bits)} on qubits {tuple(qubits)} has probability {p:.3e}"
            )
        residual = tuple(q for q in block.qubits if q not in set(qubits))
        del self.blocks[bid]
        for q in qubits:
            del self.where[q]
        if residual:
            self._add(_Block(residual, np.ascontiguousarray(picked).reshape(-1) / np.sqrt(p)))


@dataclass(frozen=True)
class _Unit:
    """One merged second-step measurement: an optional rotation gate followed
    by a standard read of its qubits."""

    qubits: tuple[int, ...]
    gate: Gate | None


class Depth3Oracle(DensityOracle):
    """Density oracle for circuits of depth at most three.

    The first gate layer turns the all-zeros state into 1- and 2-qubit
    blocks; the second layer is merged with the final measurement into
    2-qubit-basis measurement units covering every qubit. Each conditional
    query replays the block evolution: fixed units are performed and
    projected (any order; the projections commute), unperformed units are
    simply skipped, which marginalizes them exactly. Unrequested bits exist
    in the unit outcomes and are discarded by the caller.
    """

    def __init__(self, circuit: Circuit):
        if depth(circuit) > 3:
            raise DepthError(f"depth {depth(circuit)} circuit; this oracle handles depth <= 3")
        self._circuit = circuit
        self._layer1 = circuit.layers[0] if circuit.layers else ()
        layer2 = circuit.layers[1] if len(circuit.layers) > 1 else ()
        units: list[_Unit] = []
        seen: set[int] = set()
        for pg in layer2:
            units.append(_Unit(pg.targets, pg.gate))
            seen.update(pg.targets)
        for q in range(circuit.width):
            if q not in seen:
                units.append(_Unit((q,), None))
        self.units: tuple[_Unit, ...] = tuple(units)
        self.partition = MeasurementPartition(tuple(u.qubits for u in units))
        self.requested = circuit.measured
        self.peak_amplitude_entries = 0

    def _fresh(self) -> BlockState:
        bs = BlockState(self._circuit.width)
        for pg in self._layer1:
            bs.apply_gate(pg.gate, pg.targets)
        return bs

    def _perform(self, bs: BlockState, unit: _Unit, outcome: int) -> None:
        if unit.gate is not None:
            bs.apply_gate(unit.gate, unit.qubits)
        bs.project(unit.qubits, _bits_of(outcome, len(unit.qubits)))

    def cond_prob(self, index: int, fixed: Mapping[int, int] | None = None) -> np.ndarray:
        fixed = dict(fixed or {})
        if index in fixed:
            raise ValueError(f"group {index} is already fixed")
        bs = self._fresh()
        for j in sorted(fixed):
            self._perform(bs, self.units[j], fixed[j])
        unit = self.units[index]
        if unit.gate is not None:
            bs.apply_gate(unit.gate, unit.qubits)
        dist = bs.distribution(unit.qubits)
        self.peak_amplitude_entries = max(self.peak_amplitude_entries, bs.peak_entries)
        return dist


def depth3_oracle(circuit: Circuit) -> Depth3Oracle:
    """Blockwise density oracle for a depth-<=3 circuit; its partition is the
    full set of measurement units (every qubit measured once)."""
    return Depth3Oracle(circuit)


# ---------------------------------------------------------------------------
# Staged simulation of adaptive circuits through nonadaptive-prefix oracles

# factory(prefix_circuit, partition, guess_bits_fixed_so_far) -> DensityOracle
OracleFactory = Callable[[Circuit, MeasurementPartition, tuple[int, ...]], DensityOracle]


def default_factory(
    circuit: Circuit, partition: MeasurementPartition, guess: tuple[int, ...]
) -> DensityOracle:
    return brute_force_oracle(circuit, partition)


def _prefix_oracle(
    ac: AdaptiveCircuit, chosen: list[tuple[int, ...]], upto: int, factory: OracleFactory
) -> tuple[DensityOracle, list[tuple[MeasuredGroup, ...]], dict[int, int]]:
    circuit, stage_groups = deferred_prefix(ac, chosen, upto)
    partition = MeasurementPartition(
        tuple(g.qubits for groups in stage_groups for g in groups)
    )
    guess_bits = tuple(b for stage in chosen for b in stage)
    oracle = factory(circuit, partition, guess_bits)
    fixed: dict[int, int] = {}
    gidx = 0
    for stage_idx, groups in enumerate(stage_groups[:-1]):
        bits = list(chosen[stage_idx])
        for g in groups:
            take, bits = bits[: g.bits], bits[g.bits :]
            fixed[gidx] = int("".join(str(b) for b in take), 2)
            gidx += 1
    return oracle, list(stage_groups), fixed


def adaptive_from_nonadaptive(
    ac: AdaptiveCircuit, factory: OracleFactory, rng: np.random.Generator
) -> RunTranscript:
    """Sample an adaptive circuit using only oracles for fixed nonadaptive
    prefixes: stage i's outcome is drawn from the oracle of the prefix fixed
    by the outcomes sampled so far (guess = those outcomes, measurements
    deferred to the end), conditioned on all earlier stage outcomes."""
    chosen: list[tuple[int, ...]] = []
    for i in range(len(ac.stages)):
        oracle, stage_groups, fixed = _prefix_oracle(ac, chosen, i, factory)
        offset = sum(len(groups) for groups in stage_groups[:-1])
        bits: list[int] = []
        for j, g in enumerate(stage_groups[-1]):
            dist = oracle.cond_prob(offset + j, fixed)
            o = _sample_index(dist, rng)
            fixed[offset + j] = o
            bits.extend(_bits_of(o, g.bits))
        chosen.append(tuple(bits))
    return RunTranscript(tuple(chosen[:-1]), chosen[-1], None)


def staged_joint(ac: AdaptiveCircuit, factory: OracleFactory) -> list[PathEntry]:
    """Exact joint implied by the staged reduction: enumerate every outcome
    path, computing each stage's conditional distribution through the prefix
    oracles instead of the raw statevector. Comparable entry-for-entry with
    enumerate_outcome_tree."""
    entries: list[PathEntry] = []

    def recurse(chosen: list[tuple[int, ...]], prob: float) -> None:
        i = len(chosen)
        oracle, stage_groups, fixed = _prefix_oracle(ac, chosen, i, factory)
        offset = sum(len(groups) for groups in stage_groups[:-1])
        last_groups = stage_groups[-1]

        def stage_rec(j: int, bits: tuple[int, ...], acc: float, fx: dict[int, int]) -> None:
            if j == len(last_groups):
                recurse(chosen + [bits], prob * acc)
                return
            dist = oracle.cond_prob(offset + j, fx)
            for o, p in enumerate(dist):
                if p <= PROB_FLOOR:
                    continue
                stage_rec(
                    j + 1,
                    bits + _bits_of(o, last_groups[j].bits),
                    acc * float(p),
                    {**fx, offset + j: o},
                )

        if i == len(ac.stages) - 1:
            nbits = sum(g.bits for g in last_groups)
            dist = np.zeros(1 << nbits)

            def final_rec(j: int, bits: tuple[int, ...], acc: float, fx: dict[int, int]) -> None:
                if j == len(last_groups):
                    idx = 0
                    for b in bits:
                        idx = (idx << 1) | b
                    dist[idx] = acc
                    return
                d = oracle.cond_prob(offset + j, fx)
                for o, p in enumerate(d):
                    if p <= PROB_FLOOR:
                        continue
                    final_rec(
                        j + 1,
                        bits + _bits_of(o, last_groups[j].bits),
                        acc * float(p),
                        {**fx, offset + j: o},
                    )

            final_rec(0, (), 1.0, fixed)
            path = tuple(b for stage in chosen for b in stage)
            entries.append(PathEntry(path, prob, dist))
        else:
            stage_rec(0, (), 1.0, fixed)

    recurse([], 1.0)
    return entries


def fixed_circuit_density(
    ac: AdaptiveCircuit,
    guess: Sequence[int],
    factory: OracleFactory = default_factory,
    *,
    tol: float = 1e-9,
    cap_bits: int = 20,
) -> DensityOracle:
    """Output-density oracle for an adaptive circuit whose final-output law
    does not depend on intermediate outcomes: use the nonadaptive circuit for
    any one guess, with the intermediate groups pinned to that guess. Raises
    FixPropertyError when the precondition fails."""
    if not has_fix_property(ac, tol=tol, cap_bits=cap_bits):
        raise FixPropertyError(
            "final-output distribution varies across intermediate outcome paths"
        )
    bits = tuple(int(b) for b in guess)
    per_stage: list[tuple[int, ...]] = []
    cursor = 0
    for nb in ac.stage_bits()[:-1]:
        per_stage.append(bits[cursor : cursor + nb])
        cursor += nb
    if cursor != len(bits):
        raise ValueError(f"guess length {len(bits)} != expected {cursor}")
    oracle, stage_groups, pinned = _prefix_oracle(
        ac, per_stage, len(ac.stages) - 1, factory
    )
    offset = sum(len(groups) for groups in stage_groups[:-1])
    final_groups = stage_groups[-1]

    class _OutputOracle(DensityOracle):
        def __init__(self) -> None:
            self.partition = MeasurementPartition(tuple(g.qubits for g in final_groups))

        def cond_prob(self, index: int, fixed: Mapping[int, int] | None = None) -> np.ndarray:
            shifted = {offset + j: o for j, o in (fixed or {}).items()}
            return oracle.cond_prob(offset + index, {**pinned, **shifted})

    return _OutputOracle()


# ---------------------------------------------------------------------------
# Coin-driven deterministic simulation


@dataclass(frozen=True, eq=False)
class SimulationSpec:
    """Deterministic map from coin strings to outcomes realizing a circuit's
    output law with relative error at most ``epsilon``: outcome b receives
    N(b) of the 2**coin_width coins with |N(b)/2**r - p(b)| <= epsilon*p(b)."""

    coin_width: int
    outcomes: tuple[tuple[int, ...], ...]
    probabilities: np.ndarray
    counts: np.ndarray
    epsilon: float
    boundaries: np.ndarray  # cumulative coin counts, one entry per outcome

    def outcome_of(self, coin: int) -> tuple[int, ...]:
        """Outcome bits assigned to one coin string (an integer below 2**r)."""
        if not 0 <= coin < (1 << self.coin_width):
            raise ValueError(f"coin {coin} outside [0, 2**{self.coin_width})")
        idx = int(np.searchsorted(self.boundaries, coin, side="right"))
        return self.outcomes[idx]


def _apportion(probs: np.ndarray, coin_width: int) -> np.ndarray:
    """Largest-remainder apportionment of 2**coin_width coins; ties broken by
    outcome index ascending. An outcome of positive probability receiving no
    coins means the coin width is too small for the relative-error contract."""
    total = 1 << coin_width
    scaled = probs * float(total)
    base = np.floor(scaled + 1e-12).astype(np.int64)
    remainder = scaled - base
    leftover = int(total - base.sum())
    if leftover < 0:  # floor guard overshoot; trim from smallest remainders
        order = np.lexsort((np.arange(probs.size), remainder))
        for i in order:
            if leftover == 0:
                break
            if base[i] > 0:
                base[i] -= 1
                leftover += 1
    elif leftover > 0:
        order = np.lexsort((np.arange(probs.size), -remainder))
        base[order[:leftover]] += 1
    if np.any((probs > 0) & (base == 0)):
        raise ValueError(
            "coin width too small: an outcome of positive probability received no coins"
        )
    return base


def dyadic_simulation(circuit: Circuit, coin_width: int) -> SimulationSpec:
    """Build the coin-to-outcome map for a circuit's exact output law.

    Coins are partitioned into contiguous blocks, one per outcome in index
    order, sized by largest-remainder apportionment of the exact
    probabilities; the achieved epsilon is reported. Probabilities below the
    floating-point floor (1e-12) are treated as exactly zero.
    """
    if coin_width < 1:
        raise ValueError("coin width must be positive")
    probs = output_distribution(circuit)
    probs = np.where(probs < PROB_FLOOR, 0.0, probs)
    probs = probs / probs.sum()
    counts = _apportion(probs, coin_width)
    total = float(1 << coin_width)
    positive = probs > 0
    eps = float(
        np.max(np.abs(counts[positive] / total - probs[positive]) / probs[positive])
    )
    nbits = len(circuit.measured)
    outcomes = tuple(_bits_of(i, nbits) for i in range(probs.size))
    return SimulationSpec(
        coin_width=coin_width,
        outcomes=outcomes,
        probabilities=probs,
        counts=counts,
        epsilon=eps,
        boundaries=np.cumsum(counts),
    )


def tv_distance(p: Sequence[float], q: Sequence[float]) -> float:
    """Total-variation distance between two distributions on the same support."""
    pa, qa = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if pa.shape != qa.shape:
        raise ValueError(f"distribution shapes differ: {pa.shape} vs {qa.shape}")
    return float(0.5 * np.abs(pa - qa).sum())
