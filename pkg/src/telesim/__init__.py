"""telesim: teleportation-based shallow quantum circuits, exact classical
simulation, and a set-size interactive-proof harness.

The package compiles CNOT+single-qubit circuits into a depth-at-most-four
nonadaptive form built from gate teleportation, simulates circuits exactly
on a dense statevector engine, provides conditional-probability oracles
(including a blockwise simulator for depth-three circuits that never builds
the global state), and plays the Goldwasser-Sipser approximate-set-size
game against coin-driven simulations of the compiled circuits.
"""

from .statevector import (
    Gate,
    StateVector,
    ZeroProbabilityError,
    apply_gate,
    fidelity,
    measure_bell,
    measure_standard,
    outcome_distribution,
    zero_state,
)
from .circuits import (
    AdaptiveCircuit,
    Circuit,
    MeasuredGroup,
    NonadaptiveCircuit,
    PlacedGate,
    RunTranscript,
    Stage,
    compose,
    depth,
    enumerate_outcome_tree,
    flatten,
    run_adaptive,
    run_nonadaptive,
)
from .teleport import (
    TeleportedCircuit,
    compile_adaptive,
    correction_table,
    flatten_nonadaptive,
    guess_hit_probability,
    resource_circuit,
)
from .density import (
    DensityOracle,
    MeasurementPartition,
    SimulationSpec,
    adaptive_from_nonadaptive,
    brute_force_oracle,
    depth3_oracle,
    dyadic_simulation,
    fixed_circuit_density,
    sample_via_density,
)
from .am_game import (
    GameParameters,
    HashFunction,
    WitnessSet,
    arthur_challenge,
    arthur_verify,
    decide,
    membership_from_simulation,
    merlin_respond,
    run_game,
)

__version__ = "0.1.0"
