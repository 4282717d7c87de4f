"""Public-coin approximate-set-size game (Goldwasser-Sipser style) played
against coin-driven circuit simulations.

The verifier wants to distinguish |S| >= BIG from |S| <= SMALL for a set S
of n-bit coin strings whose membership is decided by running a simulation.
The ratio BIG/SMALL is amplified by taking u-fold products of S; the
verifier then sends l = p+1 random GF(2) matrix hashes into p bits together
with l**2 random p-bit targets, and accepts when the prover exhibits a
product-set member hashing into the target set under some hash. All
logarithms in the parameter arithmetic are base 2.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .density import SimulationSpec

MERLIN_SEARCH_BITS_CAP = 24
MEMBER_ENUMERATION_CAP = 20


@dataclass(frozen=True)
class GameParameters:
    """Derived game parameters for one (epsilon, n, k, d) instance."""

    epsilon: float
    coin_width: int
    guess_width: int
    target_ratio: float
    amplification: int
    big_threshold: float
    small_threshold: float
    big_total: float
    small_total: float
    hash_bits: int
    hash_count: int

    @classmethod
    def derive(
        cls,
        epsilon: float,
        coin_width: int,
        guess_width: int,
        target_ratio: float,
    ) -> "GameParameters":
        if not 0.0 <= epsilon < 1.0 / 3.0:
            raise ValueError(
                f"simulation accuracy {epsilon} must satisfy epsilon < 1/3 "
                "(otherwise the set-size thresholds do not separate)"
            )
        if not 0 <= guess_width <= coin_width:
            raise ValueError("guess width must lie in [0, coin width]")
        if target_ratio <= 8.0:
            raise ValueError("amplification target d must exceed 8")
        base_ratio = (2.0 - 2.0 * epsilon) / (1.0 + epsilon)
        u = math.ceil(math.log2(target_ratio / 8.0) / math.log2(base_ratio) - 1e-9)
        u = max(u, 1)
        big = (1.0 - epsilon) * (2.0 / 3.0) * 2.0 ** (coin_width - guess_width)
        small = (1.0 + epsilon) * (1.0 / 3.0) * 2.0 ** (coin_width - guess_width)
        big_total = big**u
        small_total = small**u
        p = math.floor(8.0 * math.log2(big_total)) if big_total > 1.0 else 0
        if p < 1:
            raise ValueError(
                f"amplified lower bound {big_total:.3g} yields no hash bits; "
                "choose a smaller guess width or larger coin width"
            )
        return cls(
            epsilon=epsilon,
            coin_width=coin_width,
            guess_width=guess_width,
            target_ratio=float(target_ratio),
            amplification=u,
            big_threshold=big,
            small_threshold=small,
            big_total=big_total,
            small_total=small_total,
            hash_bits=p,
            hash_count=p + 1,
        )

    @property
    def challenge_count(self) -> int:
        return self.hash_count**2

    @property
    def completeness_bound(self) -> float:
        """Acceptance is at least this when |S'| >= the amplified BIG."""
        return 1.0 - 2.0 ** (-self.hash_count / 8.0)

    @property
    def soundness_bound(self) -> float:
        """Acceptance is at most this when |S'| <= the amplified SMALL; may
        exceed 1 at desk scale, in which case it is vacuous."""
        return self.hash_count**3 / self.target_ratio

    @property
    def soundness_vacuous(self) -> bool:
        return self.soundness_bound >= 1.0


class WitnessSet:
    """Set of n-bit coin strings with decidable membership, amplified by
    u-fold product: t (a u*n-bit string) belongs to the product set when all
    u of its n-bit blocks belong to the base set."""

    def __init__(
        self,
        member: Callable[[int], bool],
        coin_width: int,
        amplification: int,
        members: Sequence[int] | None = None,
    ):
        if amplification < 1:
            raise ValueError("amplification must be at least 1")
        self.member = member
        self.coin_width = coin_width
        self.amplification = amplification
        self._members: tuple[int, ...] | None = (
            tuple(sorted(set(int(m) for m in members))) if members is not None else None
        )

    @classmethod
    def from_members(
        cls, coin_width: int, members: Iterable[int], amplification: int
    ) -> "WitnessSet":
        mem = frozenset(int(m) for m in members)
        for m in mem:
            if not 0 <= m < (1 << coin_width):
                raise ValueError(f"member {m} outside the {coin_width}-bit universe")
        return cls(lambda r: r in mem, coin_width, amplification, members=sorted(mem))

    def members(self) -> tuple[int, ...]:
        """Base-set members in ascending order, enumerating the universe via
        the membership predicate when not given explicitly."""
        if self._members is None:
            if self.coin_width > MEMBER_ENUMERATION_CAP:
                raise ValueError(
                    f"cannot enumerate a {self.coin_width}-bit universe "
                    f"(cap {MEMBER_ENUMERATION_CAP})"
                )
            self._members = tuple(
                r for r in range(1 << self.coin_width) if self.member(r)
            )
        return self._members

    def member_product(self, t: int) -> bool:
        """Membership of a u*n-bit string in the product set; the first block
        occupies the most significant n bits."""
        mask = (1 << self.coin_width) - 1
        for i in range(self.amplification):
            shift = (self.amplification - 1 - i) * self.coin_width
            if not self.member((t >> shift) & mask):
                return False
        return True

    @property
    def total_bits(self) -> int:
        return self.amplification * self.coin_width

    def product_size(self) -> int:
        return len(self.members()) ** self.amplification


def members_from_mask(coin_width: int, mask: int, value: int) -> tuple[int, ...]:
    """Members of the mask-defined set {r : r & mask == value}."""
    if value & ~mask:
        raise ValueError("value sets bits outside the mask")
    return tuple(r for r in range(1 << coin_width) if (r & mask) == value)


def membership_from_simulation(
    spec: SimulationSpec, guess_bits: int, decision_bit: int
) -> Callable[[int], bool]:
    """Membership predicate over coin strings: the simulated run reads
    all-zero intermediate (guessed) bits and 1 on the decision bit."""
    nbits = len(spec.outcomes[0]) if spec.outcomes else 0
    if not 0 <= guess_bits <= nbits:
        raise ValueError(f"guess bit count {guess_bits} outside outcome width {nbits}")
    if not -nbits <= decision_bit < nbits:
        raise ValueError(f"decision bit {decision_bit} outside outcome width {nbits}")

    def member(coin: int) -> bool:
        bits = spec.outcome_of(coin)
        return all(b == 0 for b in bits[:guess_bits]) and bits[decision_bit] == 1

    return member


@dataclass(frozen=True, eq=False)
class HashFunction:
    """GF(2)-linear hash by a random Boolean matrix: row i (an output-bits
    wide mask) is XORed into the result whenever input bit i is set, so
    h(x ^ y) == h(x) ^ h(y) by construction."""

    input_bits: int
    output_bits: int
    rows: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.rows) != self.input_bits:
            raise ValueError("one row per input bit required")

    def __call__(self, x: int) -> int:
        h = 0
        while x:
            h ^= self.rows[(x & -x).bit_length() - 1]
            x &= x - 1
        return h

    @staticmethod
    def random(
        rng: np.random.Generator, input_bits: int, output_bits: int
    ) -> "HashFunction":
        bits = rng.integers(0, 2, size=(input_bits, output_bits))
        rows = tuple(
            int("".join(str(int(b)) for b in row), 2) if output_bits else 0
            for row in bits
        )
        return HashFunction(input_bits, output_bits, rows)


def _random_bitstring(rng: np.random.Generator, nbits: int) -> int:
    bits = rng.integers(0, 2, size=nbits)
    out = 0
    for b in bits:
        out = (out << 1) | int(b)
    return out


def arthur_challenge(
    params: GameParameters, rng: np.random.Generator
) -> tuple[tuple[HashFunction, ...], tuple[int, ...]]:
    """The verifier's challenge: l independent random matrix hashes from
    u*n bits to p bits, plus l**2 independent uniform p-bit targets."""
    total = params.amplification * params.coin_width
    hashes = tuple(
        HashFunction.random(rng, total, params.hash_bits)
        for _ in range(params.hash_count)
    )
    targets = tuple(
        _random_bitstring(rng, params.hash_bits) for _ in range(params.challenge_count)
    )
    return hashes, targets


def merlin_respond(
    ws: WitnessSet, hashes: Sequence[HashFunction], targets: Sequence[int]
) -> int | None:
    """The prover's exhaustive search, lexicographic over the product set:
    the first t with member and some h_i(t) in the target set, else None."""
    if ws.total_bits > MERLIN_SEARCH_BITS_CAP:
        raise ValueError(
            f"prover search space of {ws.total_bits} bits exceeds the "
            f"{MERLIN_SEARCH_BITS_CAP}-bit desk-scale cap"
        )
    zset = set(targets)
    members = ws.members()
    for combo in itertools.product(members, repeat=ws.amplification):
        t = 0
        for block in combo:
            t = (t << ws.coin_width) | block
        if any(h(t) in zset for h in hashes):
            return t
    return None


def arthur_verify(
    ws: WitnessSet,
    hashes: Sequence[HashFunction],
    targets: Sequence[int],
    witness: int | None,
) -> bool:
    """Accept iff the witness is a product-set member hashing into the target
    set under some hash (membership re-checked by running the predicate)."""
    if witness is None:
        return False
    if not 0 <= witness < (1 << ws.total_bits):
        return False
    if not ws.member_product(witness):
        return False
    zset = set(targets)
    return any(h(witness) in zset for h in hashes)


@dataclass(frozen=True)
class GameTranscript:
    hashes: tuple[HashFunction, ...]
    targets: tuple[int, ...]
    witness: int | None
    accepted: bool


def run_game(
    ws: WitnessSet, params: GameParameters, rng: np.random.Generator
) -> GameTranscript:
    """One full round: challenge, response, verification."""
    if ws.coin_width != params.coin_width or ws.amplification != params.amplification:
        raise ValueError("witness set does not match the game parameters")
    hashes, targets = arthur_challenge(params, rng)
    witness = merlin_respond(ws, hashes, targets)
    return GameTranscript(hashes, targets, witness, arthur_verify(ws, hashes, targets, witness))


@dataclass(frozen=True)
class DecisionReport:
    params: GameParameters
    trials: int
    acceptance_rate: float
    verdict: str
    completeness_bound: float
    soundness_bound: float
    soundness_vacuous: bool
    accepts: tuple[bool, ...]


def decide(
    ws: WitnessSet, params: GameParameters, trials: int, rng: np.random.Generator
) -> DecisionReport:
    """Play ``trials`` independent rounds with fresh challenges and report
    the acceptance frequency. The verdict is "big" when the frequency clears
    the midpoint between the completeness bound and the (capped) soundness
    bound; a soundness bound >= 1 is reported as vacuous."""
    if trials < 1:
        raise ValueError("at least one trial required")
    accepts: list[bool] = []
    for _ in range(trials):
        sub = np.random.default_rng(int(rng.integers(0, 2**63)))
        accepts.append(run_game(ws, params, sub).accepted)
    rate = sum(accepts) / trials
    midpoint = (params.completeness_bound + min(params.soundness_bound, 1.0)) / 2.0
    return DecisionReport(
        params=params,
        trials=trials,
        acceptance_rate=rate,
        verdict="big" if rate > midpoint else "small",
        completeness_bound=params.completeness_bound,
        soundness_bound=params.soundness_bound,
        soundness_vacuous=params.soundness_vacuous,
        accepts=tuple(accepts),
    )
