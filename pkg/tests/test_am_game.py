import numpy as np
import pytest

from telesim import am_game as am
from telesim import circuits as c
from telesim import density as d
from telesim import teleport as tp


def test_parameters_epsilon_zero_ratio():
    params = am.GameParameters.derive(0.0, 10, 4, 32.0)
    assert abs(params.big_threshold / params.small_threshold - 2.0) < 1e-12


@pytest.mark.parametrize("j", [1, 2, 3, 4])
def test_amplification_closed_form(j):
    params = am.GameParameters.derive(0.0, 10, 9, 8.0 * 2**j)
    assert params.amplification == j


def test_parameters_reject_bad_epsilon():
    with pytest.raises(ValueError, match="1/3"):
        am.GameParameters.derive(0.4, 10, 4, 32.0)
    with pytest.raises(ValueError, match="1/3"):
        am.GameParameters.derive(1 / 3, 10, 4, 32.0)


def test_parameters_reject_small_ratio():
    with pytest.raises(ValueError, match="exceed 8"):
        am.GameParameters.derive(0.0, 10, 4, 8.0)


def test_parameters_infeasible_hash_bits():
    # guess width == coin width: the amplified lower bound is below 1.
    with pytest.raises(ValueError, match="hash bits"):
        am.GameParameters.derive(0.0, 10, 10, 32.0)


def test_parameters_counts():
    params = am.GameParameters.derive(0.0, 10, 9, 32.0)
    assert params.amplification == 2
    assert params.hash_bits == 6  # floor(8 * log2((4/3)**2))
    assert params.hash_count == 7
    assert params.challenge_count == 49
    assert params.soundness_vacuous  # 343/32 >= 1 at desk scale


def test_hash_linearity(rng):
    h = am.HashFunction.random(rng, 20, 6)
    for _ in range(200):
        x = int(rng.integers(1 << 20))
        y = int(rng.integers(1 << 20))
        assert h(x ^ y) == h(x) ^ h(y)
    assert h(0) == 0


def test_challenge_counts_and_determinism():
    params = am.GameParameters.derive(0.0, 10, 9, 32.0)
    h1, z1 = am.arthur_challenge(params, np.random.default_rng(42))
    h2, z2 = am.arthur_challenge(params, np.random.default_rng(42))
    assert len(h1) == params.hash_count
    assert len(z1) == params.hash_count**2
    assert z1 == z2
    assert all(a.rows == b.rows for a, b in zip(h1, h2))


def test_hash_matrix_entries_balanced(rng):
    total, ones = 0, 0
    while total < 10_000:
        h = am.HashFunction.random(rng, 25, 8)
        for row in h.rows:
            ones += bin(row).count("1")
            total += 8
    mean = ones / total
    assert abs(mean - 0.5) < 0.017  # 3.3 sigma at alpha ~ 0.001


def test_merlin_full_universe_finds_witness():
    params = am.GameParameters.derive(0.0, 6, 5, 32.0)
    ws = am.WitnessSet(lambda r: True, 6, params.amplification)
    found = 0
    for seed in range(30):
        hashes, targets = am.arthur_challenge(params, np.random.default_rng(seed))
        t = am.merlin_respond(ws, hashes, targets)
        if t is not None:
            assert am.arthur_verify(ws, hashes, targets, t)
            found += 1
    assert found == 30


def test_merlin_empty_set_never_wins():
    params = am.GameParameters.derive(0.0, 10, 9, 32.0)
    ws = am.WitnessSet.from_members(10, (), params.amplification)
    for seed in range(10):
        hashes, targets = am.arthur_challenge(params, np.random.default_rng(seed))
        assert am.merlin_respond(ws, hashes, targets) is None


def test_merlin_singleton_matches_direct_evaluation():
    params = am.GameParameters.derive(0.0, 10, 9, 32.0)
    t0 = 0b1100110011
    ws = am.WitnessSet.from_members(10, (t0,), params.amplification)
    prod = (t0 << 10) | t0
    for seed in range(25):
        hashes, targets = am.arthur_challenge(params, np.random.default_rng(seed))
        want = prod if any(h(prod) in set(targets) for h in hashes) else None
        assert am.merlin_respond(ws, hashes, targets) == want


def test_merlin_search_cap():
    ws = am.WitnessSet(lambda r: True, 13, 2)
    with pytest.raises(ValueError, match="cap"):
        am.merlin_respond(ws, (), ())


def test_merlin_lexicographic_order():
    params = am.GameParameters.derive(0.0, 6, 5, 32.0)
    ws = am.WitnessSet.from_members(6, (1, 2, 3), params.amplification)
    hashes, targets = am.arthur_challenge(params, np.random.default_rng(0))
    t = am.merlin_respond(ws, hashes, targets)
    if t is not None:
        zset = set(targets)
        for combo0 in (1, 2, 3):
            for combo1 in (1, 2, 3):
                cand = (combo0 << 6) | combo1
                if any(h(cand) in zset for h in hashes):
                    assert t == cand
                    return


def test_verify_cases():
    params = am.GameParameters.derive(0.0, 10, 9, 32.0)
    ws = am.WitnessSet.from_members(10, (3, 5), params.amplification)
    hashes, targets = am.arthur_challenge(params, np.random.default_rng(1))
    member_t = (3 << 10) | 5
    non_member = (3 << 10) | 4
    assert not am.arthur_verify(ws, hashes, targets, None)
    assert not am.arthur_verify(ws, hashes, targets, non_member)
    hit = any(h(member_t) in set(targets) for h in hashes)
    assert am.arthur_verify(ws, hashes, targets, member_t) == hit
    # member with no hash hit: empty target set
    assert not am.arthur_verify(ws, hashes, (), member_t)


def test_run_game_deterministic_replay():
    params = am.GameParameters.derive(0.0, 10, 9, 32.0)
    ws = am.WitnessSet.from_members(10, (5, 9), params.amplification)
    t1 = am.run_game(ws, params, np.random.default_rng(33))
    t2 = am.run_game(ws, params, np.random.default_rng(33))
    assert t1.witness == t2.witness
    assert t1.accepted == t2.accepted
    assert t1.targets == t2.targets


def test_decide_planted_big_and_small():
    params = am.GameParameters.derive(0.0, 10, 9, 32.0)
    big = am.decide(
        am.WitnessSet.from_members(10, (5, 9), params.amplification),
        params,
        200,
        np.random.default_rng(11),
    )
    small = am.decide(
        am.WitnessSet.from_members(10, (), params.amplification),
        params,
        200,
        np.random.default_rng(11),
    )
    assert big.verdict == "big"
    assert small.verdict == "small"
    assert small.acceptance_rate == 0.0
    assert big.acceptance_rate - small.acceptance_rate >= 0.5
    assert big.acceptance_rate >= big.completeness_bound - 0.1
    assert big.soundness_vacuous


def test_decide_monotone_in_set_size():
    params = am.GameParameters.derive(0.0, 10, 9, 32.0)
    rates = []
    for members in [(), (5,), (5, 9), (5, 9, 17, 33)]:
        ws = am.WitnessSet.from_members(10, members, params.amplification)
        report = am.decide(ws, params, 60, np.random.default_rng(77))
        rates.append(report.acceptance_rate)
    assert all(a <= b + 1e-12 for a, b in zip(rates, rates[1:]))


def test_decide_determinism():
    params = am.GameParameters.derive(0.0, 10, 9, 32.0)
    ws = am.WitnessSet.from_members(10, (5, 9), params.amplification)
    r1 = am.decide(ws, params, 50, np.random.default_rng(4))
    r2 = am.decide(ws, params, 50, np.random.default_rng(4))
    assert r1.accepts == r2.accepts


def test_members_from_mask():
    members = am.members_from_mask(4, 0b1100, 0b0100)
    assert members == (4, 5, 6, 7)
    with pytest.raises(ValueError):
        am.members_from_mask(4, 0b1100, 0b0001)


def test_membership_from_simulation_empty_set():
    # source always outputs 0, so (all-zero intermediates, decision=1) never
    # happens and the witness set is empty.
    src = c.Circuit(2, [[("CNOT", 0, 1)]], [1])
    tc = tp.compile_adaptive(src)
    nc = tp.flatten_nonadaptive(tc, (0,) * 4)
    spec = d.dyadic_simulation(nc.base, 8)
    member = am.membership_from_simulation(spec, len(nc.guess_qubits), -1)
    ws = am.WitnessSet(member, 8, 1)
    assert ws.members() == ()


def test_membership_from_simulation_always_one_source():
    # source always outputs 1: members are the coins mapping to y = 0, so
    # |S|/2**n tracks 1/16 within the achieved relative accuracy.
    src = c.Circuit(2, [[("X", 0)], [("CNOT", 0, 1)]], [1])
    tc = tp.compile_adaptive(src)
    nc = tp.flatten_nonadaptive(tc, (0,) * 4)
    spec = d.dyadic_simulation(nc.base, 12)
    member = am.membership_from_simulation(spec, len(nc.guess_qubits), -1)
    ws = am.WitnessSet(member, 12, 1)
    frac = len(ws.members()) / 2**12
    assert abs(frac - 1 / 16) <= spec.epsilon / 16 + 1e-12
    assert spec.epsilon < 1 / 3


def test_membership_planted_mask_exact_size():
    spec = d.dyadic_simulation(c.Circuit(2, [[("H", 0), ("H", 1)]], [0, 1]), 6)
    member = am.membership_from_simulation(spec, 0, 0)
    ws = am.WitnessSet(member, 6, 1)
    # decision bit is outcome bit 0; exactly half the coins map to 1x
    assert len(ws.members()) == 32
