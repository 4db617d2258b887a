from fractions import Fraction
from itertools import product
from math import floor, sqrt

import numpy as np
import pytest

from ksumforge.algebra import F2Matrix, apply_f2, f2_rank, sample_full_rank
from ksumforge.core import (
    InvariantViolation,
    MSumInstance,
    Oracle,
    ParameterError,
    SeededRng,
    SumInstance,
    XorInstance,
    always_fail_oracle,
    gen_msum_instance,
    gen_sum_instance,
    gen_xor_instance,
    validate,
)
from ksumforge.reductions import (
    ReductionBudget,
    choose_primes,
    msum_as_sum,
    msum_reduce,
    obfuscate_msum,
    obfuscate_value,
    obfuscate_xor,
    pad_reduce_sum,
    pad_reduce_xor,
    sum_theorem_pipeline,
    sum_to_msum,
    xor_reduce,
    xor_theorem_pipeline,
)
from ksumforge.solvers import brute_force, ktree, lexmin_oracle, make_oracle, sort_and_match

from conftest import chi2_uniform_pvalue, within_sigma


def zero_offset_fraction(k, q):
    """Share of offset k-tuples in [-q/2, q/2)^k summing to zero, by enumeration."""
    offsets = range(-(q // 2), q - q // 2)
    hits = sum(1 for v in product(offsets, repeat=k) if sum(v) == 0)
    return Fraction(hits, q**k)


# ------------------------------------------------------------------ XOR

def test_obfuscate_xor_invertible_case(rng):
    z = gen_xor_instance(3, 10, 40, rng)
    x, obf = obfuscate_xor(z, 10, rng.child(1))
    assert f2_rank(obf.T) == 10 and obf.t == 0
    sols_z = {K for K in _all_solutions(z)}
    sols_x = {tuple(sorted(obf.P.image[i] for i in K)) for K in _all_solutions(x)}
    assert sols_z == sols_x


def _all_solutions(inst):
    from itertools import combinations

    return [K for K in combinations(range(inst.r), inst.k) if validate(inst, K)]


def test_obfuscate_xor_maps_solutions(rng):
    for i in range(50):
        z = gen_xor_instance(3, 12, 64, rng.child(i))
        K = brute_force(z)
        if K is None:
            continue
        x, obf = obfuscate_xor(z, 8, rng.child(1000 + i))
        inv = obf.P.inverse()
        assert validate(x, sorted(inv(j) for j in K))


def test_obfuscate_xor_marginal_uniform(rng):
    # fixed nonzero z, fresh full-rank T each draw
    z, n, m = 0b1011_0110_01, 10, 4
    stream = SeededRng(77)
    vals = [apply_f2(sample_full_rank(m, n, stream), z) for _ in range(100_000)]
    assert chi2_uniform_pvalue(vals, 16) > 1e-3


def test_obfuscate_xor_rejects_bad_m(rng):
    z = gen_xor_instance(3, 10, 10, rng)
    with pytest.raises(ParameterError):
        obfuscate_xor(z, 11, rng)
    with pytest.raises(ParameterError):
        obfuscate_xor(z, 0, rng)


def test_xor_reduce_always_fail_uses_budget(rng):
    z = gen_xor_instance(3, 12, 32, rng)
    rep = xor_reduce(z, 8, always_fail_oracle("kxor"), ReductionBudget(17), rng)
    assert rep.outcome is None and rep.calls == 17 and rep.successes == 0


def test_xor_reduce_family_mismatch(rng):
    z = gen_xor_instance(3, 12, 32, rng)
    with pytest.raises(ParameterError):
        xor_reduce(z, 8, always_fail_oracle("ksum"), ReductionBudget(1), rng)


def test_xor_reduce_square_matches_oracle_paired(rng):
    oracle = make_oracle("ktree", "kxor")
    for i in range(60):
        z = gen_xor_instance(4, 16, 4 * 2**6, rng.child(i))
        seed = rng.child(500 + i)
        rep = xor_reduce(z, 16, oracle, ReductionBudget(1), seed)
        x, _ = obfuscate_xor(z, 16, seed.child(0).child(0))
        assert (rep.outcome is not None) == (ktree(x) is not None)


def test_xor_single_iteration_lift_rate(rng):
    n, m = 12, 8
    z = gen_xor_instance(3, n, 64, rng)
    rep = xor_reduce(z, m, lexmin_oracle("kxor"), ReductionBudget(10_000), rng.child(1), run_all=True)
    assert rep.successes >= 9_000
    assert within_sigma(rep.lifts, rep.successes, 2.0 ** (m - n))
    assert all(validate(z, K) for K in rep.solutions)


def test_xor_reduce_monotone_in_L(rng):
    oracle = make_oracle("sort_and_match", "kxor")
    for i in range(30):
        z = gen_xor_instance(3, 14, 24, rng.child(i))
        short = xor_reduce(z, 9, oracle, ReductionBudget(4), rng.child(100 + i))
        long = xor_reduce(z, 9, oracle, ReductionBudget(16), rng.child(100 + i))
        if short.outcome is not None:
            assert long.outcome == short.outcome


def test_xor_lift_invariant_catches_bad_lift(rng, monkeypatch):
    import ksumforge.reductions as red

    z = gen_xor_instance(3, 12, 64, rng)
    real = red.obfuscate_xor

    def broken(zz, m, r):
        x, obf = real(zz, m, r)
        T = F2Matrix(tuple(row ^ 1 for row in obf.T.rows), obf.T.cols)
        return x, red.XorObfuscation(T, obf.P)

    monkeypatch.setattr(red, "obfuscate_xor", broken)
    with pytest.raises(InvariantViolation):
        xor_reduce(z, 8, lexmin_oracle("kxor"), ReductionBudget(50), rng)


def test_pad_reduce_xor_passthrough(rng):
    o = lexmin_oracle("kxor")
    for i in range(100):
        z = gen_xor_instance(2, 8, 32, rng.child(i))
        rep = pad_reduce_xor(z, 1, o, rng.child(1000 + i))
        assert (rep.outcome is None) == (brute_force(z) is None)


def test_pad_reduce_xor_acceptance_bound(rng):
    k, n, r, d, trials = 2, 8, 32, 2, 1000
    o = lexmin_oracle("kxor")
    hits = 0
    for i in range(trials):
        z = gen_xor_instance(k, n, r, rng.child(i))
        rep = pad_reduce_xor(z, d, o, rng.child(10_000 + i))
        if rep.outcome is not None:
            assert max(rep.outcome) < r and validate(z, rep.outcome)
            hits += 1
    bound = ((r - k) / (d * r - k)) ** k
    assert hits / trials >= bound - 3 * sqrt(bound * (1 - bound) / trials)


def test_xor_pipeline_degenerate_and_failing(rng):
    z = gen_xor_instance(4, 16, 16, rng)
    rep = xor_theorem_pipeline(z, 16, always_fail_oracle("kxor"), ReductionBudget(9), rng)
    assert rep.outcome is None and rep.calls == 9
    wins = done = 0
    for i in range(200):
        z = gen_xor_instance(2, 8, 16, rng.child(i))
        if brute_force(z) is None:
            continue
        done += 1
        rep = xor_theorem_pipeline(z, 8, make_oracle("sort_and_match", "kxor"), ReductionBudget(8),
                                   rng.child(999 + i))
        assert rep.calls <= 8
        if rep.outcome is not None:
            wins += 1
            assert validate(z, rep.outcome) and max(rep.outcome) < 16
    assert wins >= done // 2
    with pytest.raises(ParameterError):
        xor_theorem_pipeline(z, 3, always_fail_oracle(), ReductionBudget(1), rng)


def test_xor_pipeline_membership_modes(rng):
    oracle = make_oracle("extended_ktree", "kxor")
    z = gen_xor_instance(4, 20, 32, rng)
    for mode in ("per_iteration", "final"):
        rep = xor_theorem_pipeline(z, 14, oracle, ReductionBudget(64), rng.child(1), membership=mode)
        assert rep.outcome is None or validate(z, rep.outcome)
    with pytest.raises(ParameterError):
        xor_theorem_pipeline(z, 14, oracle, ReductionBudget(1), rng, membership="never")


# ------------------------------------------------------------------ MSUM

def _round_oracle(w, q):
    return floor(Fraction(w, q) + Fraction(1, 2))


def test_obfuscate_value_enumeration():
    p, q = 3, 2
    for z, alpha, gamma in product(range(6), (1, 5), (1, 2)):
        expected = gamma * _round_oracle(alpha * z % 6, q) % p
        assert obfuscate_value(z, alpha, gamma, p, q) == expected
    # top residue rounds up to p, which wraps to 0
    assert obfuscate_value(5, 1, 1, 3, 2) == 0


def test_obfuscate_value_uniform(rng):
    p, q = 11, 7
    alpha, gamma = 38, 4
    zs = rng.integers(0, p * q, 100_000)
    assert chi2_uniform_pvalue([obfuscate_value(z, alpha, gamma, p, q) for z in zs], p) > 1e-3


def test_obfuscate_msum_zero_and_errors(rng):
    z = MSumInstance(3, 77, (0, 0, 0, 5))
    y, obf = obfuscate_msum(z, 11, 7, rng)
    assert sorted(y.elements)[:3] == [0, 0, 0]
    assert obf.keys.p == 11 and obf.keys.q == 7
    with pytest.raises(ParameterError):
        obfuscate_msum(z, 7, 11, rng)
    with pytest.raises(ParameterError):
        obfuscate_msum(MSumInstance(3, 78, (0, 0, 0)), 13, 6, rng)


def test_msum_reduce_continues_after_failed_lift(rng):
    p, q = 251, 13
    z = gen_msum_instance(3, p * q, 32, rng)
    rep = msum_reduce(z, p, q, lexmin_oracle("kmsum"), ReductionBudget(400), rng.child(1))
    assert rep.outcome is not None and validate(z, rep.outcome)
    assert rep.successes > rep.lifts == 1


def lift_rate_over_fresh_instances(p, q, k, r, instances, rng):
    """Successes and lifts of single obfuscation rounds, one fresh instance each."""
    successes = lifts = 0
    for i in range(instances):
        z = gen_msum_instance(k, p * q, r, rng.child(i))
        rep = msum_reduce(z, p, q, lexmin_oracle("kmsum"), ReductionBudget(1), rng.child(10**6 + i))
        successes += rep.successes
        lifts += rep.lifts
    return successes, lifts


def test_offset_baseline_by_simulation():
    # the lift succeeds iff the rounding offsets of the chosen tuple cancel
    k, q = 3, 13
    g = np.random.default_rng(5)
    v = g.integers(-(q // 2), q - q // 2, size=(200_000, k))
    hits = int((v.sum(axis=1) == 0).sum())
    assert within_sigma(hits, len(v), float(zero_offset_fraction(k, q)))
    assert zero_offset_fraction(3, 13) == Fraction(127, 2197)


def test_msum_lift_rate_when_q_equals_p(rng):
    p = q = 13
    k = 3
    successes, lifts = lift_rate_over_fresh_instances(p, q, k, 32, 4000, rng)
    baseline = float(zero_offset_fraction(k, q))
    assert successes == 4000
    assert within_sigma(lifts, successes, baseline)
    assert 0.5 / q < baseline < 1 / q


def test_msum_reduce_always_fail(rng):
    z = gen_msum_instance(3, 251 * 13, 32, rng)
    rep = msum_reduce(z, 251, 13, always_fail_oracle(), ReductionBudget(12), rng)
    assert rep.calls == 12 and rep.outcome is None


def test_sum_to_msum_full_window(rng):
    N = 50
    seen = []

    def spy(inst, r):
        seen.append(inst)
        return None

    z = gen_sum_instance(3, N, 40, rng)
    rep = sum_to_msum(z, 2 * N + 1, Oracle(spy, family="kmsum"), rng.child(1))
    r_prime = -(-40 * (2 * N + 1) // (4 * N))
    assert rep.calls == 1 and len(seen) == 1 and seen[0].r == r_prime
    # masking shifts each kept value by one of k shares summing to zero
    shifts = {(x - v) % (2 * N + 1) for x, v in zip(seen[0].elements, z.elements)}
    assert 1 <= len(shifts) <= 3


def test_sum_to_msum_integer_test(rng):
    M = 21
    good = SumInstance(3, 10, (4, 6, -10, 1, 2, 3, 5, 7))
    wrap = SumInstance(3, 10, (7, 7, 7, 1, 2, 3, 5, 8))  # 21 = 0 mod M, not over Z
    for inst, expect in ((good, True), (wrap, False)):
        for i in range(40):
            stub = Oracle(lambda x, r: (0, 1, 2), family="kmsum")
            rep = sum_to_msum(inst, M, stub, rng.child(i))
            if rep.successes:  # the masks happened to cancel
                assert (rep.outcome is not None) == expect


def test_sum_to_msum_failure_branch(rng):
    z = SumInstance(3, 100, (100, -100, 99, -99, 98, -98))
    rep = sum_to_msum(z, 11, lexmin_oracle(), rng)
    assert rep.outcome is None and rep.calls == 0 and "r1 < r'" in rep.note


def test_pad_reduce_sum(rng):
    o = lexmin_oracle()
    for i in range(100):
        z = gen_sum_instance(3, 30, 12, rng.child(i))
        rep = pad_reduce_sum(z, 12, o, rng.child(500 + i))
        assert (rep.outcome is None) == (brute_force(z) is None)
        big = pad_reduce_sum(z, 24, o, rng.child(900 + i), target_bound=60)
        assert big.outcome is None or (validate(z, big.outcome) and max(big.outcome) < 12)
    with pytest.raises(ParameterError):
        pad_reduce_sum(z, 5, o, rng)


def test_pad_reduce_sum_acceptance_bound(rng):
    k, N, r, d, trials = 2, 40, 24, 2, 600
    o = lexmin_oracle()
    hits = sum(pad_reduce_sum(gen_sum_instance(k, N, r, rng.child(i)), d * r, o,
                              rng.child(5000 + i)).outcome is not None for i in range(trials))
    bound = ((r - k) / (d * r - k)) ** k
    assert hits / trials >= bound - 3 * sqrt(bound * (1 - bound) / trials)


def test_msum_as_sum():
    s = msum_as_sum(MSumInstance(3, 7, (0, 3, 4, 6)))
    assert s.N == 3 and s.elements == (0, 3, -3, -1)


def test_choose_primes(rng):
    pr = choose_primes(2**24, 2**15, rng)
    assert 2**15 <= pr.p < 2**16
    assert pr.q is not None and 2**24 / (2 * pr.p) <= pr.q < 2**24 / pr.p
    assert choose_primes(4096, 4096, rng).q is None


def test_sum_pipeline_degenerate_case(rng):
    # M = N leaves no room for q: the mod-pq stage is skipped
    k, N, r = 3, 4096, 16
    assert choose_primes(N, N, rng).q is None
    wins = 0
    for i in range(400):
        z = gen_sum_instance(k, N, r, rng.child(i))
        if brute_force(z) is None:
            continue
        rep = sum_theorem_pipeline(z, N, make_oracle("sort_and_match", "ksum"),
                                   ReductionBudget(64, call_cap=64), rng.child(10**5 + i), oracle_r=r)
        assert rep.calls <= 64 and "q=None" in rep.note
        if rep.outcome is not None:
            wins += 1
            assert validate(z, rep.outcome)
    assert wins >= 1


def test_sum_pipeline_always_fail_spends_budget(rng):
    z = gen_sum_instance(3, 2**16, 40, rng)
    rep = sum_theorem_pipeline(z, 2**9, always_fail_oracle("ksum"), ReductionBudget(7, call_cap=7), rng)
    assert rep.outcome is None and rep.calls == 7
    with pytest.raises(ParameterError):
        sum_theorem_pipeline(z, 2**7, always_fail_oracle(), ReductionBudget(1), rng)
