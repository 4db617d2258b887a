import cmath
from collections import Counter
from fractions import Fraction
from itertools import product
from math import comb, log

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ksumforge.algebra import is_prime, next_prime, units
from ksumforge.core import ParameterError, always_fail_oracle
from ksumforge.analysis import (
    Character,
    CollisionSetup,
    aligned_set,
    aligned_sum_stats,
    aligned_sum_stats_exact,
    count_quadruples,
    estimate_collision,
    joint_distribution_exact,
    magnitude_bound_scan,
    magnitude_cross,
    magnitude_exact,
    magnitude_monte_carlo,
    magnitude_via_zero_pairs,
    noise_set,
    projective_representatives,
    sample_mrt,
    sample_pqr,
    sample_pqr_batch,
    wilson_interval,
)
from ksumforge.solvers import lexmin_oracle

from conftest import chi2_expected_pvalue, chi2_uniform_pvalue


# ---------------------------------------------------------------- test-side oracles

def brute_magnitude(S, p, q):
    """E[chi_S(x) conj chi_S(y)] by enumerating z and both key pairs directly."""
    pq = p * q
    keys = [(a, g) for a in range(1, pq) if np.gcd(a, pq) == 1 for g in range(1, p)]
    total = 0j
    for z in product(range(pq), repeat=len(S)):
        for a1, g1 in keys:
            x = [g1 * ((2 * (a1 * v % pq) + q) // (2 * q)) % p for v in z]
            for a2, g2 in keys:
                y = [g2 * ((2 * (a2 * v % pq) + q) // (2 * q)) % p for v in z]
                e = sum(s * (xi - yi) for s, xi, yi in zip(S, x, y)) % p
                total += cmath.exp(2j * cmath.pi * e / p)
    return total / (pq ** len(S) * len(keys) ** 2)


def mrt_joint_by_enumeration():
    """Law of (x_1, y_1) at m = t = r = 1: z in F_2^2, rows are the three nonzero vectors."""
    counts = Counter()
    rows = (1, 2, 3)
    for z in range(4):
        for a in rows:
            for b in rows:
                counts[bin(a & z).count("1") & 1, bin(b & z).count("1") & 1] += 1
    total = sum(counts.values())
    return {key: Fraction(c, total) for key, c in counts.items()}


def naive_quadruples(q, mode, N=None):
    cnt = 0
    for a, b, c, d in product(range(q), repeat=4):
        if mode == "product" and a * b == c * d:
            cnt += 1
        elif mode == "sum" and a * b + c * d == N:
            cnt += 1
    return cnt


# ---------------------------------------------------------------- samplers

def test_mrt_marginals_uniform(rng):
    xs, ys = [], []
    for i in range(1500):
        pair = sample_mrt(4, 8, 2, rng.child(i))
        xs.extend(pair.x)
        ys.extend(pair.y)
    assert chi2_uniform_pvalue(xs, 16) > 1e-3
    assert chi2_uniform_pvalue(ys, 16) > 1e-3


def test_mrt_joint_matches_enumeration(rng):
    law = mrt_joint_by_enumeration()
    assert law[0, 0] == Fraction(1, 3)
    cells = [(0, 0), (0, 1), (1, 0), (1, 1)]
    c = Counter()
    for i in range(20000):
        pair = sample_mrt(1, 1, 1, rng.child(i))
        c[pair.x[0], pair.y[0]] += 1
    assert chi2_expected_pvalue([c[k] for k in cells], [law[k] for k in cells]) > 1e-3


def test_mrt_t_zero_is_invertible_image(rng):
    pair = sample_mrt(6, 40, 0, rng)
    # same z through two invertible maps: equal elements stay equal
    assert len(set(pair.x)) == len(set(pair.y))
    with pytest.raises(ParameterError):
        sample_mrt(40, 4, 30, rng)


@pytest.mark.parametrize("p,q", [(3, 2), (5, 3), (7, 3)])
def test_definition_and_claim_laws_coincide(p, q):
    d = joint_distribution_exact(p, q, "definition")
    c = joint_distribution_exact(p, q, "claim")
    assert d == c
    assert sum(d.values()) == 1


def test_noise_set():
    assert list(noise_set(3)) == [-1, 0, 1]
    assert list(noise_set(2)) == [-1, 0]
    assert len(noise_set(13)) == 13


def test_samplers_agree_two_sample(rng):
    p, q = 5, 3
    x1, y1 = sample_pqr_batch(p, q, 1, "definition", 100_000, rng.child(0))
    x2, y2 = sample_pqr_batch(p, q, 1, "claim", 100_000, rng.child(1))
    a = np.bincount((x1 * p + y1).ravel(), minlength=p * p)
    b = np.bincount((x2 * p + y2).ravel(), minlength=p * p)
    assert stats.chi2_contingency(np.vstack([a, b]))[1] > 1e-3


@pytest.mark.parametrize("mode", ["definition", "claim"])
def test_batch_sampler_matches_exact_law(rng, mode):
    p, q = 3, 2
    law = joint_distribution_exact(p, q, "definition")
    x, y = sample_pqr_batch(p, q, 1, mode, 50_000, rng)
    counts = np.bincount((x * p + y).ravel(), minlength=p * p)
    probs = [law.get((i // p, i % p), 0) for i in range(p * p)]
    assert chi2_expected_pvalue(counts, probs) > 1e-3


def test_scalar_sampler_matches_exact_law(rng):
    p, q = 3, 2
    law = joint_distribution_exact(p, q, "definition")
    c = Counter()
    for i in range(6000):
        pair = sample_pqr(p, q, 1, "definition", rng.child(i))
        c[pair.x[0], pair.y[0]] += 1
    cells = sorted(law)
    assert chi2_expected_pvalue([c[k] for k in cells], [law[k] for k in cells]) > 1e-3


def test_pqr_rejects_bad_parameters(rng):
    with pytest.raises(ParameterError):
        sample_pqr(4, 3, 2, "definition", rng)
    with pytest.raises(ParameterError):
        sample_pqr(3, 5, 2, "claim", rng)
    with pytest.raises(ParameterError):
        sample_pqr(5, 3, 2, "other", rng)


# ---------------------------------------------------------------- collisions

def test_wilson_matches_scipy():
    for hits, n in [(0, 100), (3, 2000), (50, 100), (100, 100)]:
        lo, hi = wilson_interval(hits, n, 0.99)
        ci = stats.binomtest(hits, n).proportion_ci(confidence_level=0.99, method="wilson")
        assert lo == pytest.approx(ci.low, abs=1e-9)
        assert hi == pytest.approx(ci.high, abs=1e-9)


def test_always_fail_has_no_collisions(rng):
    setup = CollisionSetup("kxor", 3, 16, m=6, t=2)
    est = estimate_collision(always_fail_oracle(), setup, 200, rng)
    assert est.collisions == 0 and est.successes == 0
    assert est.oracle_calls == 400


def test_unique_solutions_collide(rng):
    """At t = 0 both lists are invertible images of one z; a unique solution must collide."""
    setup = CollisionSetup("kxor", 2, 12, m=6, t=0)
    trials = 400
    est = estimate_collision(lexmin_oracle("kxor"), setup, trials, rng)
    unique = 0
    for i in range(trials):
        x, _ = setup.sample(rng.child(i).child(0)).instances(2)
        sols = [s for s in product(range(12), repeat=2) if s[0] < s[1]
                and x.elements[s[0]] == x.elements[s[1]]]
        unique += len(sols) == 1
    assert unique > 50
    assert est.collisions >= unique


def test_collision_trials_are_thread_invariant(rng):
    setup = CollisionSetup("kxor", 3, 24, m=6, t=1)
    a = estimate_collision(lexmin_oracle("kxor"), setup, 150, rng, threads=1)
    b = estimate_collision(lexmin_oracle("kxor"), setup, 150, rng, threads=3)
    assert (a.collisions, a.successes) == (b.collisions, b.successes)


def test_collision_rate_falls_with_t(rng):
    oracle = lexmin_oracle("kxor")
    ts = [0, 1, 2, 3, 4, 5]
    rates = [estimate_collision(oracle, CollisionSetup("kxor", 3, 64, m=10, t=t), 1500,
                                rng.child(t)).estimate for t in ts]
    rho = stats.spearmanr(ts, rates).statistic
    assert rates[0] > rates[-1]
    assert rho < 0


def test_xor_collision_bound_small(rng):
    setup = CollisionSetup("kxor", 3, 64, m=10, t=3)
    est = estimate_collision(lexmin_oracle("kxor"), setup, 1500, rng)
    assert est.paper_bound == 2.0 ** -4
    assert est.ci_hi <= est.paper_bound


def test_arith_collision_within_slack(rng):
    setup = CollisionSetup("kmsum", 3, 16, p=31, q=5)
    est = estimate_collision(lexmin_oracle("kmsum"), setup, 400, rng)
    expected = 32 * (log(5) / 25 + 31 / (5 * comb(16, 3)))
    assert est.full_bound == pytest.approx(expected)
    assert est.ci_hi <= est.full_bound


# ---------------------------------------------------------------- magnitudes

def test_zero_character_has_magnitude_one():
    res = magnitude_exact(Character((0, 0), 3), 3, 2, 2)
    assert res.value == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("p,q,S", [
    (3, 2, (1, 0)), (3, 2, (1, 2)), (3, 2, (2,)), (5, 3, (1,)), (5, 3, (3,)),
    (3, 2, (1, 1, 2)),
])
def test_exact_magnitude_matches_brute_force(p, q, S):
    expect = brute_magnitude(S, p, q)
    got = magnitude_exact(Character(S, p), p, q, len(S))
    assert abs(expect.imag) < 1e-9
    assert got.value == pytest.approx(expect.real, abs=1e-12)


def test_pinned_magnitude_value():
    # frozen from brute_magnitude((1, 0), 3, 2)
    assert magnitude_exact(Character((1, 0), 3), 3, 2, 2).value == pytest.approx(0.3125, abs=1e-12)
    assert magnitude_via_zero_pairs(Character((1, 0), 3), 3, 2) == Fraction(5, 16)


@pytest.mark.parametrize("p,q,r", [(3, 2, 2), (5, 3, 2), (7, 3, 1)])
def test_zero_pair_identity(p, q, r):
    for S in projective_representatives(p, r):
        assert float(magnitude_via_zero_pairs(S, p, q)) == pytest.approx(
            magnitude_exact(S, p, q, r).value, abs=1e-12)


def test_magnitude_depends_on_projective_class():
    p, q = 5, 3
    S = Character((1, 2), p)
    base = magnitude_exact(S, p, q, 2).value
    for g in range(2, p):
        assert magnitude_exact(S.scaled(g), p, q, 2).value == pytest.approx(base, abs=1e-12)


def test_cross_magnitude_orthogonality():
    p, q, r = 3, 2, 2
    reps = projective_representatives(p, r)
    for S in reps:
        for S2 in reps:
            value = magnitude_cross(S, S2, p, q, r)
            if S == S2:
                assert value.real == pytest.approx(magnitude_exact(S, p, q, r).value, abs=1e-12)
            else:
                assert abs(value) < 1e-12
        for g in range(2, p):
            # a unit multiple is absorbed by the uniform gamma
            assert magnitude_cross(S, S.scaled(g), p, q, r).real == pytest.approx(
                magnitude_exact(S, p, q, r).value, abs=1e-12)


def test_projective_representatives_cover_orbits():
    p, r = 5, 2
    reps = projective_representatives(p, r)
    assert len(reps) == (p**r - 1) // (p - 1)
    orbits = {frozenset(S.scaled(g).S for g in range(1, p)) for S in reps}
    assert len(orbits) == len(reps)
    assert sum(len(o) for o in orbits) == p**r - 1


@pytest.mark.parametrize("p,q,r", [(3, 2, 2), (3, 2, 3), (5, 3, 2), (7, 3, 2)])
def test_magnitude_scan_within_slack(p, q, r):
    scan = magnitude_bound_scan(p, q, r)
    assert scan.within_slack
    assert scan.max_abs <= 1.0


def test_monte_carlo_magnitude_agrees(rng):
    S = Character((1, 2), 5)
    exact = magnitude_exact(S, 5, 3, 2).value
    mc = magnitude_monte_carlo(S, 5, 3, 4000, rng)
    assert abs(mc.value - exact) <= mc.ci_half_width


def test_exact_budget_guard():
    with pytest.raises(ParameterError):
        magnitude_exact(Character((1,) * 6, 7), 7, 3, 6)


# ---------------------------------------------------------------- number theory

def test_quadruple_fixtures():
    assert count_quadruples(2, "product") == 10
    assert count_quadruples(2, "sum", 1) == 6


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 9), st.integers(0, 80))
def test_quadruples_match_naive(q, N):
    assert count_quadruples(q, "product") == naive_quadruples(q, "product")
    assert count_quadruples(q, "sum", N) == naive_quadruples(q, "sum", N)


def test_quadruple_scan():
    for q in [x for x in range(16, 1025) if is_prime(x)][::8]:
        assert count_quadruples(q, "product") < 4 * q * q * log(q)
        assert count_quadruples(q, "sum", q * next_prime(q)) < 4 * q * q * log(q)


def test_aligned_baseline_q2():
    stats2 = aligned_sum_stats_exact(3, 2)
    assert stats2.histogram == {2: len(units(6))}


def test_aligned_mean_large_p(rng):
    s = aligned_sum_stats(997, 3, 2000, rng)
    assert s.mean <= 2 * s.mean_shape
    assert 0 in aligned_set(5, 997, 3)


def test_aligned_exact_vs_sampled(rng):
    exact = aligned_sum_stats_exact(13, 13)
    sampled = aligned_sum_stats(13, 13, 3000, rng)
    assert exact.max_size <= 13
    assert abs(sampled.mean - exact.mean) < 0.2
    assert exact.second_moment <= 8 * exact.second_shape + exact.mean_shape**2
