"""Verification harness for the obfuscation bounds.

Correlated-pair samplers, collision estimation against a given oracle, exact
character magnitudes at tiny parameters, and the quadruple counts behind the
second-moment bound on rounding collisions.
"""

from __future__ import annotations

import cmath
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from math import comb, log, sqrt
from statistics import NormalDist
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .algebra import apply_f2_many, round_div, sample_full_rank, sample_unit, units
from .core import (
    MAX_WIDTH,
    MSumInstance,
    Oracle,
    ParameterError,
    SeededRng,
    XorInstance,
    canonical,
    checked_oracle,
)
from .algebra import is_prime

EXACT_BUDGET = 10**8
MAGNITUDE_SLACK = 32
QUADRUPLE_SLACK = 4
QUADRUPLE_MAX_Q = 1 << 12


@dataclass(frozen=True)
class PairSample:
    """Two correlated element lists of equal length over the same domain."""

    x: Tuple[int, ...]
    y: Tuple[int, ...]
    domain: str  # "f2" or "zp"
    size: int  # width m for "f2", modulus p for "zp"
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise ParameterError("pair lists differ in length")

    @property
    def r(self) -> int:
        return len(self.x)

    def instances(self, k: int):
        if self.domain == "f2":
            return XorInstance(k, self.size, self.x), XorInstance(k, self.size, self.y)
        return MSumInstance(k, self.size, self.x), MSumInstance(k, self.size, self.y)


@dataclass(frozen=True)
class Character:
    """Frequency vector ``S`` in ``Z_p^r``."""

    S: Tuple[int, ...]
    p: int

    def __post_init__(self):
        object.__setattr__(self, "S", tuple(int(s) % self.p for s in self.S))

    @property
    def is_zero(self) -> bool:
        return not any(self.S)

    def scaled(self, g: int) -> "Character":
        return Character(tuple(g * s for s in self.S), self.p)

    def proportional_to(self, other: "Character") -> bool:
        """True iff ``other = g * self`` for some unit ``g``."""
        return any(self.scaled(g).S == other.S for g in range(1, self.p))

    def __call__(self, x: Sequence[int]) -> complex:
        return cmath.exp(2j * cmath.pi * (sum(s * v for s, v in zip(self.S, x)) % self.p) / self.p)


@dataclass
class MagnitudeResult:
    S: Character
    p: int
    q: int
    r: int
    value: float
    imag: float = 0.0
    method: str = "exact"
    trials: Optional[int] = None
    ci_half_width: Optional[float] = None


@dataclass
class CollisionEstimate:
    family: str
    k: int
    size_param: int  # n (XOR) or p*q (arithmetic)
    m_or_p: int
    q: Optional[int]
    t: Optional[int]
    r: int
    trials: int
    collisions: int
    successes: int
    oracle_calls: int
    estimate: float
    ci_lo: float
    ci_hi: float
    paper_bound: float
    full_bound: float
    slack: float = 1.0

    def __post_init__(self):
        if not 0 <= self.collisions <= self.trials:
            raise ParameterError("collisions must lie in [0, trials]")


def wilson_interval(successes: int, trials: int, confidence: float = 0.99) -> Tuple[float, float]:
    if trials <= 0:
        return 0.0, 1.0
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    phat = successes / trials
    denom = 1 + z * z / trials
    centre = (phat + z * z / (2 * trials)) / denom
    half = z * sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


# ---------------------------------------------------------------- samplers

def sample_mrt(m: int, r: int, t: int, rng: SeededRng) -> PairSample:
    """``(T1 z, T2 z)`` for uniform ``z`` of width ``m + t`` and independent full-rank maps."""
    if m < 1 or t < 0 or m + t > MAX_WIDTH:
        raise ParameterError(f"need m >= 1, t >= 0, m + t <= 63; got m={m}, t={t}")
    if r < 1:
        raise ParameterError("r must be positive")
    z = rng.child(0).words(m + t, r)
    T1 = sample_full_rank(m, m + t, rng.child(1))
    T2 = sample_full_rank(m, m + t, rng.child(2))
    return PairSample(tuple(apply_f2_many(T1, z)), tuple(apply_f2_many(T2, z)), "f2", m,
                      {"sampler": "mrt", "t": t, "T1": T1.rows, "T2": T2.rows})


def _check_pq_primes(p: int, q: int) -> None:
    if not (is_prime(p) and is_prime(q)) or p < q:
        raise ParameterError(f"need primes p >= q, got p={p}, q={q}")


def noise_set(q: int) -> range:
    """Rounding offsets: the integers in ``[-q/2, q/2)``."""
    return range(-(q // 2), q - q // 2)


def arith_map(z: int, alpha: int, gamma: int, p: int, q: int) -> int:
    return gamma * round_div(alpha * z % (p * q), q) % p


def claim_map(x: int, v: int, alpha: int, gamma: int, gamma2: int, p: int, q: int) -> int:
    return (gamma * x + gamma2 * round_div(alpha * v, q)) % p


def sample_pqr(p: int, q: int, r: int, mode: str, rng: SeededRng) -> PairSample:
    """Correlated pair over ``Z_p^r``.

    ``definition``: one uniform ``z`` in ``Z_{pq}^r`` rounded through two
    independent key pairs.  ``claim``: uniform ``x``, uniform offsets ``v``
    and ``y_i = gamma x_i + gamma' round(alpha v_i / q) mod p``.
    """
    _check_pq_primes(p, q)
    if r < 1:
        raise ParameterError("r must be positive")
    pq = p * q
    if mode == "definition":
        z = rng.child(0).integers(0, pq, r)
        a1, a2 = sample_unit(pq, rng.child(1)), sample_unit(pq, rng.child(2))
        g1, g2 = rng.child(3).randrange(1, p), rng.child(4).randrange(1, p)
        x = tuple(arith_map(v, a1, g1, p, q) for v in z)
        y = tuple(arith_map(v, a2, g2, p, q) for v in z)
        prov = {"sampler": "pqr", "mode": mode, "alpha": (a1, a2), "gamma": (g1, g2)}
    elif mode == "claim":
        x = tuple(rng.child(0).integers(0, p, r))
        lo = -(q // 2)
        v = [lo + d for d in rng.child(1).integers(0, q, r)]
        alpha = sample_unit(pq, rng.child(2))
        g, g2 = rng.child(3).randrange(1, p), rng.child(4).randrange(1, p)
        y = tuple(claim_map(xi, vi, alpha, g, g2, p, q) for xi, vi in zip(x, v))
        prov = {"sampler": "pqr", "mode": mode, "alpha": alpha, "gamma": (g, g2)}
    else:
        raise ParameterError(f"unknown mode {mode!r}")
    return PairSample(x, y, "zp", p, prov)


def joint_distribution_exact(p: int, q: int, mode: str) -> Dict[Tuple[int, int], Fraction]:
    """Exact law of ``(x_1, y_1)`` at ``r = 1`` by enumerating every random choice."""
    _check_pq_primes(p, q)
    pq = p * q
    U = units(pq)
    G = range(1, p)
    counts: Counter = Counter()
    if mode == "definition":
        for z in range(pq):
            for a1, a2 in product(U, U):
                for g1, g2 in product(G, G):
                    counts[arith_map(z, a1, g1, p, q), arith_map(z, a2, g2, p, q)] += 1
    elif mode == "claim":
        for x in range(p):
            for v in noise_set(q):
                for a in U:
                    for g, g2 in product(G, G):
                        counts[x, claim_map(x, v, a, g, g2, p, q)] += 1
    else:
        raise ParameterError(f"unknown mode {mode!r}")
    total = sum(counts.values())
    return {key: Fraction(c, total) for key, c in sorted(counts.items())}


def sample_pqr_batch(p: int, q: int, r: int, mode: str, count: int, rng: SeededRng):
    """``count`` independent pairs as two ``(count, r)`` arrays, one key set per row."""
    _check_pq_primes(p, q)
    pq = p * q
    g = rng.generator
    U = np.asarray(units(pq), dtype=np.int64)

    def rounded(w):
        return (2 * w + q) // (2 * q)

    if mode == "definition":
        z = g.integers(0, pq, size=(count, r))
        a1, a2 = (U[g.integers(0, len(U), size=(count, 1))] for _ in range(2))
        g1, g2 = (g.integers(1, p, size=(count, 1)) for _ in range(2))
        x = g1 * rounded(a1 * z % pq) % p
        y = g2 * rounded(a2 * z % pq) % p
    elif mode == "claim":
        x = g.integers(0, p, size=(count, r))
        v = g.integers(0, q, size=(count, r)) - q // 2
        a = U[g.integers(0, len(U), size=(count, 1))]
        g1, g2 = (g.integers(1, p, size=(count, 1)) for _ in range(2))
        y = (g1 * x + g2 * rounded(a * v)) % p
    else:
        raise ParameterError(f"unknown mode {mode!r}")
    return x, y


# ---------------------------------------------------------------- collisions

@dataclass(frozen=True)
class CollisionSetup:
    """Sampler parameters: ``family="kxor"`` uses (m, t); ``"kmsum"`` uses (p, q)."""

    family: str
    k: int
    r: int
    m: int = 0
    t: int = 0
    p: int = 0
    q: int = 0

    def sample(self, rng: SeededRng) -> PairSample:
        if self.family == "kxor":
            return sample_mrt(self.m, self.r, self.t, rng)
        if self.family == "kmsum":
            return sample_pqr(self.p, self.q, self.r, "definition", rng)
        raise ParameterError(f"unknown family {self.family!r}")

    def bounds(self, slack: float) -> Tuple[float, float]:
        """(single-pair bound, end-to-end bound) at these parameters."""
        C = comb(self.r, self.k)
        if self.family == "kxor":
            m, t = self.m, self.t
            pair = 2.0 ** (2 - 2 * t)
            full = 2.0 ** (-2 * t) + 2.0 ** (m - t) / C + 2.0 ** (-t + 1 - m)
            return pair, full
        p, q = self.p, self.q
        full = slack * (log(q) / q**2 + p / (q * C))
        return full, full


def _collision_trial(oracle: Oracle, setup: CollisionSetup, rng: SeededRng):
    pair = setup.sample(rng.child(0))
    x, y = pair.instances(setup.k)
    P = rng.child(1).permutation(setup.r)
    Q = rng.child(2).permutation(setup.r)
    Kx = oracle(x.with_elements([x.elements[j] for j in P]), rng.child(3))
    Ky = oracle(y.with_elements([y.elements[j] for j in Q]), rng.child(4))
    okx, oky = Kx is not None, Ky is not None
    if not (okx and oky):
        return okx + oky, False
    return 2, canonical(P[i] for i in Kx) == canonical(Q[i] for i in Ky)


def estimate_collision(oracle: Oracle, setup: CollisionSetup, trials: int, rng: SeededRng,
                       threads: int = 1, slack: float = MAGNITUDE_SLACK,
                       confidence: float = 0.99) -> CollisionEstimate:
    """Monte-Carlo estimate of ``Pr[P^-1 B(P x) = Q^-1 B(Q y)]`` with a Wilson interval.

    Trial ``i`` uses ``rng.child(i)`` regardless of ``threads``.
    """
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    checked = checked_oracle(oracle)
    run = lambda i: _collision_trial(checked, setup, rng.child(i))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(trials)))
    else:
        results = [run(i) for i in range(trials)]
    collisions = sum(hit for _, hit in results)
    successes = sum(s for s, _ in results)
    lo, hi = wilson_interval(collisions, trials, confidence)
    pair_bound, full = setup.bounds(slack)
    if setup.family == "kxor":
        size, m_or_p, q, t = setup.m + setup.t, setup.m, None, setup.t
    else:
        size, m_or_p, q, t = setup.p * setup.q, setup.p, setup.q, None
    return CollisionEstimate(setup.family, setup.k, size, m_or_p, q, t, setup.r, trials, collisions,
                             successes, 2 * trials, collisions / trials, lo, hi, pair_bound, full,
                             slack if setup.family == "kmsum" else 1.0)


# ---------------------------------------------------------------- magnitudes

def exact_cost(p: int, q: int, r: int) -> int:
    phi = len(units(p * q))
    return (p * q) ** r * phi * phi * (p - 1) ** 2


def _check_budget(p: int, q: int, r: int) -> None:
    _check_pq_primes(p, q)
    if exact_cost(p, q, r) > EXACT_BUDGET:
        raise ParameterError(f"exact enumeration at p={p}, q={q}, r={r} exceeds the budget")


def _key_tables(p: int, q: int):
    """For every key pair (alpha, gamma): the rounded image of each z in Z_pq."""
    pq = p * q
    z = np.arange(pq, dtype=np.int64)
    rounded = {a: ((2 * (a * z % pq) + q) // (2 * q)) for a in units(pq)}
    return {(a, g): (g * img) % p for a, img in rounded.items() for g in range(1, p)}


def _cross_moment(S: Sequence[int], S2: Sequence[int], p: int, q: int) -> complex:
    """``E[chi_S(x) conj(chi_S2(y))]`` under the definition sampler.

    Given both key pairs the coordinates are independent, so the expectation
    factors into a product of one-coordinate averages over ``z``.
    """
    tables = list(_key_tables(p, q).values())
    roots = np.exp(2j * np.pi * np.arange(p) / p)
    total = 0j
    for X in tables:
        for Y in tables:
            term = 1 + 0j
            for s, s2 in zip(S, S2):
                if s == 0 and s2 == 0:
                    continue
                term *= roots[(s * X - s2 * Y) % p].mean()
            total += term
    return total / (len(tables) ** 2)


def magnitude_exact(S: Character, p: int, q: int, r: int) -> MagnitudeResult:
    """Exact ``E[chi_S(x) conj(chi_S(y))]`` over every ``z``, ``alpha``, ``gamma`` choice."""
    if len(S.S) != r or S.p != p:
        raise ParameterError("character does not match (p, r)")
    _check_budget(p, q, r)
    value = _cross_moment(S.S, S.S, p, q)
    if abs(value.imag) >= 1e-9:
        raise AssertionError(f"magnitude has imaginary part {value.imag}")
    return MagnitudeResult(S, p, q, r, float(value.real), float(value.imag))


def magnitude_cross(S: Character, S2: Character, p: int, q: int, r: int) -> complex:
    if len(S.S) != r or len(S2.S) != r:
        raise ParameterError("characters do not match r")
    _check_budget(p, q, r)
    return _cross_moment(S.S, S2.S, p, q)


def zero_pair_probability(S: Character, p: int, q: int) -> Fraction:
    """Exact ``Pr[<S,x> = <S,y> = 0]`` under the claim sampler.

    Integer counting: a dynamic programme over coordinates tracks the joint
    distribution of the two inner products for every key triple.
    """
    _check_pq_primes(p, q)
    pq = p * q
    V = list(noise_set(q))
    total = Fraction(0)
    key_count = 0
    for a in units(pq):
        for g in range(1, p):
            for g2 in range(1, p):
                key_count += 1
                dist = {(0, 0): 1}
                for s in S.S:
                    step: Counter = Counter()
                    for x in range(p):
                        for v in V:
                            y = claim_map(x, v, a, g, g2, p, q)
                            step[s * x % p, s * y % p] += 1
                    nxt: Counter = Counter()
                    for (u1, u2), c1 in dist.items():
                        for (d1, d2), c2 in step.items():
                            nxt[(u1 + d1) % p, (u2 + d2) % p] += c1 * c2
                    dist = nxt
                total += Fraction(dist.get((0, 0), 0), (p * q) ** len(S.S))
    return total / key_count


def magnitude_via_zero_pairs(S: Character, p: int, q: int) -> Fraction:
    """``(p^2 Pr[<S,x> = <S,y> = 0] - 1) / (p - 1)^2``, exact."""
    return (p * p * zero_pair_probability(S, p, q) - 1) / Fraction((p - 1) ** 2)


def projective_representatives(p: int, r: int) -> List[Character]:
    """One nonzero ``S`` per ``{g S}`` orbit: the first nonzero coordinate is 1."""
    reps = []
    for lead in range(r):
        for tail in product(range(p), repeat=r - lead - 1):
            reps.append(Character((0,) * lead + (1,) + tail, p))
    return reps


@dataclass
class BoundScan:
    p: int
    q: int
    r: int
    rows: List[MagnitudeResult]
    slack: float = MAGNITUDE_SLACK

    @property
    def max_abs(self) -> float:
        return max(abs(row.value) for row in self.rows)

    @property
    def scaled_max(self) -> float:
        """``max |M| * pq``; compared against ``slack``."""
        return self.max_abs * self.p * self.q

    @property
    def reference(self) -> float:
        return 1.0 / (self.p * self.q)

    @property
    def within_slack(self) -> bool:
        return self.scaled_max <= self.slack


def magnitude_bound_scan(p: int, q: int, r: int, slack: float = MAGNITUDE_SLACK) -> BoundScan:
    _check_budget(p, q, r)
    rows = [magnitude_exact(S, p, q, r) for S in projective_representatives(p, r)]
    return BoundScan(p, q, r, rows, slack)


def magnitude_monte_carlo(S: Character, p: int, q: int, trials: int, rng: SeededRng) -> MagnitudeResult:
    """Sample mean of ``Re chi_S(x) conj(chi_S(y))`` with a 99% normal half-width."""
    r = len(S.S)
    vals = []
    for i in range(trials):
        pair = sample_pqr(p, q, r, "definition", rng.child(i))
        vals.append((S(pair.x) * S(pair.y).conjugate()).real)
    arr = np.asarray(vals)
    half = NormalDist().inv_cdf(0.995) * float(arr.std(ddof=1)) / sqrt(trials) if trials > 1 else 1.0
    return MagnitudeResult(S, p, q, r, float(arr.mean()), 0.0, "monte-carlo", trials, half)


# ---------------------------------------------------------------- number theory

def _product_histogram(q: int) -> np.ndarray:
    a = np.arange(q, dtype=np.int64)
    return np.bincount(np.outer(a, a).ravel(), minlength=(q - 1) ** 2 + 1)


def count_quadruples(q: int, mode: str, N: Optional[int] = None) -> int:
    """Exact ``#{(a,b,c,d) in [0,q)^4}`` with ``ab = cd`` (product) or ``ab + cd = N`` (sum)."""
    if not 1 <= q <= QUADRUPLE_MAX_Q:
        raise ParameterError(f"q must be in [1, {QUADRUPLE_MAX_Q}]")
    h = _product_histogram(q).astype(object)
    if mode == "product":
        return int(sum(c * c for c in h if c))
    if mode == "sum":
        if N is None or N < 0:
            raise ParameterError("sum mode needs N >= 0")
        top = len(h) - 1
        return int(sum(h[v] * h[N - v] for v in range(max(0, N - top), min(N, top) + 1)))
    raise ParameterError(f"unknown mode {mode!r}")


def count_quadruples_naive(q: int, mode: str, N: Optional[int] = None) -> int:
    """Direct four-fold loop; reference for small ``q``."""
    pairs = [a * b for a in range(q) for b in range(q)]
    if mode == "product":
        return sum(1 for u in pairs for v in pairs if u == v)
    return sum(1 for u in pairs for v in pairs if u + v == N)


def aligned_set(alpha: int, p: int, q: int) -> List[int]:
    """Offsets ``s`` whose multiple ``alpha s`` lands within ``q`` of a multiple of ``pq``."""
    pq = p * q
    return [s for s in noise_set(q) if (alpha * s) % pq < q or (alpha * s) % pq > pq - q]


@dataclass
class AlignedStats:
    p: int
    q: int
    samples: int
    mean: float
    second_moment: float
    max_size: int
    histogram: Dict[int, int]
    method: str = "monte-carlo"

    @property
    def mean_shape(self) -> float:
        return 1 + self.q / self.p

    @property
    def second_shape(self) -> float:
        return self.q**2 * log(self.q) / len(units(self.p * self.q))


def _aligned_summary(p, q, sizes, method) -> AlignedStats:
    arr = np.asarray(sizes, dtype=float)
    hist = dict(sorted(Counter(sizes).items()))
    return AlignedStats(p, q, len(sizes), float(arr.mean()), float((arr**2).mean()),
                        int(arr.max()), hist, method)


def aligned_sum_stats(p: int, q: int, trials: int, rng: SeededRng) -> AlignedStats:
    """Monte-Carlo over units ``alpha`` of ``|aligned_set(alpha)|``."""
    _check_pq_primes(p, q)
    sizes = [len(aligned_set(sample_unit(p * q, rng.child(i)), p, q)) for i in range(trials)]
    return _aligned_summary(p, q, sizes, "monte-carlo")


def aligned_sum_stats_exact(p: int, q: int) -> AlignedStats:
    _check_pq_primes(p, q)
    sizes = [len(aligned_set(a, p, q)) for a in units(p * q)]
    return _aligned_summary(p, q, sizes, "exact")
