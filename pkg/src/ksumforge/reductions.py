"""Obfuscation-based sparse-to-dense reductions, generic over any oracle.

All loops draw iteration ``l``'s randomness from ``rng.child(l)`` so results
do not depend on how many iterations ran before.  Every oracle answer is
revalidated; invalid answers count as failures.

Reductions accept an optional ``accept`` predicate on lifted solutions.  A
solution that is valid but rejected by ``accept`` does not stop the loop.  The
end-to-end pipelines use it to push their outer membership tests down into the
inner iteration loop.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import reduce
from math import ceil, log, sqrt
from operator import xor
from typing import Callable, List, Optional

from .algebra import (
    F2Matrix,
    Permutation,
    SumObfuscationKeys,
    apply_f2,
    apply_f2_many,
    center,
    is_prime,
    mulmod_wide,
    round_div,
    sample_full_rank,
    sample_permutation,
    sample_prime,
    sample_unit,
)
from .core import (
    InvariantViolation,
    KTuple,
    MSumInstance,
    Oracle,
    Outcome,
    ParameterError,
    SeededRng,
    SumInstance,
    XorInstance,
    canonical,
    checked_oracle,
    validate,
)

Accept = Optional[Callable[[KTuple], bool]]


@dataclass(frozen=True)
class XorObfuscation:
    T: F2Matrix
    P: Permutation

    @property
    def t(self) -> int:
        return self.T.cols - self.T.m


@dataclass(frozen=True)
class SumObfuscation:
    keys: SumObfuscationKeys
    P: Permutation


@dataclass
class ReductionBudget:
    """Iteration count ``L`` plus optional caps on oracle calls and seconds."""

    L: int = 1
    beta_hint: Optional[float] = None
    call_cap: Optional[int] = None
    time_cap: Optional[float] = None

    def __post_init__(self):
        if self.L < 1:
            raise ParameterError("budget.L must be >= 1")


@dataclass
class ReductionReport:
    outcome: Outcome = None
    calls: int = 0
    successes: int = 0
    candidates: int = 0
    lifts: int = 0
    wall_time: float = 0.0
    iterations: int = 0
    solutions: List[KTuple] = field(default_factory=list)
    note: str = ""

    def check(self) -> None:
        if not self.calls >= self.successes >= (1 if self.outcome is not None else 0):
            raise InvariantViolation(f"inconsistent report counters: {self}")


class BudgetExhausted(Exception):
    pass


class CallLedger:
    """Counts calls into a base oracle and enforces a shared cap."""

    def __init__(self, oracle: Oracle, cap: Optional[int] = None):
        self.inner = oracle
        self.cap = cap
        self.calls = 0
        self.successes = 0

    def oracle(self) -> Oracle:
        def run(instance, rng):
            if self.cap is not None and self.calls >= self.cap:
                raise BudgetExhausted
            self.calls += 1
            out = self.inner(instance, rng)
            if out is not None:
                self.successes += 1
            return out

        return Oracle(run, name=f"ledger({self.inner.name})", family=self.inner.family)


def _call(oracle: Oracle, instance, rng: SeededRng, accept: Accept) -> Outcome:
    checked = checked_oracle(oracle)
    return checked(instance, rng, accept=accept)


def _out_of_budget(report: ReductionReport, budget: ReductionBudget, start: float) -> bool:
    if budget.call_cap is not None and report.calls >= budget.call_cap:
        return True
    return budget.time_cap is not None and time.perf_counter() - start >= budget.time_cap


# ------------------------------------------------------------------ k-XOR

def obfuscate_xor(z: XorInstance, m: int, rng: SeededRng):
    """Return ``(x, obf)`` with ``x_i = T(z_{P(i)})`` for a random full-rank ``T``."""
    if not 1 <= m <= z.n:
        raise ParameterError(f"need 1 <= m <= n, got m={m}, n={z.n}")
    T = sample_full_rank(m, z.n, rng.child(0))
    P = sample_permutation(z.r, rng.child(1))
    x = apply_f2_many(T, [z.elements[j] for j in P.image])
    return XorInstance(z.k, m, tuple(x)), XorObfuscation(T, P)


def default_xor_iterations(n: int, m: int, beta: float = 1.0) -> int:
    """``L = beta * 2^{n-m-2}``, at least one."""
    return max(1, ceil(beta * 2.0 ** (n - m - 2)))


def xor_reduce(z: XorInstance, m: int, oracle: Oracle, budget: ReductionBudget,
               rng: SeededRng, run_all: bool = False, accept: Accept = None) -> ReductionReport:
    """Solve width-``n`` k-XOR through an oracle for width ``m``."""
    if not 1 <= m <= z.n:
        raise ParameterError(f"need 1 <= m <= n, got m={m}, n={z.n}")
    oracle.check_family(XorInstance(z.k, m, (0,) * z.r))
    start = time.perf_counter()
    report = ReductionReport()
    for it in range(budget.L):
        if _out_of_budget(report, budget, start):
            report.note = "budget cap reached"
            break
        it_rng = rng.child(it)
        x, obf = obfuscate_xor(z, m, it_rng.child(0))
        lift = lambda K: canonical(obf.P.image[i] for i in K)

        def inner_accept(K, lift=lift):
            full = lift(K)
            return validate(z, full) and (accept is None or accept(full))

        report.calls += 1
        report.iterations += 1
        K = _call(oracle, x, it_rng.child(1), inner_accept if oracle.forwards_accept else None)
        if K is None:
            continue
        report.successes += 1
        lifted = lift(K)
        folded = reduce(xor, (z.elements[i] for i in lifted), 0)
        if apply_f2(obf.T, folded) != 0:
            raise InvariantViolation("lifted tuple does not vanish under T")
        report.candidates += 1
        if not validate(z, lifted):
            continue
        report.lifts += 1
        if accept is not None and not accept(lifted):
            continue
        if lifted not in report.solutions:
            report.solutions.append(lifted)
        if report.outcome is None:
            report.outcome = lifted
        if not run_all:
            break
    report.wall_time = time.perf_counter() - start
    report.check()
    return report


def _append_and_permute(elements, extra, rng: SeededRng):
    """Append ``extra`` to ``elements`` and shuffle; return (list, origin)."""
    pool = list(elements) + list(extra)
    perm = rng.permutation(len(pool))
    return [pool[j] for j in perm], perm


def pad_reduce_xor(z: XorInstance, d: int, oracle: Oracle, rng: SeededRng,
                   accept: Accept = None) -> ReductionReport:
    """One oracle call on ``z`` padded to ``d r`` vectors; keep only answers inside ``z``."""
    if d < 1:
        raise ParameterError("d must be >= 1")
    start = time.perf_counter()
    r = z.r
    extra = rng.child(0).words(z.n, (d - 1) * r)
    padded, origin = _append_and_permute(z.elements, extra, rng.child(1))
    big = XorInstance(z.k, z.n, tuple(padded))
    report = _single_padded_call(z, big, origin, oracle, rng.child(2), accept)
    report.wall_time = time.perf_counter() - start
    return report


def _single_padded_call(z, big, origin, oracle, rng, accept) -> ReductionReport:
    r = z.r
    back = lambda K: canonical(origin[i] for i in K)

    def inside(K):
        return all(origin[i] < r for i in K)

    def inner_accept(K):
        return inside(K) and (accept is None or accept(back(K)))

    report = ReductionReport(calls=1, iterations=1)
    K = _call(oracle, big, rng, inner_accept if oracle.forwards_accept else None)
    if K is None:
        report.check()
        return report
    report.successes = 1
    report.candidates = 1
    if inside(K):
        orig = back(K)
        if not validate(z, orig):
            raise InvariantViolation("padded solution does not map back to a solution")
        report.lifts = 1
        if accept is None or accept(orig):
            report.outcome = orig
            report.solutions.append(orig)
    report.check()
    return report


def xor_theorem_pipeline(z: XorInstance, m: int, oracle: Oracle, budget: ReductionBudget,
                         rng: SeededRng, membership: str = "per_iteration") -> ReductionReport:
    """Pad ``z`` to ``k r`` vectors, run the obfuscation loop, keep answers inside ``z``.

    ``membership="per_iteration"`` tests membership on every lifted solution
    (the loop keeps going past padded-only solutions); ``"final"`` lets the
    loop stop at its first solution and tests membership once.
    """
    if not z.n / 2 <= m <= z.n:
        raise ParameterError(f"need n/2 <= m <= n, got m={m}, n={z.n}")
    if membership not in ("per_iteration", "final"):
        raise ParameterError(f"unknown membership mode {membership!r}")
    start = time.perf_counter()
    r, k = z.r, z.k
    extra = rng.child(0).words(z.n, (k - 1) * r)
    padded, origin = _append_and_permute(z.elements, extra, rng.child(1))
    big = XorInstance(k, z.n, tuple(padded))
    inside = lambda K: all(origin[i] < r for i in K)
    inner = xor_reduce(big, m, oracle, budget, rng.child(2),
                       accept=inside if membership == "per_iteration" else None)
    report = ReductionReport(calls=inner.calls, successes=inner.successes,
                             candidates=inner.candidates, lifts=inner.lifts,
                             iterations=inner.iterations, note=inner.note)
    if inner.outcome is not None and inside(inner.outcome):
        orig = canonical(origin[i] for i in inner.outcome)
        if not validate(z, orig):
            raise InvariantViolation("pipeline solution does not validate")
        report.outcome = orig
        report.solutions.append(orig)
    report.wall_time = time.perf_counter() - start
    report.check()
    return report


# ------------------------------------------------------------------ k-MSUM

def _check_pq(p: int, q: int) -> None:
    if not (is_prime(p) and is_prime(q)) or p < q:
        raise ParameterError(f"need primes p >= q, got p={p}, q={q}")


def obfuscate_value(z: int, alpha: int, gamma: int, p: int, q: int) -> int:
    """``gamma * round((alpha z mod pq) / q) mod p``."""
    return gamma * round_div(mulmod_wide(alpha, z, p * q), q) % p


def obfuscate_msum(z: MSumInstance, p: int, q: int, rng: SeededRng):
    """Map a mod-``pq`` instance to a mod-``p`` one with random ``alpha``, ``gamma``, ``P``."""
    _check_pq(p, q)
    if z.L != p * q:
        raise ParameterError(f"instance modulus {z.L} != p*q = {p * q}")
    alpha = sample_unit(p * q, rng.child(0))
    gamma = rng.child(1).randrange(1, p)
    P = sample_permutation(z.r, rng.child(2))
    y = [obfuscate_value(z.elements[j], alpha, gamma, p, q) for j in P.image]
    return MSumInstance(z.k, p, tuple(y)), SumObfuscation(SumObfuscationKeys(alpha, gamma, p, q), P)


def default_msum_iterations(k: int, q: int, beta: float = 1.0, c: float = 0.25) -> int:
    """``L = c beta q / (sqrt(k) ln q)``, at least one."""
    return max(1, ceil(c * beta * q / (sqrt(k) * log(q))))


def msum_reduce(z: MSumInstance, p: int, q: int, oracle: Oracle, budget: ReductionBudget,
                rng: SeededRng, run_all: bool = False, accept: Accept = None) -> ReductionReport:
    """Solve k-MSUM mod ``pq`` through an oracle for k-MSUM mod ``p``."""
    _check_pq(p, q)
    if z.L != p * q:
        raise ParameterError(f"instance modulus {z.L} != p*q = {p * q}")
    oracle.check_family(MSumInstance(z.k, p, (0,) * z.r))
    start = time.perf_counter()
    report = ReductionReport()
    for it in range(budget.L):
        if _out_of_budget(report, budget, start):
            report.note = "budget cap reached"
            break
        it_rng = rng.child(it)
        y, obf = obfuscate_msum(z, p, q, it_rng.child(0))
        lift = lambda K, P=obf.P: canonical(P.image[i] for i in K)

        def inner_accept(K, lift=lift):
            full = lift(K)
            return validate(z, full) and (accept is None or accept(full))

        report.calls += 1
        report.iterations += 1
        K = _call(oracle, y, it_rng.child(1), inner_accept if oracle.forwards_accept else None)
        if K is None:
            continue
        report.successes += 1
        report.candidates += 1
        lifted = lift(K)
        if not validate(z, lifted):
            continue
        report.lifts += 1
        if accept is not None and not accept(lifted):
            continue
        if lifted not in report.solutions:
            report.solutions.append(lifted)
        if report.outcome is None:
            report.outcome = lifted
        if not run_all:
            break
    report.wall_time = time.perf_counter() - start
    report.check()
    return report


def sum_to_msum(z: SumInstance, M: int, oracle: Oracle, rng: SeededRng,
                accept: Accept = None) -> ReductionReport:
    """Solve k-SUM over the integers with one call to a k-MSUM mod ``M`` oracle.

    Filters to a centred window of width ``M``, keeps the first
    ``r' = ceil(r M / 4N)`` survivors, masks them with shares of zero, and
    checks the traced tuple over the integers.
    """
    N, r, k = z.N, z.r, z.k
    if not 1 <= M <= 2 * N + 1:
        raise ParameterError(f"need 1 <= M <= 2N+1, got M={M}")
    start = time.perf_counter()
    report = ReductionReport()
    r_prime = -(-r * M // (4 * N))
    if M % 2:
        lo, hi = -(M - 1) // 2, (M - 1) // 2
    else:
        lo, hi = -M // 2, M // 2 - 1
    kept = [i for i, v in enumerate(z.elements) if lo <= v <= hi]
    if len(kept) < r_prime or r_prime < k:
        report.note = "r1 < r'"
        report.wall_time = time.perf_counter() - start
        return report
    kept = kept[:r_prime]
    u = [z.elements[i] for i in kept]
    y = [v % M for v in u]
    mask_rng = rng.child(0)
    shares = mask_rng.integers(0, M, k - 1) if k > 1 else []
    shares.append((-sum(shares)) % M)
    choice = mask_rng.integers(0, k, r_prime)
    x = [(yi + shares[j]) % M for yi, j in zip(y, choice)]
    masked = MSumInstance(k, M, tuple(x))
    back = lambda K: canonical(kept[i] for i in K)

    def integer_ok(K):
        return sum(z.elements[i] for i in K) == 0

    def inner_accept(K):
        orig = back(K)
        return integer_ok(orig) and (accept is None or accept(orig))

    report.calls = 1
    report.iterations = 1
    K = _call(oracle, masked, rng.child(1), inner_accept if oracle.forwards_accept else None)
    if K is not None:
        report.successes = 1
        report.candidates = 1
        orig = back(K)
        if integer_ok(orig):
            report.lifts = 1
            if accept is None or accept(orig):
                report.outcome = orig
                report.solutions.append(orig)
    report.wall_time = time.perf_counter() - start
    report.check()
    return report


def _embed(orig, r_target: int, draw, fits, rng: SeededRng):
    """Uniform ``r_target``-list from ``draw`` with ``orig`` placed in random slots
    whose drawn values satisfy ``fits``.  Returns (list, origin) or ``None``."""
    pool = draw(rng.child(0), r_target)
    slots = [i for i, v in enumerate(pool) if fits(v)]
    if len(slots) < len(orig):
        return None
    chosen = rng.child(1).permutation(len(slots))[: len(orig)]
    origin = [len(orig)] * r_target  # anything >= r marks padding
    for i, s in enumerate(chosen):
        pool[slots[s]] = orig[i]
        origin[slots[s]] = i
    return pool, origin


def pad_reduce_sum(z, r_target: int, oracle: Oracle, rng: SeededRng,
                   target_bound: Optional[int] = None, accept: Accept = None) -> ReductionReport:
    """One oracle call on ``z`` padded to ``r_target`` uniform elements.

    For SUM instances ``target_bound`` (default ``z.N``) may exceed ``z.N``:
    the padded instance is then uniform on ``[-target_bound, target_bound]``
    and the original elements occupy random slots whose drawn value already
    lies in ``[-N, N]``.
    """
    if r_target < z.r:
        raise ParameterError("r_target must be >= r")
    start = time.perf_counter()
    if isinstance(z, SumInstance):
        bound = z.N if target_bound is None else target_bound
        if bound < z.N:
            raise ParameterError("target_bound must be >= N")
        draw = lambda g, n: g.integers(-bound, bound + 1, n)
        fits = lambda v: abs(v) <= z.N
        make = lambda els: SumInstance(z.k, bound, tuple(els))
    elif isinstance(z, MSumInstance):
        if target_bound not in (None, z.L):
            raise ParameterError("MSUM padding keeps the modulus")
        draw = lambda g, n: g.integers(0, z.L, n)
        fits = lambda v: True
        make = lambda els: MSumInstance(z.k, z.L, tuple(els))
    else:
        raise ParameterError("pad_reduce_sum takes SUM or MSUM instances")
    embedded = _embed(z.elements, r_target, draw, fits, rng.child(0))
    if embedded is None:
        report = ReductionReport(note="not enough in-range slots")
        report.wall_time = time.perf_counter() - start
        return report
    padded, origin = embedded
    report = _single_padded_call(z, make(padded), origin, oracle, rng.child(1), accept)
    report.wall_time = time.perf_counter() - start
    return report


def msum_as_sum(z: MSumInstance) -> SumInstance:
    """Centred representatives of a mod-``p`` instance (``p`` odd) as a SUM instance."""
    if z.L % 2 == 0:
        raise ParameterError("centred reinterpretation needs an odd modulus")
    return SumInstance(z.k, (z.L - 1) // 2, tuple(center(v, z.L) for v in z.elements))


@dataclass
class PipelinePrimes:
    p: int
    q: Optional[int]

    @property
    def modulus(self) -> int:
        return self.p * self.q if self.q else self.p


def choose_primes(N: int, M: int, rng: SeededRng) -> PipelinePrimes:
    """Prime ``p`` in ``[M, 2M)`` and prime ``q`` in ``[N/2p, N/p)``.

    When the ``q`` interval holds no integer >= 2 (``M`` close to ``N``), ``q``
    is ``None`` and the mod-``pq`` stage is skipped.
    """
    p = sample_prime(M, 2 * M, rng.child(0))
    lo = max(2, -(-N // (2 * p)))
    hi = -(-N // p)  # q < N/p
    if N // (2 * p) >= p:
        raise ParameterError("q interval lies above p; need sqrt(N) <= M")
    if hi <= lo:
        return PipelinePrimes(p, None)
    q = sample_prime(lo, hi, rng.child(1))
    return PipelinePrimes(p, q)


def sum_theorem_pipeline(z: SumInstance, M: int, oracle: Oracle, budget: ReductionBudget,
                         rng: SeededRng, oracle_r: Optional[int] = None,
                         inner_iterations: Optional[int] = None,
                         c: float = 0.25) -> ReductionReport:
    """Sparse k-SUM with bound ``N`` through a dense k-SUM oracle with bound ``M``.

    Chain, outermost first: pad ``z`` to ``2k r`` elements; reduce SUM to
    MSUM mod ``pq``; mod ``pq`` to mod ``p`` by obfuscation; read mod-``p``
    instances as SUM with bound ``(p-1)/2``; pad those into bound ``M`` for
    the dense oracle.  The chain is rerun with fresh randomness until
    ``budget.call_cap`` oracle calls (default ``budget.L``) are spent.
    """
    N, r, k = z.N, z.r, z.k
    if not (M * M >= N and M <= N):
        raise ParameterError(f"need sqrt(N) <= M <= N, got M={M}, N={N}")
    start = time.perf_counter()
    primes = choose_primes(N, M, rng.child(0))
    p, q = primes.p, primes.q
    oracle_r = oracle_r or r
    cap = budget.call_cap if budget.call_cap is not None else budget.L
    ledger = CallLedger(oracle, cap)
    base = ledger.oracle()
    beta = budget.beta_hint if budget.beta_hint is not None else 1.0
    L_inner = inner_iterations or (default_msum_iterations(k, q, beta, c) if q else 1)
    report = ReductionReport()

    def mod_p_oracle(instance, orng, accept=None):
        as_sum = msum_as_sum(instance)
        # twice the list size needed to host every element in an in-range slot
        hosting = -(-2 * as_sum.r * (2 * M + 1) // (2 * as_sum.N + 1))
        rep = pad_reduce_sum(as_sum, max(hosting, oracle_r), base, orng,
                             target_bound=M, accept=accept)
        report.candidates += rep.candidates
        return rep.outcome

    B1 = Oracle(mod_p_oracle, name="mod-p", family="kmsum", forwards_accept=True)

    def mod_pq_oracle(instance, orng, accept=None):
        rep = msum_reduce(instance, p, q, B1, ReductionBudget(L_inner), orng, accept=accept)
        report.lifts += rep.lifts
        return rep.outcome

    B2 = Oracle(mod_pq_oracle, name="mod-pq", family="kmsum", forwards_accept=True) if q else B1
    runs = 0
    try:
        while ledger.calls < cap:
            if budget.time_cap is not None and time.perf_counter() - start >= budget.time_cap:
                report.note = "time cap reached"
                break
            run_rng = rng.child(1).child(runs)
            runs += 1
            before = ledger.calls
            extra = run_rng.child(0).integers(-N, N + 1, (2 * k - 1) * r)
            padded, origin = _append_and_permute(z.elements, extra, run_rng.child(1))
            big = SumInstance(k, N, tuple(padded))
            inside = lambda K: all(origin[i] < r for i in K)
            rep = sum_to_msum(big, primes.modulus, B2, run_rng.child(2), accept=inside)
            if rep.outcome is not None:
                orig = canonical(origin[i] for i in rep.outcome)
                if not validate(z, orig):
                    raise InvariantViolation("pipeline solution does not validate")
                report.outcome = orig
                report.solutions.append(orig)
                break
            if ledger.calls == before and runs > 64 * cap:
                report.note = "chain never reached the oracle"
                break
    except BudgetExhausted:
        report.note = "call budget exhausted"
    report.calls = ledger.calls
    report.successes = ledger.successes
    report.iterations = runs
    if not report.note and report.outcome is None and ledger.calls >= cap:
        report.note = "call budget exhausted"
    report.note = (report.note + f" p={p} q={q}").strip()
    report.wall_time = time.perf_counter() - start
    report.check()
    return report


def pilot_beta(oracle: Oracle, make_instance: Callable[[SeededRng], object],
               rng: SeededRng, calls: int = 32) -> float:
    """Fraction of ``calls`` fresh instances the oracle solves (validated)."""
    checked = checked_oracle(oracle)
    wins = 0
    for i in range(calls):
        inst = make_instance(rng.child(2 * i))
        if checked(inst, rng.child(2 * i + 1)) is not None:
            wins += 1
    return wins / calls
