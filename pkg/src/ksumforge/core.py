"""Problem instances, solution checking, instance sampling and the oracle contract.

A solution anywhere in the package is a sorted tuple of ``k`` distinct indices
into the instance's element list.  Oracles return such a tuple or ``None``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from math import comb
from operator import xor
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

MAX_WIDTH = 63
MAX_SUM_BOUND = 1 << 62
MAX_MODULUS = 1 << 63

KTuple = Tuple[int, ...]
Outcome = Optional[KTuple]


class ParameterError(ValueError):
    """Raised when parameters fall outside the supported range."""


class InvariantViolation(AssertionError):
    """Raised when an internal correctness invariant fails at runtime."""


class SeededRng:
    """Deterministic random stream with indexed child streams.

    Backed by numpy's PCG64.  ``child(i)`` derives an independent stream from
    the same root seed and a spawn key path, so trial ``i`` of an experiment
    sees the same numbers no matter which worker runs it.
    """

    __slots__ = ("seed", "key", "_gen")

    def __init__(self, seed: int, key: Tuple[int, ...] = ()):
        if seed < 0 or seed >= 1 << 64:
            raise ParameterError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.key = tuple(key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, key={self.key})"

    def child(self, index: int) -> "SeededRng":
        return SeededRng(self.seed, self.key + (int(index),))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def randrange(self, lo: int, hi: int) -> int:
        """Uniform integer in ``[lo, hi)``."""
        if hi <= lo:
            raise ParameterError("empty range")
        if lo >= 0 and hi <= 1 << 64:
            return int(self._gen.integers(lo, hi, dtype=np.uint64))
        return int(self._gen.integers(lo, hi, dtype=np.int64))

    def integers(self, lo: int, hi: int, size: int) -> list:
        """``size`` uniform integers in ``[lo, hi)`` as Python ints."""
        if hi <= lo:
            raise ParameterError("empty range")
        dtype = np.uint64 if lo >= 0 else np.int64
        return self._gen.integers(lo, hi, size=size, dtype=dtype).tolist()

    def bits(self, width: int) -> int:
        return self.randrange(0, 1 << width)

    def words(self, width: int, size: int) -> list:
        return self.integers(0, 1 << width, size)

    def permutation(self, r: int) -> list:
        return self._gen.permutation(r).tolist()

    def random(self) -> float:
        return float(self._gen.random())

    def choice_index(self, n: int) -> int:
        return self.randrange(0, n)


def _check_k_r(k: int, r: int) -> None:
    if k < 2:
        raise ParameterError(f"k must be >= 2, got {k}")
    if k > MAX_WIDTH:
        raise ParameterError(f"k must be <= {MAX_WIDTH}, got {k}")
    if r < k:
        raise ParameterError(f"need r >= k, got r={r} < k={k}")


@dataclass(frozen=True)
class XorInstance:
    """``r`` width-``n`` bit vectors packed into ints; bit ``j`` is coordinate ``j``."""

    k: int
    n: int
    elements: Tuple[int, ...]
    family: str = field(default="kxor", init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(int(e) for e in self.elements))
        if not 1 <= self.n <= MAX_WIDTH:
            raise ParameterError(f"width n must be in [1, {MAX_WIDTH}], got {self.n}")
        _check_k_r(self.k, len(self.elements))
        bound = 1 << self.n
        for e in self.elements:
            if not 0 <= e < bound:
                raise ParameterError(f"element {e} does not fit in {self.n} bits")

    @property
    def r(self) -> int:
        return len(self.elements)

    @property
    def size_param(self) -> int:
        return self.n

    def with_elements(self, elements: Sequence[int], n: Optional[int] = None) -> "XorInstance":
        return XorInstance(self.k, self.n if n is None else n, tuple(elements))


@dataclass(frozen=True)
class SumInstance:
    """``r`` integers in ``[-N, N]``; solutions sum to zero over the integers."""

    k: int
    N: int
    elements: Tuple[int, ...]
    family: str = field(default="ksum", init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(int(e) for e in self.elements))
        if not 1 <= self.N < MAX_SUM_BOUND:
            raise ParameterError(f"bound N must be in [1, 2^62), got {self.N}")
        _check_k_r(self.k, len(self.elements))
        if self.k * self.N >= 1 << 63:
            raise ParameterError("k*N must stay below 2^63")
        for e in self.elements:
            if abs(e) > self.N:
                raise ParameterError(f"element {e} outside [-{self.N}, {self.N}]")

    @property
    def r(self) -> int:
        return len(self.elements)

    @property
    def size_param(self) -> int:
        return self.N

    def with_elements(self, elements: Sequence[int], N: Optional[int] = None) -> "SumInstance":
        return SumInstance(self.k, self.N if N is None else N, tuple(elements))


@dataclass(frozen=True)
class MSumInstance:
    """``r`` residues modulo ``L``; solutions sum to zero mod ``L``."""

    k: int
    L: int
    elements: Tuple[int, ...]
    family: str = field(default="kmsum", init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(int(e) for e in self.elements))
        if not 1 <= self.L < MAX_MODULUS:
            raise ParameterError(f"modulus L must be in [1, 2^63), got {self.L}")
        _check_k_r(self.k, len(self.elements))
        for e in self.elements:
            if not 0 <= e < self.L:
                raise ParameterError(f"element {e} is not a residue mod {self.L}")

    @property
    def r(self) -> int:
        return len(self.elements)

    @property
    def size_param(self) -> int:
        return self.L

    def with_elements(self, elements: Sequence[int], L: Optional[int] = None) -> "MSumInstance":
        return MSumInstance(self.k, self.L if L is None else L, tuple(elements))


Instance = Union[XorInstance, SumInstance, MSumInstance]


def gen_xor_instance(k: int, n: int, r: int, rng: SeededRng) -> XorInstance:
    if not 1 <= n <= MAX_WIDTH:
        raise ParameterError(f"width n must be in [1, {MAX_WIDTH}], got {n}")
    _check_k_r(k, r)
    return XorInstance(k, n, tuple(rng.words(n, r)))


def gen_sum_instance(k: int, N: int, r: int, rng: SeededRng) -> SumInstance:
    if not 1 <= N < MAX_SUM_BOUND:
        raise ParameterError(f"bound N must be in [1, 2^62), got {N}")
    _check_k_r(k, r)
    return SumInstance(k, N, tuple(rng.integers(-N, N + 1, r)))


def gen_msum_instance(k: int, L: int, r: int, rng: SeededRng) -> MSumInstance:
    if not 1 <= L < MAX_MODULUS:
        raise ParameterError(f"modulus L must be in [1, 2^63), got {L}")
    _check_k_r(k, r)
    return MSumInstance(k, L, tuple(rng.integers(0, L, r)))


def combine(instance: Instance, values: Sequence[int]) -> int:
    """XOR, integer sum, or modular sum of ``values`` per the instance family."""
    if instance.family == "kxor":
        return reduce(xor, values, 0)
    if instance.family == "ksum":
        return sum(values)
    return sum(values) % instance.L


def validate(instance: Instance, indices: Sequence[int]) -> bool:
    """True iff ``indices`` is a solution of ``instance``.

    Raises ``IndexError`` for out-of-range indices and ``ValueError`` for a
    tuple of the wrong size or with repeated indices.
    """
    if len(indices) != instance.k:
        raise ValueError(f"tuple has {len(indices)} indices, expected k={instance.k}")
    if len(set(indices)) != len(indices):
        raise ValueError("tuple indices are not distinct")
    r = instance.r
    for i in indices:
        if not 0 <= i < r:
            raise IndexError(f"index {i} outside [0, {r})")
    return combine(instance, [instance.elements[i] for i in indices]) == 0


def canonical(indices: Sequence[int]) -> KTuple:
    return tuple(sorted(int(i) for i in indices))


@dataclass
class Oracle:
    """A randomized solver: ``oracle(instance, rng) -> tuple | None``.

    ``family`` is the problem family the oracle declares ("kxor", "ksum",
    "kmsum" or "any").  Reduction-backed oracles also accept an ``accept``
    predicate so that an enclosing stage can ask them to keep searching past
    candidates it cannot use; plain solvers ignore it.
    """

    fn: Callable[..., Outcome]
    name: str = "oracle"
    family: str = "any"
    forwards_accept: bool = False
    calls: int = 0

    def __call__(self, instance: Instance, rng: SeededRng, accept=None) -> Outcome:
        self.calls += 1
        if self.forwards_accept:
            return self.fn(instance, rng, accept=accept)
        return self.fn(instance, rng)

    def check_family(self, instance: Instance) -> None:
        if self.family not in ("any", instance.family):
            raise ParameterError(
                f"oracle {self.name!r} is declared for {self.family}, got {instance.family} instance"
            )


def checked_oracle(oracle: Oracle) -> Oracle:
    """Wrap ``oracle`` so any output that is not a valid solution becomes ``None``."""

    def run(instance, rng, accept=None):
        if oracle.forwards_accept:
            out = oracle(instance, rng, accept=accept)
        else:
            out = oracle(instance, rng)
        if out is None:
            return None
        try:
            out = tuple(int(i) for i in out)
            ok = validate(instance, out)
        except (ValueError, IndexError, TypeError):
            return None
        return canonical(out) if ok else None

    return Oracle(run, name=f"checked({oracle.name})", family=oracle.family,
                  forwards_accept=oracle.forwards_accept)


def always_fail_oracle(family: str = "any") -> Oracle:
    return Oracle(lambda instance, rng: None, name="always-fail", family=family)


def expected_solutions(instance_family: str, k: int, size: int, r: int) -> float:
    """Expected number of solutions of a uniform random instance (SUM uses the
    local-limit density of a k-fold uniform sum at zero, which is only
    asymptotically exact)."""
    tuples = comb(r, k)
    if instance_family == "kxor":
        return tuples / 2.0 ** size
    if instance_family == "kmsum":
        return tuples / size
    # density of the sum of k uniforms on [-N, N] at 0, Irwin-Hall approximation
    from math import factorial

    def irwin_hall_pdf(x: float, n: int) -> float:
        return sum((-1) ** j * comb(n, j) * max(x - j, 0.0) ** (n - 1) for j in range(n + 1)) / factorial(n - 1)

    density = irwin_hall_pdf(k / 2.0, k)
    return tuples * density / (2 * size + 1)
