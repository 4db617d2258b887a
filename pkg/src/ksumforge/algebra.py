"""F2 linear algebra on packed rows, modular helpers, primality and rounding."""

from __future__ import annotations

from dataclasses import dataclass
from math import gcd, log2, ceil
from typing import Sequence, Tuple

import numpy as np

from .core import MAX_WIDTH, ParameterError, SeededRng


class PrimeSamplingError(RuntimeError):
    """Raised when no prime was found within the attempt cap."""


@dataclass(frozen=True)
class F2Matrix:
    """``m x n`` matrix over F2; ``rows[i]`` packs row ``i``, bit ``j`` = column ``j``."""

    rows: Tuple[int, ...]
    cols: int

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(int(r) for r in self.rows))
        if not 1 <= self.cols <= MAX_WIDTH or len(self.rows) > MAX_WIDTH:
            raise ParameterError("matrix dimensions must be at most 63")
        for row in self.rows:
            if not 0 <= row < 1 << self.cols:
                raise ParameterError(f"row {row:#x} wider than {self.cols} columns")

    @property
    def m(self) -> int:
        return len(self.rows)

    @classmethod
    def identity(cls, n: int) -> "F2Matrix":
        return cls(tuple(1 << i for i in range(n)), n)


@dataclass(frozen=True)
class Permutation:
    """A bijection on ``[0, r)`` given by its image list."""

    image: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "image", tuple(int(i) for i in self.image))
        if sorted(self.image) != list(range(len(self.image))):
            raise ParameterError("image is not a bijection")

    @property
    def size(self) -> int:
        return len(self.image)

    def __call__(self, i: int) -> int:
        return self.image[i]

    def inverse(self) -> "Permutation":
        inv = [0] * len(self.image)
        for i, j in enumerate(self.image):
            inv[j] = i
        return Permutation(tuple(inv))

    def compose(self, other: "Permutation") -> "Permutation":
        """``self o other``: ``i -> self(other(i))``."""
        return Permutation(tuple(self.image[j] for j in other.image))

    @classmethod
    def identity(cls, r: int) -> "Permutation":
        return cls(tuple(range(r)))


@dataclass(frozen=True)
class SumObfuscationKeys:
    alpha: int
    gamma: int
    p: int
    q: int

    def __post_init__(self):
        if self.p < self.q or not (is_prime(self.p) and is_prime(self.q)):
            raise ParameterError("p, q must be primes with p >= q")
        if gcd(self.alpha, self.p * self.q) != 1:
            raise ParameterError("alpha must be a unit mod pq")
        if not 0 < self.gamma < self.p:
            raise ParameterError("gamma must be a nonzero residue mod p")


def f2_rank(M: F2Matrix) -> int:
    """Rank over F2 by elimination on packed rows."""
    basis = []  # rows with distinct leading bits
    for row in M.rows:
        for b in basis:
            row = min(row, row ^ b)
        if row:
            basis.append(row)
    return len(basis)


def sample_full_rank(m: int, n: int, rng: SeededRng) -> F2Matrix:
    """Uniform ``m x n`` matrix of rank ``m``, by rejection from uniform matrices."""
    if not 1 <= m <= n <= MAX_WIDTH:
        raise ParameterError(f"need 1 <= m <= n <= 63, got m={m}, n={n}")
    while True:
        M = F2Matrix(tuple(rng.words(n, m)), n)
        if f2_rank(M) == m:
            return M


def apply_f2(T: F2Matrix, v: int, width: int = None) -> int:
    if width is not None and width != T.cols:
        raise ParameterError(f"vector width {width} != matrix columns {T.cols}")
    if not 0 <= v < 1 << T.cols:
        raise ParameterError(f"vector {v:#x} wider than {T.cols} bits")
    out = 0
    for i, row in enumerate(T.rows):
        out |= ((row & v).bit_count() & 1) << i
    return out


def apply_f2_many(T: F2Matrix, vs: Sequence[int]) -> list:
    """``apply_f2`` over a list, vectorised."""
    if not vs:
        return []
    z = np.asarray(vs, dtype=np.uint64)
    if int(z.max()) >> T.cols:
        raise ParameterError(f"vector wider than {T.cols} bits")
    rows = np.asarray(T.rows, dtype=np.uint64)
    par = np.bitwise_count(z[:, None] & rows[None, :]) & 1
    weights = np.left_shift(np.uint64(1), np.arange(T.m, dtype=np.uint64))
    return (par.astype(np.uint64) * weights).sum(axis=1).tolist()


def sample_permutation(r: int, rng: SeededRng) -> Permutation:
    if r < 1:
        raise ParameterError("permutation size must be positive")
    return Permutation(tuple(rng.permutation(r)))


def sample_unit(L: int, rng: SeededRng) -> int:
    """Uniform element of the unit group of Z_L."""
    if L < 2:
        raise ParameterError("L must be >= 2")
    while True:
        a = rng.randrange(1, L)
        if gcd(a, L) == 1:
            return a


def mod_inverse(a: int, L: int) -> int:
    a %= L
    if gcd(a, L) != 1:
        raise ValueError(f"{a} is not invertible mod {L}")
    # extended Euclid
    old_r, r = a, L
    old_s, s = 1, 0
    while r:
        quot = old_r // r
        old_r, r = r, old_r - quot * r
        old_s, s = s, old_s - quot * s
    return old_s % L


# Deterministic for all n < 3.3e24, which covers the 64-bit range.
_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime(x: int) -> bool:
    if x < 2:
        return False
    for p in _MR_BASES:
        if x % p == 0:
            return x == p
    d, s = x - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_BASES:
        y = pow(a, d, x)
        if y == 1 or y == x - 1:
            continue
        for _ in range(s - 1):
            y = y * y % x
            if y == x - 1:
                break
        else:
            return False
    return True


def sample_prime(lo: int, hi: int, rng: SeededRng, cap: int = None) -> int:
    """Uniform candidates from ``[lo, hi)`` retested until one is prime."""
    if lo >= hi:
        raise ParameterError("need lo < hi")
    if cap is None:
        cap = max(1, ceil(64 * log2(max(hi, 2))))
    for _ in range(cap):
        c = rng.randrange(lo, hi)
        if is_prime(c):
            return c
    raise PrimeSamplingError(f"no prime found in [{lo}, {hi}) after {cap} attempts")


def next_prime(x: int) -> int:
    """Least prime strictly greater than ``x``."""
    c = x + 1
    while not is_prime(c):
        c += 1
    return c


def round_div(w: int, q: int) -> int:
    """Nearest integer to ``w / q`` with halves rounded up.

    Returns the unique ``j`` with ``j - w/q`` in ``(-1/2, 1/2]``.
    """
    if q <= 0:
        raise ParameterError("q must be positive")
    return (2 * w + q) // (2 * q)


def mulmod_wide(a: int, b: int, L: int) -> int:
    if not (0 <= a < L and 0 <= b < L):
        raise ParameterError("operands must be residues mod L")
    return (a * b) % L


def center(a: int, L: int) -> int:
    """Representative of ``a mod L`` in ``(-L/2, L/2]``."""
    a %= L
    return a - L if 2 * a > L else a


def units(L: int) -> list:
    return [a for a in range(1, L) if gcd(a, L) == 1] if L > 1 else []
