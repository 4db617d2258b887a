"""Concrete k-XOR / k-SUM / k-MSUM solvers.

Every public solver takes an instance and returns a sorted index tuple or
``None``.  ``make_oracle`` adapts any of them to the :class:`Oracle` contract.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from collections import defaultdict
from dataclasses import dataclass, field
from functools import reduce
from itertools import combinations
from math import ceil, comb, floor, log2
from operator import xor
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .algebra import center
from .core import (
    Instance,
    MSumInstance,
    Oracle,
    Outcome,
    ParameterError,
    SeededRng,
    SumInstance,
    XorInstance,
    canonical,
)

BRUTE_FORCE_CAP = 10**8
TABLE_CAP = 2 * 10**7
LIST_CAP = 1 << 22

_EPS = 1e-9


@dataclass
class SolverConfig:
    """Knobs shared by the solvers.

    ``schedule`` lists the bits zeroed by each k-tree merge round (the last
    entry is the final round).  ``threshold`` overrides the filter of
    ``filter_dense3``: a magnitude bound for SUM, a count of top bits for XOR.
    ``randomize`` shuffles the input before solving, using the call's rng.
    """

    algorithm: str = "ktree"
    schedule: Optional[List[int]] = None
    threshold: Optional[int] = None
    join: str = "sort"
    list_cap: int = LIST_CAP
    randomize: bool = False
    brute_force_cap: int = BRUTE_FORCE_CAP
    table_cap: int = TABLE_CAP


def _need(family: str, L: int, acc: int, target: int = 0) -> int:
    """Value the remaining element(s) must combine to, given partial ``acc``."""
    if family == "kxor":
        return acc ^ target
    if family == "ksum":
        return target - acc
    return (target - acc) % L


def _modulus(instance: Instance) -> int:
    return instance.L if instance.family == "kmsum" else 0


# ---------------------------------------------------------------- brute force

def _lexmin(values: Sequence[int], k: int, family: str, L: int, target: int = 0,
            cap: int = BRUTE_FORCE_CAP) -> Outcome:
    r = len(values)
    if comb(r, k) > cap:
        raise ParameterError(f"C({r},{k}) exceeds the brute-force cap {cap}")
    positions = defaultdict(list)
    for i, v in enumerate(values):
        positions[v].append(i)
    if family == "kxor":
        acc_of = lambda pre: reduce(xor, (values[i] for i in pre), 0)
    elif family == "ksum":
        acc_of = lambda pre: sum(values[i] for i in pre)
    else:
        acc_of = lambda pre: sum(values[i] for i in pre) % L
    for prefix in combinations(range(r - 1), k - 1):
        bucket = positions.get(_need(family, L, acc_of(prefix), target))
        if bucket:
            j = bisect_right(bucket, prefix[-1])
            if j < len(bucket):
                return prefix + (bucket[j],)
    return None


def brute_force(instance: Instance, cap: int = BRUTE_FORCE_CAP) -> Outcome:
    """Lexicographically smallest solution, or ``None``."""
    return _lexmin(instance.elements, instance.k, instance.family, _modulus(instance), cap=cap)


def brute_force_nested(instance: Instance) -> Outcome:
    """Plain enumeration of all k-subsets; slow, kept as a second oracle."""
    vals = instance.elements
    for idx in combinations(range(instance.r), instance.k):
        picked = [vals[i] for i in idx]
        if instance.family == "kxor":
            ok = reduce(xor, picked, 0) == 0
        elif instance.family == "ksum":
            ok = sum(picked) == 0
        else:
            ok = sum(picked) % instance.L == 0
        if ok:
            return idx
    return None


# ------------------------------------------------------------ sort and match

def _combo_array(r: int, s: int) -> np.ndarray:
    if s == 1:
        return np.arange(r, dtype=np.int64)[:, None]
    if s == 2:
        i, j = np.triu_indices(r, 1)
        return np.stack([i, j], axis=1).astype(np.int64)
    flat = np.fromiter((x for c in combinations(range(r), s) for x in c), dtype=np.int64)
    return flat.reshape(-1, s)


def _combo_values(vals: np.ndarray, combos: np.ndarray, family: str, L: int) -> np.ndarray:
    picked = vals[combos]
    if family == "kxor":
        return np.bitwise_xor.reduce(picked, axis=1)
    if family == "ksum":
        return picked.sum(axis=1)
    acc = picked[:, 0].copy()
    mod = np.uint64(L)
    for c in range(1, picked.shape[1]):
        acc = (acc + picked[:, c]) % mod
    return acc


def _meet_in_middle(values: Sequence[int], k: int, family: str, L: int, target: int = 0,
                    table_cap: int = TABLE_CAP) -> Outcome:
    r = len(values)
    if r < k:
        return None
    a_size, b_size = (k + 1) // 2, k // 2
    if comb(r, a_size) > table_cap:
        raise ParameterError(f"C({r},{a_size}) table exceeds the memory cap {table_cap}")
    dtype = np.int64 if family == "ksum" else np.uint64
    vals = np.asarray(values, dtype=dtype)
    a_combos = _combo_array(r, a_size)
    b_combos = _combo_array(r, b_size)
    a_vals = _combo_values(vals, a_combos, family, L)
    b_vals = _combo_values(vals, b_combos, family, L)
    if family == "kxor":
        want = b_vals ^ np.uint64(target)
    elif family == "ksum":
        want = np.int64(target) - b_vals
    else:
        mod = np.uint64(L)
        want = (np.uint64(target % L) + (mod - b_vals) % mod) % mod
    order = np.argsort(a_vals, kind="stable")
    sorted_a = a_vals[order]
    lo = np.searchsorted(sorted_a, want, side="left")
    hi = np.searchsorted(sorted_a, want, side="right")
    for b in np.nonzero(hi > lo)[0].tolist():
        bset = set(b_combos[b].tolist())
        for pos in range(lo[b], hi[b]):
            a = a_combos[order[pos]].tolist()
            if bset.isdisjoint(a):
                return canonical(a + list(bset))
    return None


def sort_and_match(instance: Instance, table_cap: int = TABLE_CAP) -> Outcome:
    """Meet in the middle: table of ceil(k/2)-subsets, scan of floor(k/2)-subsets."""
    return _meet_in_middle(instance.elements, instance.k, instance.family, _modulus(instance),
                           table_cap=table_cap)


# -------------------------------------------------------------- dense 3-SUM

def default_filter_threshold(instance: Instance) -> int:
    """Filter parameter that leaves about one expected solution among survivors.

    SUM keeps ``|z| <= theta`` with ``theta = 4 (N/r)^{3/2}``; XOR keeps elements
    whose top ``s`` bits are zero with ``s = (3 log r - n - log 6) / 2``.
    """
    r = instance.r
    if instance.family == "ksum":
        return min(instance.N, ceil(4 * (instance.N / r) ** 1.5))
    if instance.family == "kxor":
        s = floor((3 * log2(r) - instance.n - log2(6)) / 2 + _EPS)
        return max(0, min(instance.n, s))
    raise ParameterError("filter_dense3 supports kxor and ksum instances")


def filter_survivors(instance: Instance, threshold: int) -> List[int]:
    if instance.family == "ksum":
        return [i for i, z in enumerate(instance.elements) if abs(z) <= threshold]
    shift = instance.n - threshold
    return [i for i, z in enumerate(instance.elements) if z >> shift == 0]


def filter_dense3(instance: Instance, threshold: Optional[int] = None,
                  table_cap: int = TABLE_CAP) -> Outcome:
    """Keep only small elements, then run sort-and-match on the survivors."""
    if instance.k != 3:
        raise ParameterError("filter_dense3 needs k = 3")
    size = 2 ** instance.n if instance.family == "kxor" else 2 * instance.N + 1
    if instance.r ** 3 < size:
        raise ParameterError("filter_dense3 needs the dense regime r >= size^(1/3)")
    if threshold is None:
        threshold = default_filter_threshold(instance)
    keep = filter_survivors(instance, threshold)
    if len(keep) < 3:
        return None
    sub = [instance.elements[i] for i in keep]
    out = _meet_in_middle(sub, 3, instance.family, 0, table_cap=table_cap)
    return None if out is None else canonical(keep[i] for i in out)


# -------------------------------------------------------------------- k-tree

@dataclass
class KTreeResult:
    solution: Outcome
    level_sizes: List[List[int]] = field(default_factory=list)
    schedule: List[int] = field(default_factory=list)
    truncated: bool = False


def _is_power_of_two(k: int) -> bool:
    return k > 0 and k & (k - 1) == 0


def _reduced_k(k: int) -> int:
    """``k`` itself for powers of two, otherwise the largest power of two below it."""
    if _is_power_of_two(k):
        return k
    return 1 << (k.bit_length() - 1)


def _width(instance: Instance) -> float:
    if instance.family == "kxor":
        return float(instance.n)
    if instance.family == "kmsum":
        return log2(instance.L) if instance.L > 1 else 0.0
    raise ParameterError("k-tree supports kxor and kmsum instances")


def default_schedule(instance: Instance, k: Optional[int] = None) -> List[int]:
    """Bits zeroed per merge round; the remainder goes to the final round."""
    kk = _reduced_k(k or instance.k)
    rounds = kk.bit_length() - 1
    width = _width(instance)
    per = floor(width / (rounds + 1) + _EPS)
    final = max(0, round(width) - per * (rounds - 1))
    return [per] * (rounds - 1) + [final]


def _merge_xor(left, right, n: int, zeroed: int, final: bool, cap: int):
    shift = 0 if final else n - zeroed
    buckets = defaultdict(list)
    for v, idx in right:
        buckets[v >> shift].append((v, idx))
    out = []
    for v, idx in left:
        for w, jdx in buckets.get(v >> shift, ()):
            out.append((v ^ w, idx + jdx))
    out.sort()
    truncated = len(out) > cap
    return out[:cap], truncated


def _merge_mod(left, right, L: int, half_width: int, cap: int):
    keys = [w for w, _ in right]
    out = []
    for v, idx in left:
        for shift in (-L, 0, L):
            lo = bisect_left(keys, -half_width - v + shift)
            hi = bisect_right(keys, half_width - v + shift)
            for pos in range(lo, hi):
                w, jdx = right[pos]
                out.append((center(v + w, L), idx + jdx))
    out.sort()
    truncated = len(out) > cap
    return out[:cap], truncated


def _ktree_lists(instance: Instance, k: int, target: int, schedule: Sequence[int],
                 cap: int) -> KTreeResult:
    """Wagner merge over ``k`` sublists of the (possibly shortened) instance."""
    family = instance.family
    vals = instance.elements
    s = len(vals) // k
    if s == 0:
        return KTreeResult(None, [], list(schedule))
    lists = []
    for j in range(k):
        sub = []
        for i in range(j * s, (j + 1) * s):
            v = vals[i]
            if j == 0 and target:
                v = v ^ target if family == "kxor" else (v - target) % instance.L
            if family == "kmsum":
                v = center(v, instance.L)
            sub.append((v, (i,)))
        sub.sort()
        lists.append(sub)
    rounds = len(schedule)
    if 1 << rounds != k:
        raise ParameterError(f"schedule has {rounds} rounds, k={k} needs {k.bit_length() - 1}")
    level_sizes = []
    truncated = False
    zeroed = 0
    for rnd, bits in enumerate(schedule):
        final = rnd == rounds - 1
        zeroed += bits
        merged = []
        for a, b in zip(lists[0::2], lists[1::2]):
            if family == "kxor":
                out, t = _merge_xor(a, b, instance.n, zeroed, final, cap)
            else:
                half = 0 if final else instance.L >> (zeroed + 1)
                out, t = _merge_mod(a, b, instance.L, half, cap)
            truncated |= t
            merged.append(out)
        if not final:
            level_sizes.append([len(m) for m in merged])
        lists = merged
        if any(not m for m in lists):
            return KTreeResult(None, level_sizes, list(schedule), truncated)
    final_list = lists[0]
    for v, idx in final_list:
        if v == 0:
            return KTreeResult(canonical(idx), level_sizes, list(schedule), truncated)
    return KTreeResult(None, level_sizes, list(schedule), truncated)


def _split_fixed(instance: Instance, k_eff: int) -> Tuple[Tuple[int, ...], int, Tuple[int, ...]]:
    """Fix the last ``k - k_eff`` indices and return (rest, target, fixed)."""
    extra = instance.k - k_eff
    if extra == 0:
        return instance.elements, 0, ()
    r = instance.r
    fixed = tuple(range(r - extra, r))
    fixed_vals = [instance.elements[i] for i in fixed]
    if instance.family == "kxor":
        target = reduce(xor, fixed_vals, 0)
    else:
        target = (-sum(fixed_vals)) % instance.L
    rest = instance.elements[: r - extra]
    if len(rest) < k_eff:
        raise ParameterError("too few elements left after fixing indices")
    return rest, target, fixed


def ktree_run(instance: Instance, config: Optional[SolverConfig] = None) -> KTreeResult:
    config = config or SolverConfig()
    if instance.family not in ("kxor", "kmsum"):
        raise ParameterError("k-tree supports kxor and kmsum instances")
    k_eff = _reduced_k(instance.k)
    schedule = list(config.schedule) if config.schedule else default_schedule(instance, k_eff)
    return _run_with_fixed(instance, k_eff, schedule, config.list_cap)


def _run_with_fixed(instance: Instance, k_eff: int, schedule, cap) -> KTreeResult:
    rest, target, fixed = _split_fixed(instance, k_eff)
    view = _ValuesView(instance, rest)
    res = _ktree_lists(view, k_eff, target, schedule, cap)
    if res.solution is not None and fixed:
        res.solution = canonical(res.solution + fixed)
    return res


class _ValuesView:
    """Minimal instance stand-in over a shortened element list."""

    def __init__(self, instance: Instance, elements):
        self.family = instance.family
        self.elements = tuple(elements)
        if instance.family == "kxor":
            self.n = instance.n
        else:
            self.L = instance.L


def ktree(instance: Instance, config: Optional[SolverConfig] = None) -> Outcome:
    """Wagner's k-tree on the single list split into ``k`` equal sublists."""
    return ktree_run(instance, config).solution


def extended_schedule(instance: Instance, sublist_size: int) -> List[int]:
    """Two-round schedule whose first round zeroes ``4 log r - n`` bits.

    ``r`` is clamped to at most ``2^{n/3}``, where the schedule coincides with
    the plain 4-tree.  Lists below ``2^{n/4}`` are rejected.
    """
    width = _width(instance)
    if sublist_size < 1 or log2(sublist_size) < width / 4 - _EPS:
        raise ParameterError(
            f"sublist size {sublist_size} is below 2^(n/4); expected zero solutions"
        )
    first = floor(min(4 * log2(sublist_size), 4 * width / 3) - width + _EPS)
    first = max(0, first)
    if instance.family == "kxor":
        return [first, instance.n - first]
    return [first, max(0, round(width) - first)]


def extended_ktree_run(instance: Instance, config: Optional[SolverConfig] = None) -> KTreeResult:
    config = config or SolverConfig()
    if instance.family not in ("kxor", "kmsum"):
        raise ParameterError("extended k-tree supports kxor and kmsum instances")
    k_eff = _reduced_k(instance.k)
    if k_eff != 4:
        raise ParameterError("extended k-tree is implemented for k = 4 (after reduction)")
    usable = instance.r - (instance.k - k_eff)
    schedule = list(config.schedule) if config.schedule else extended_schedule(instance, usable // 4)
    return _run_with_fixed(instance, k_eff, schedule, config.list_cap)


def extended_ktree(instance: Instance, config: Optional[SolverConfig] = None) -> Outcome:
    return extended_ktree_run(instance, config).solution


# -------------------------------------------------------------------- oracles

_SOLVERS = {
    "brute_force": lambda inst, cfg: brute_force(inst, cfg.brute_force_cap),
    "lexmin": lambda inst, cfg: brute_force(inst, cfg.brute_force_cap),
    "sort_and_match": lambda inst, cfg: sort_and_match(inst, cfg.table_cap),
    "filter_dense3": lambda inst, cfg: filter_dense3(inst, cfg.threshold, cfg.table_cap),
    "ktree": lambda inst, cfg: ktree(inst, cfg),
    "extended_ktree": lambda inst, cfg: extended_ktree(inst, cfg),
}

SOLVER_NAMES = tuple(_SOLVERS)


def solve(instance: Instance, algorithm: str, config: Optional[SolverConfig] = None) -> Outcome:
    config = config or SolverConfig(algorithm=algorithm)
    try:
        fn = _SOLVERS[algorithm]
    except KeyError:
        raise ParameterError(f"unknown algorithm {algorithm!r}") from None
    return fn(instance, config)


def make_oracle(algorithm: str, family: str = "any", config: Optional[SolverConfig] = None) -> Oracle:
    """Adapt a solver to the oracle contract.

    With ``config.randomize`` the instance is shuffled with the call's rng and
    the answer mapped back, so repeated calls may differ.
    """
    config = config or SolverConfig(algorithm=algorithm)
    if algorithm not in _SOLVERS:
        raise ParameterError(f"unknown algorithm {algorithm!r}")

    def run(instance, rng):
        if not config.randomize:
            return solve(instance, algorithm, config)
        perm = rng.permutation(instance.r)
        shuffled = instance.with_elements([instance.elements[j] for j in perm])
        out = solve(shuffled, algorithm, config)
        return None if out is None else canonical(perm[i] for i in out)

    return Oracle(run, name=algorithm, family=family)


def lexmin_oracle(family: str = "any", cap: int = BRUTE_FORCE_CAP) -> Oracle:
    """Deterministic brute force: the maximally correlated adversary."""
    return Oracle(lambda instance, rng: brute_force(instance, cap), name="lexmin", family=family)
