"""Budgeted maximum coverage over row bitsets.

Choosing extra conditions that shrink an explanation's support is a
maximum coverage problem: each candidate condition ``c`` "covers" the base
rows on which ``c`` is false, and the explanation's support is the base
size minus the covered count.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .bitset import CoverageSet, popcount
from .dataset import BinarizedDataset


@dataclass(frozen=True)
class CoverageInstance:
    n: int
    universe: int
    candidates: tuple
    columns: tuple

    def __post_init__(self):
        if len(self.candidates) != len(self.columns):
            raise ValueError("one column per candidate")
        for c, col in zip(self.candidates, self.columns):
            if col & ~self.universe:
                raise ValueError(f"column of candidate {c} leaves the universe")

    @classmethod
    def from_sets(cls, sets: Sequence[Iterable[int]], n: int | None = None,
                  candidates: Sequence[int] | None = None) -> "CoverageInstance":
        """Convenience constructor from plain index sets (used by tests and demos)."""
        cols = [sum(1 << i for i in set(s)) for s in sets]
        if n is None:
            n = max((c.bit_length() for c in cols), default=0)
        ids = tuple(range(len(cols))) if candidates is None else tuple(candidates)
        return cls(n, (1 << n) - 1, ids, tuple(cols))

    @property
    def k(self) -> int:
        return len(self.candidates)

    def column(self, cand: int) -> CoverageSet:
        return CoverageSet(self.columns[self.candidates.index(cand)], self.n)

    def covered(self, selected: Iterable[int]) -> int:
        pos = {c: i for i, c in enumerate(self.candidates)}
        bits = 0
        for c in selected:
            bits |= self.columns[pos[c]]
        return bits


@dataclass(frozen=True)
class CoverageSolution:
    selected: tuple
    covered: int
    covered_bits: int
    optimal: bool
    nodes: int = 0


def build_instance(base: CoverageSet, candidates: Iterable[int],
                   data: BinarizedDataset) -> CoverageInstance:
    """Column of candidate ``j`` is the base rows where condition ``j`` is false."""
    cands = tuple(sorted(candidates))
    cols = tuple(base.bits & ~data.columns[j] for j in cands)
    return CoverageInstance(base.n, base.bits, cands, cols)


def _solution(inst: CoverageInstance, picked: Iterable[int], optimal: bool, nodes=0):
    picked = sorted(picked)
    bits = 0
    for i in picked:
        bits |= inst.columns[i]
    return CoverageSolution(tuple(inst.candidates[i] for i in picked), popcount(bits), bits,
                            optimal, nodes)


def _order(inst: CoverageInstance) -> list:
    """Candidate positions sorted by candidate id."""
    return sorted(range(inst.k), key=lambda i: inst.candidates[i])


def greedy(inst: CoverageInstance, l: int) -> CoverageSolution:
    """Lazy greedy: repeatedly take the largest marginal gain, lowest id on ties.

    Stale gains in the heap are upper bounds (submodularity), so an entry
    whose refreshed gain still beats the heap top is the true maximiser.
    """
    heap = [(-popcount(inst.columns[i]), inst.candidates[i], i) for i in range(inst.k)]
    heapq.heapify(heap)
    covered = 0
    picked = []
    while len(picked) < l and heap:
        _, cid, i = heapq.heappop(heap)
        gain = popcount(inst.columns[i] & ~covered)
        if heap and (-gain, cid) > heap[0][:2]:
            heapq.heappush(heap, (-gain, cid, i))
            continue
        if gain == 0:
            break
        picked.append(i)
        covered |= inst.columns[i]
    return _solution(inst, picked, optimal=False)


def _dominance_filter(inst: CoverageInstance) -> list:
    """Positions of non-empty columns not contained in another kept column."""
    pos = [i for i in _order(inst) if inst.columns[i]]
    pos.sort(key=lambda i: (-popcount(inst.columns[i]), inst.candidates[i]))
    kept = []
    for i in pos:
        col = inst.columns[i]
        if any(col & ~inst.columns[k] == 0 for k in kept):
            continue
        kept.append(i)
    return kept


def exact(inst: CoverageInstance, l: int, node_limit: int = 10**6) -> CoverageSolution:
    """Optimal selection of at most ``l`` columns by depth-first branch and bound.

    Candidates are visited by decreasing column size; a node is pruned when
    its covered count plus the ``l - chosen`` largest residual gains cannot
    beat the incumbent.  The greedy solution seeds the incumbent.  If the
    node budget runs out the incumbent is returned with ``optimal=False``.
    """
    if l <= 0:
        return CoverageSolution((), 0, 0, True, 0)
    start = greedy(inst, l)
    pos_of = {c: i for i, c in enumerate(inst.candidates)}
    best = [start.covered, [pos_of[c] for c in start.selected]]
    cand = _dominance_filter(inst)
    cols = [inst.columns[i] for i in cand]
    k = len(cand)
    nodes = 0
    exhausted = False

    def dfs(idx: int, chosen: list, covered: int, count: int):
        nonlocal nodes, exhausted
        nodes += 1
        if nodes > node_limit:
            exhausted = True
            return
        if count > best[0]:
            best[0], best[1] = count, [cand[i] for i in chosen]
        slots = l - len(chosen)
        if slots == 0 or idx == k:
            return
        gains = [popcount(cols[i] & ~covered) for i in range(idx, k)]
        bound = _suffix_top_sums(gains, slots)
        # branch on the next included candidate; skipped ones stay excluded
        for off, g in enumerate(gains):
            if count + bound[off] <= best[0]:
                return
            if g == 0:
                continue
            chosen.append(idx + off)
            dfs(idx + off + 1, chosen, covered | cols[idx + off], count + g)
            chosen.pop()
            if exhausted:
                return

    if k:
        dfs(0, [], 0, 0)
    return _solution(inst, best[1], optimal=not exhausted, nodes=nodes)


def _suffix_top_sums(gains: list, slots: int) -> list:
    """``out[i]`` is the sum of the ``slots`` largest values in ``gains[i:]``."""
    out = [0] * (len(gains) + 1)
    heap: list = []
    total = 0
    for i in range(len(gains) - 1, -1, -1):
        g = gains[i]
        if len(heap) < slots:
            heapq.heappush(heap, g)
            total += g
        elif g > heap[0]:
            total += g - heapq.heapreplace(heap, g)
        out[i] = total
    return out


def n_subsets(k: int, l: int) -> int:
    return sum(math.comb(k, s) for s in range(min(k, max(l, 0)) + 1))


def brute_force(inst: CoverageInstance, l: int, cap: int = 2_000_000) -> CoverageSolution:
    """Enumerate every subset of size at most ``l``; lexicographically smallest maximiser."""
    total = n_subsets(inst.k, l)
    if total > cap:
        raise ValueError(f"brute force would evaluate {total} subsets (cap {cap})")
    order = _order(inst)
    best_key, best = None, ()
    evaluated = 0
    for size in range(min(inst.k, max(l, 0)) + 1):
        for combo in itertools.combinations(order, size):
            evaluated += 1
            bits = 0
            for i in combo:
                bits |= inst.columns[i]
            key = (-popcount(bits), tuple(inst.candidates[i] for i in combo))
            if best_key is None or key < best_key:
                best_key, best = key, combo
    return _solution(inst, best, optimal=True, nodes=evaluated)
