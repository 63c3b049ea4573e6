"""Cohort-specific nested binary partitions of [0, inf).

Levels 1-2 are anchored at the reported triple (l, m, h); deeper levels split
every interval at its conditional median under the centering distribution, so
interval probabilities are dyadic below the anchored levels. Intervals are
left-closed right-open everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .special_math import DistributionSpec

__all__ = ["NodePath", "PartitionTree", "build_cohort_partition", "locate", "g0_conditional", "future_triple"]


@dataclass(frozen=True)
class NodePath:
    """Binary path e_1 ... e_d identifying a partition subset at level d."""

    bits: tuple[int, ...]

    def __post_init__(self):
        if len(self.bits) < 1 or any(b not in (0, 1) for b in self.bits):
            raise ValueError(f"invalid node path bits {self.bits!r}")
        object.__setattr__(self, "bits", tuple(int(b) for b in self.bits))

    @classmethod
    def from_string(cls, s: str) -> "NodePath":
        return cls(tuple(int(c) for c in s))

    @classmethod
    def from_index(cls, level: int, index: int) -> "NodePath":
        if not 0 <= index < 2**level:
            raise ValueError(f"index {index} out of range at level {level}")
        return cls(tuple((index >> (level - 1 - i)) & 1 for i in range(level)))

    @property
    def level(self) -> int:
        return len(self.bits)

    @property
    def index(self) -> int:
        """Position of the interval within its level, in left-to-right order."""
        out = 0
        for b in self.bits:
            out = (out << 1) | b
        return out

    def parent(self) -> "NodePath":
        if self.level == 1:
            raise ValueError("level-1 nodes have no parent path")
        return NodePath(self.bits[:-1])

    def child(self, bit: int) -> "NodePath":
        return NodePath(self.bits + (bit,))

    def __str__(self) -> str:
        return "".join(str(b) for b in self.bits)


class PartitionTree:
    """Nested binary partition with cached centering-CDF values.

    ``breaks[d]`` holds the 2^d - 1 interior breakpoints of level d in
    increasing order; the implied intervals are [b_{i-1}, b_i) with b_0 = 0
    and b_{2^d} = +inf. ``fvals[d]`` caches the centering CDF at the
    breakpoints, which makes conditional probabilities O(1).
    """

    def __init__(self, cohort_id: str, depth: int, breaks: dict[int, np.ndarray], fvals: dict[int, np.ndarray]):
        self.cohort_id = cohort_id
        self.depth = depth
        self.breaks = {d: np.asarray(v, dtype=float) for d, v in breaks.items()}
        self.fvals = {d: np.asarray(v, dtype=float) for d, v in fvals.items()}
        for d in range(1, depth + 1):
            b = self.breaks[d]
            if b.size != 2**d - 1:
                raise ValueError(f"level {d} expects {2 ** d - 1} breakpoints, got {b.size}")
            if np.any(np.diff(b) <= 0) or b[0] <= 0:
                raise ValueError(f"cohort {cohort_id}: level-{d} breakpoints are not strictly increasing")
        self._leaf_breaks = self.breaks[depth]

    # -- geometry -------------------------------------------------------------
    def interval_bounds(self, level: int, index: int) -> tuple[float, float]:
        b = self.breaks[level]
        lo = 0.0 if index == 0 else float(b[index - 1])
        hi = math.inf if index == 2**level - 1 else float(b[index])
        return lo, hi

    def interval_f(self, level: int, index: int) -> tuple[float, float]:
        """Centering-CDF values at the interval bounds."""
        f = self.fvals[level]
        lo = 0.0 if index == 0 else float(f[index - 1])
        hi = 1.0 if index == 2**level - 1 else float(f[index])
        return lo, hi

    def split_point(self, level: int, index: int) -> float:
        """Breakpoint that splits interval (level, index) into its children."""
        return float(self.breaks[level + 1][2 * index])

    def split_f(self, level: int, index: int) -> float:
        return float(self.fvals[level + 1][2 * index])

    def leaf_indices(self, t) -> np.ndarray:
        """Vectorized leaf location at the deepest level (left-closed)."""
        return np.searchsorted(self._leaf_breaks, np.asarray(t, dtype=float), side="right")

    def node_mass_g0(self, level: int, index: int) -> float:
        lo, hi = self.interval_f(level, index)
        return hi - lo


def build_cohort_partition(
    s: tuple[float | None, float, float | None],
    g0: DistributionSpec,
    depth: int,
    cohort_id: str = "?",
) -> PartitionTree:
    """Partition anchored at (l, m, h) on levels 1-2, conditional-median below.

    Absent l (None or 0) and absent h (None or +inf) are replaced by the
    conditional median under ``g0`` of the corresponding level-1 interval.
    """
    lo, m, hi = s
    l_absent = lo is None or lo == 0.0
    h_absent = hi is None or (isinstance(hi, float) and math.isinf(hi))
    if depth < 2:
        raise ValueError("partition depth must be at least 2")
    if not m > 0:
        raise ValueError(f"cohort {cohort_id}: median must be positive, got {m!r}")
    if not l_absent and not 0 <= lo < m:
        raise ValueError(f"cohort {cohort_id}: triple not ordered, l={lo!r} m={m!r}")
    if not h_absent and not hi > m:
        raise ValueError(f"cohort {cohort_id}: triple not ordered, m={m!r} h={hi!r}")

    fm = float(g0.cdf(m))
    if not 0.0 < fm < 1.0:
        raise ValueError(f"cohort {cohort_id}: median {m} lies outside the support resolved by g0")
    l_eff = float(lo) if not l_absent else float(g0.quantile(fm / 2.0))
    h_eff = float(hi) if not h_absent else float(g0.quantile((fm + 1.0) / 2.0))

    breaks = {1: np.array([m], dtype=float)}
    fvals = {1: np.array([fm])}
    breaks[2] = np.array([l_eff, m, h_eff], dtype=float)
    fvals[2] = np.array([float(g0.cdf(l_eff)), fm, float(g0.cdf(h_eff))])

    for d in range(3, depth + 1):
        prev_f = fvals[d - 1]
        padded = np.concatenate(([0.0], prev_f, [1.0]))
        mid_f = 0.5 * (padded[:-1] + padded[1:])
        new_b = np.array([float(g0.quantile(u)) for u in mid_f])
        out_b = np.empty(2**d - 1)
        out_f = np.empty(2**d - 1)
        out_b[0::2] = new_b
        out_b[1::2] = breaks[d - 1]
        out_f[0::2] = mid_f
        out_f[1::2] = prev_f
        breaks[d] = out_b
        fvals[d] = out_f

    return PartitionTree(cohort_id, depth, breaks, fvals)


def locate(tree: PartitionTree, t: float, d: int) -> NodePath:
    """Path of the unique level-d interval containing t (left-closed)."""
    if not 1 <= d <= tree.depth:
        raise ValueError(f"level {d} outside tree depth {tree.depth}")
    if t < 0:
        raise ValueError(f"event times are nonnegative, got {t!r}")
    idx = int(np.searchsorted(tree.breaks[d], t, side="right"))
    return NodePath.from_index(d, idx)


def g0_conditional(tree: PartitionTree, path: NodePath, g0: DistributionSpec) -> float:
    """G0(left child | node) for a stored node; 0.5 below the stored depth."""
    if path.level > tree.depth:
        return 0.5
    if path.level == tree.depth:
        # children are not stored; splits below the tree are at conditional medians
        return 0.5
    flo, fhi = tree.interval_f(path.level, path.index)
    mass = fhi - flo
    if mass <= 0:
        raise ArithmeticError(f"cohort {tree.cohort_id}: node {path} has zero centering mass")
    return (tree.split_f(path.level, path.index) - flo) / mass


def root_split_g0(tree: PartitionTree) -> float:
    """G0 mass of the left level-1 interval [0, m)."""
    return float(tree.fvals[1][0])


def future_triple(observed: list[tuple[float | None, float, float | None]]) -> tuple[float, float, float]:
    """Componentwise medians of reported triples; absent components excluded."""
    ls = [t[0] for t in observed if t[0] is not None and t[0] > 0]
    ms = [t[1] for t in observed]
    hs = [t[2] for t in observed if t[2] is not None and math.isfinite(t[2])]
    if not ms:
        raise ValueError("future partitions need at least one observed cohort")
    m = float(np.median(ms))
    l = float(np.median(ls)) if ls else None
    h = float(np.median(hs)) if hs else None
    # degenerate overlaps can arise when medians of the components cross
    if l is not None and l >= m:
        l = None
    if h is not None and h <= m:
        h = None
    return (l, m, h)
