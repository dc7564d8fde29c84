"""Variation diagnostics on grids.

Values are reported as the supremum of the power sum itself (no 1/p root):
sup sum |x_{t_k+1} - x_{t_k}|^p in 1D, sup sum |R-rect|^rho over grid
partitions in 2D. Suprema are restricted to sub-partitions of the given grid.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.errors import CapabilityError, DomainError
from app.kernel import CovarianceKernel, Partition
from app.sampler import gram_matrix

logger = logging.getLogger(__name__)

DEFAULT_EXACT_LIMIT = 12
MAX_CANDIDATE_PAIRS = 10_000_000
SUPERADDITIVITY_LIMIT = 11
METHODS = ("auto", "exact", "heuristic")


@dataclass(frozen=True)
class VariationReport:
    value: float
    partition: Tuple[int, ...]
    method: str
    # Second-axis partition for 2D reports
    partition_t: Optional[Tuple[int, ...]] = None


@dataclass
class SuperadditivityReport:
    checked: int = 0
    tolerance: float = 1e-10
    # (part A, part B, union, excess) with rectangles as (a, b, c, d) grid indices
    violations: List[Tuple[tuple, tuple, tuple, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def p_variation_1d(seq: Sequence[float], p: float) -> VariationReport:
    """Exact sup over sub-partitions by V[j] = max_{i<j} V[i] + |x_j - x_i|^p."""
    x = np.asarray(seq, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise DomainError("p-variation needs a sequence of length >= 2")
    if p < 1:
        raise DomainError(f"p must be >= 1, got {p}")

    n = x.size
    best = np.zeros(n)
    prev = np.zeros(n, dtype=int)
    for j in range(1, n):
        cand = best[:j] + np.abs(x[j] - x[:j]) ** p
        i = int(np.argmax(cand))
        best[j] = cand[i]
        prev[j] = i

    path = [n - 1]
    while path[-1] != 0:
        path.append(int(prev[path[-1]]))
    return VariationReport(value=float(best[-1]), partition=tuple(reversed(path)), method="exact")


def _grid_gram(kernel: CovarianceKernel, grid: Partition) -> np.ndarray:
    return gram_matrix(kernel, grid)


def _partition_sum(gram: np.ndarray, s_pts: Sequence[int], t_pts: Sequence[int], rho: float) -> float:
    block = gram[np.ix_(list(s_pts), list(t_pts))]
    rect = np.diff(np.diff(block, axis=0), axis=1)
    return float(np.sum(np.abs(rect) ** rho))


def _best_t_partition(gram: np.ndarray, s_pts: Sequence[int], t_pts: Sequence[int], rho: float):
    """Exact DP over sub-partitions of t_pts for a fixed s-partition.

    With the s-partition fixed the cost is additive over t-intervals, so
    V[d] = max_{c<d} V[c] + w(c, d) with w summing |R-rect|^rho down the column.
    """
    rows = gram[np.ix_(list(s_pts), list(t_pts))]
    diffs = np.diff(rows, axis=0)
    m = len(t_pts)
    # w[c, d] = sum_a |diffs[a, d] - diffs[a, c]|^rho
    w = np.sum(np.abs(diffs[:, None, :] - diffs[:, :, None]) ** rho, axis=0)
    best = np.full(m, -np.inf)
    best[0] = 0.0
    prev = np.zeros(m, dtype=int)
    for d in range(1, m):
        cand = best[:d] + w[:d, d]
        c = int(np.argmax(cand))
        best[d] = cand[c]
        prev[d] = c
    chosen = [m - 1]
    while chosen[-1] != 0:
        chosen.append(int(prev[chosen[-1]]))
    return float(best[-1]), tuple(t_pts[c] for c in reversed(chosen))


def _exact_block(gram: np.ndarray, s_pts: Sequence[int], t_pts: Sequence[int], rho: float):
    interior = list(s_pts[1:-1])
    best = (-np.inf, (), ())
    for r in range(len(interior) + 1):
        for subset in itertools.combinations(interior, r):
            s_part = (s_pts[0],) + subset + (s_pts[-1],)
            value, t_part = _best_t_partition(gram, s_part, t_pts, rho)
            if value > best[0]:
                best = (value, s_part, t_part)
    return best


def _heuristic(gram: np.ndarray, n: int, rho: float):
    """Greedy single-point insert/delete hill-climbing from two deterministic starts."""
    interior = list(range(1, n))
    results = []
    for start in (set(interior), set()):
        s_set, t_set = set(start), set(start)

        def score(ss, ts):
            return _partition_sum(gram, [0] + sorted(ss) + [n], [0] + sorted(ts) + [n], rho)

        current = score(s_set, t_set)
        improved = True
        while improved:
            improved = False
            best_move = None
            for axis in (0, 1):
                for pt in interior:
                    ss, ts = set(s_set), set(t_set)
                    target = ss if axis == 0 else ts
                    target.symmetric_difference_update({pt})
                    value = score(ss, ts)
                    if value > current + 1e-15 * max(1.0, abs(current)) and (
                        best_move is None or value > best_move[0]
                    ):
                        best_move = (value, ss, ts)
            if best_move is not None:
                current, s_set, t_set = best_move
                improved = True
        results.append((current, tuple([0] + sorted(s_set) + [n]), tuple([0] + sorted(t_set) + [n])))
    return max(results, key=lambda r: r[0])


def rho_variation_2d(
    kernel: CovarianceKernel,
    grid: Partition,
    rho: float,
    exact_limit: int = DEFAULT_EXACT_LIMIT,
    method: str = "auto",
) -> VariationReport:
    """sup over grid partitions of sum |R-rect|^rho restricted to ``grid``.

    ``method="auto"`` runs the exact enumerator when the grid has at most
    ``exact_limit`` points and the hill-climbing heuristic otherwise.
    """
    if rho < 1:
        raise DomainError(f"rho must be >= 1, got {rho}")
    if method not in METHODS:
        raise DomainError(f"Unknown method '{method}' (use {', '.join(METHODS)})")
    n = grid.n
    gram = _grid_gram(kernel, grid)
    points = n + 1
    pairs = float(2 ** max(n - 1, 0)) ** 2
    exact_ok = points <= exact_limit and pairs <= MAX_CANDIDATE_PAIRS

    if method == "exact" and not exact_ok:
        raise CapabilityError(
            f"Exact 2D variation limited to {exact_limit} points per axis and "
            f"{MAX_CANDIDATE_PAIRS:.0e} candidate pairs; grid has {points} points"
        )
    if method == "exact" or (method == "auto" and exact_ok):
        value, s_part, t_part = _exact_block(gram, list(range(points)), list(range(points)), rho)
        kind = "exact"
    else:
        value, s_part, t_part = _heuristic(gram, n, rho)
        kind = "heuristic"
    logger.debug("2D %g-variation of %s on n=%d (%s): %.6g", rho, kernel.name, n, kind, value)
    return VariationReport(value=value, partition=tuple(s_part), method=kind, partition_t=tuple(t_part))


def brute_force_rho_variation_2d(kernel: CovarianceKernel, grid: Partition, rho: float) -> float:
    """Enumerate every pair of axis sub-partitions; only for tiny grids."""
    n = grid.n
    if n > 10:
        raise CapabilityError(f"Brute force limited to n <= 10, got {n}")
    gram = _grid_gram(kernel, grid)
    interior = list(range(1, n))
    subsets = [
        (0,) + c + (n,) for r in range(len(interior) + 1) for c in itertools.combinations(interior, r)
    ]
    return max(_partition_sum(gram, s, t, rho) for s in subsets for t in subsets)


def superadditivity_check(
    kernel: CovarianceKernel, grid: Partition, rho: float, tolerance: float = 1e-10
) -> SuperadditivityReport:
    """Check w(A) + w(B) <= w(A u B) + tolerance over every two-piece axis-aligned split.

    w is the exact grid-restricted rho-variation power sum on the rectangle.
    Rectangles run over all grid-index boxes [a,b] x [c,d] with a < b, c < d.
    """
    if grid.n + 1 > SUPERADDITIVITY_LIMIT:
        raise CapabilityError(
            f"Super-additivity check limited to {SUPERADDITIVITY_LIMIT} points per axis, got {grid.n + 1}"
        )
    gram = _grid_gram(kernel, grid)
    n = grid.n
    memo: Dict[Tuple[int, int, int, int], float] = {}

    def omega(a: int, b: int, c: int, d: int) -> float:
        if a == b or c == d:
            return 0.0
        key = (a, b, c, d)
        if key not in memo:
            memo[key] = _exact_block(gram, list(range(a, b + 1)), list(range(c, d + 1)), rho)[0]
        return memo[key]

    report = SuperadditivityReport(tolerance=tolerance)
    for a, b in itertools.combinations(range(n + 1), 2):
        for c, d in itertools.combinations(range(n + 1), 2):
            whole = omega(a, b, c, d)
            splits = [((a, m, c, d), (m, b, c, d)) for m in range(a + 1, b)]
            splits += [((a, b, c, m), (a, b, m, d)) for m in range(c + 1, d)]
            for left, right in splits:
                report.checked += 1
                excess = omega(*left) + omega(*right) - whole
                if excess > tolerance:
                    report.violations.append((left, right, (a, b, c, d), excess))
    if report.violations:
        logger.warning(
            "Super-additivity: %d of %d splits violated for %s, rho=%g",
            len(report.violations), report.checked, kernel.name, rho,
        )
    return report
