"""Hermite layer and closed-form iterated divergences.

An iterated divergence delta^i(g(t_k, x_{t_k}) beta_k^{(x)|i|}) is a finite
linear combination of terms

    coeff * prod_l H_{m_l}(X_{l,k}) * d_0^{a_0} d^a f(t_k, x_{t_k})

with X_{l,k} = (x_l(t_{k+1}) - x_l(t_k)) / sigma_{l,k} standard normal.
ChaosSum holds such a combination in canonical form; divergence_eval builds
it from the one-component recursion

    delta^i(g beta^i) = g sigma^i H_i(X) - sum_{j>=1} C(i,j) alpha^j delta^{i-j}(g^(j) beta^{i-j})

applied one component at a time.
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.errors import CapabilityError, DomainError
from app.kernel import PartitionTables
from app.testfn import TestFunction, eval_partial

logger = logging.getLogger(__name__)

MAX_HERMITE_DEGREE = 64
MAX_MONOMIAL_DEGREE = 20
MAX_MOMENT_ORDER = 10

Coeff = Union[float, np.ndarray]
TermKey = Tuple[Tuple[int, ...], Tuple[int, ...], int]


def hermite_eval(k: int, x):
    """Probabilists' Hermite polynomial He_k at x (scalar or array)."""
    if not 0 <= k <= MAX_HERMITE_DEGREE:
        raise DomainError(f"Hermite degree must lie in [0, {MAX_HERMITE_DEGREE}], got {k}")
    x = np.asarray(x, dtype=float)
    prev = np.ones_like(x)
    if k == 0:
        cur = prev
    else:
        cur = x.copy()
        for n in range(1, k):
            prev, cur = cur, x * cur - n * prev
    return float(cur) if cur.ndim == 0 else cur


def monomial_hermite_coeff(i: int, q: int) -> Fraction:
    """a^i_{i-2q} = i! / (2^q q! (i-2q)!), so that x^i = sum_q a^i_{i-2q} He_{i-2q}(x)."""
    if i < 0 or q < 0 or 2 * q > i:
        raise DomainError(f"Need 0 <= 2q <= i, got i={i}, q={q}")
    if i > MAX_MONOMIAL_DEGREE:
        raise DomainError(f"Monomial degree must be <= {MAX_MONOMIAL_DEGREE}, got {i}")
    return Fraction(math.factorial(i), 2 ** q * math.factorial(q) * math.factorial(i - 2 * q))


@dataclass(frozen=True, eq=False)
class ChaosTerm:
    """coeff * prod_l He_{hermite_deg[l]}(X_l) * d_0^{time_order} d^{deriv} f.

    ``coeff`` is a scalar for a single interval, or an array over all
    intervals of the partition.
    """

    coeff: Coeff
    hermite_deg: Tuple[int, ...]
    deriv: Tuple[int, ...]
    time_order: int = 0

    def __post_init__(self):
        if any(m < 0 for m in self.hermite_deg) or any(a < 0 for a in self.deriv):
            raise DomainError("Hermite degrees and derivative orders must be nonnegative")
        if self.time_order < 0:
            raise DomainError("Time-derivative order must be nonnegative")
        if not np.all(np.isfinite(self.coeff)):
            raise DomainError("Chaos term coefficient must be finite")

    @property
    def key(self) -> TermKey:
        return (self.hermite_deg, self.deriv, self.time_order)


def _is_zero(c: Coeff) -> bool:
    return not np.any(c)


def _neumaier(parts: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise compensated summation of equally shaped arrays."""
    total = np.zeros_like(parts[0], dtype=float)
    comp = np.zeros_like(total)
    for part in parts:
        t = total + part
        big = np.abs(total) >= np.abs(part)
        comp += np.where(big, (total - t) + part, (part - t) + total)
        total = t
    return total + comp


class ChaosSum:
    """Canonical linear combination of chaos terms on one partition.

    ``k`` is the interval index, or None when coefficients are arrays over
    every interval.
    """

    def __init__(
        self,
        d: int,
        tables: Sequence[PartitionTables],
        times: np.ndarray,
        k: Optional[int] = None,
        terms: Optional[Dict[TermKey, Coeff]] = None,
    ):
        self.d = d
        self.tables = list(tables)
        self.times = np.asarray(times, dtype=float)
        self.k = k
        self._terms: Dict[TermKey, Coeff] = {}
        for key, coeff in (terms or {}).items():
            self.add(key, coeff)

    def add(self, key: TermKey, coeff: Coeff):
        if key in self._terms:
            coeff = self._terms[key] + coeff
        if _is_zero(coeff):
            self._terms.pop(key, None)
        else:
            self._terms[key] = coeff

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self):
        return iter(self.terms)

    @property
    def terms(self) -> List[ChaosTerm]:
        """Terms ordered by descending total Hermite degree."""
        ordered = sorted(self._terms.items(), key=lambda kv: (-sum(kv[0][0]), kv[0]))
        return [ChaosTerm(coeff=c, hermite_deg=h, deriv=a, time_order=a0) for (h, a, a0), c in ordered]

    def evaluate(self, f: TestFunction, values: np.ndarray) -> np.ndarray:
        """Evaluate on path values of shape (d, n+1) or (N, d, n+1).

        Returns per-interval contributions of shape (..., n) when k is None,
        otherwise the value at interval k with shape (...).
        """
        values = np.asarray(values, dtype=float)
        if values.shape[-2] != self.d:
            raise DomainError(f"Path has {values.shape[-2]} components, chaos sum expects {self.d}")
        sl = slice(None) if self.k is None else slice(self.k, self.k + 1)

        x_left = np.moveaxis(values[..., :-1][..., sl], -2, 0)
        incr = np.moveaxis(np.diff(values, axis=-1)[..., sl], -2, 0)
        t_left = self.times[:-1][sl]
        sigma = np.stack([tab.sigma[sl] for tab in self.tables])
        sigma = sigma.reshape((self.d,) + (1,) * (incr.ndim - 2) + sigma.shape[-1:])
        safe = np.where(sigma > 0, sigma, 1.0)
        X = np.where(sigma > 0, incr / safe, 0.0)

        if not self._terms:
            zero = np.zeros(x_left.shape[1:])
            return zero if self.k is None else zero[..., 0]

        hermite_cache: Dict[Tuple[int, int], np.ndarray] = {}
        deriv_cache: Dict[Tuple[int, Tuple[int, ...]], np.ndarray] = {}

        def herm(l: int, m: int) -> np.ndarray:
            if (l, m) not in hermite_cache:
                hermite_cache[(l, m)] = hermite_eval(m, X[l])
            return hermite_cache[(l, m)]

        parts = []
        for term in self.terms:
            dkey = (term.time_order, term.deriv)
            if dkey not in deriv_cache:
                deriv_cache[dkey] = np.broadcast_to(
                    eval_partial(f, term.time_order, term.deriv, t_left, x_left), x_left.shape[1:]
                )
            value = np.asarray(term.coeff) * deriv_cache[dkey]
            for l, m in enumerate(term.hermite_deg):
                if m:
                    value = value * herm(l, m)
            parts.append(value)
        total = _neumaier(parts)
        return total if self.k is None else total[..., 0]


def divergence_eval(
    f: TestFunction,
    deriv_base: Sequence[int],
    i: Sequence[int],
    k: Optional[int],
    tables: Sequence[PartitionTables],
    times: np.ndarray,
    order: Optional[Sequence[int]] = None,
) -> ChaosSum:
    """ChaosSum for delta^i(d^{deriv_base} f(t_k, x_{t_k}) beta_k^{(x)|i|}).

    Components are peeled off in ``order`` (ascending by default). Hermite
    factors of components already processed ride along unchanged, since the
    Malliavin derivative along one component annihilates functions of the
    others. ``k=None`` vectorizes the coefficients over all intervals.
    """
    d = len(tables)
    base = tuple(int(a) for a in deriv_base)
    idx = tuple(int(v) for v in i)
    if len(base) != d or len(idx) != d:
        raise DomainError(f"Multi-indices must have length d={d}")
    if any(v < 0 for v in base + idx):
        raise DomainError("Multi-indices must be nonnegative")
    needed = sum(base) + sum(idx)
    if needed > f.max_order:
        raise CapabilityError(
            f"Divergence of order {sum(idx)} on d^{sum(base)} f needs derivative order "
            f"{needed}, test function provides {f.max_order}"
        )
    order = list(range(d)) if order is None else [int(l) for l in order]
    if sorted(order) != list(range(d)):
        raise DomainError(f"Component order must be a permutation of 0..{d - 1}, got {order}")

    if k is None:
        sigma = [tab.sigma for tab in tables]
        alpha = [tab.alpha for tab in tables]
    else:
        if not 0 <= k < tables[0].n:
            raise DomainError(f"Interval index {k} outside [0, {tables[0].n})")
        sigma = [float(tab.sigma[k]) for tab in tables]
        alpha = [float(tab.alpha[k]) for tab in tables]

    memo: Dict[Tuple[Tuple[int, ...], Tuple[int, ...]], Dict[TermKey, Coeff]] = {}

    def recurse(b: Tuple[int, ...], ii: Tuple[int, ...]) -> Dict[TermKey, Coeff]:
        if (b, ii) in memo:
            return memo[(b, ii)]
        l = next((c for c in order if ii[c] > 0), None)
        if l is None:
            result = {((0,) * d, b, 0): 1.0}
        else:
            acc = ChaosSum(d, tables, times, k)
            rest = ii[:l] + (0,) + ii[l + 1:]
            lead = sigma[l] ** ii[l]
            for (h, a, a0), c in recurse(b, rest).items():
                acc.add((h[:l] + (ii[l],) + h[l + 1:], a, a0), c * lead)
            for j in range(1, ii[l] + 1):
                weight = -math.comb(ii[l], j) * alpha[l] ** j
                if _is_zero(weight):
                    continue
                shifted = b[:l] + (b[l] + j,) + b[l + 1:]
                lower = ii[:l] + (ii[l] - j,) + ii[l + 1:]
                for key, c in recurse(shifted, lower).items():
                    acc.add(key, c * weight)
            result = dict(acc._terms)
        memo[(b, ii)] = result
        return result

    out = ChaosSum(d, tables, times, k, recurse(base, idx))
    logger.debug("divergence i=%s base=%s: %d terms", idx, base, len(out))
    return out


def moment_oracle(i: int, i_prime: int, k: int, k_prime: int, tables: PartitionTables) -> float:
    """E[delta^i(beta_k^i) delta^i'(beta_k'^i')] = i! <beta_k, beta_k'>^i if i = i', else 0."""
    if not (0 <= i <= MAX_MOMENT_ORDER and 0 <= i_prime <= MAX_MOMENT_ORDER):
        raise DomainError(f"Moment orders must lie in [0, {MAX_MOMENT_ORDER}]")
    if i != i_prime:
        return 0.0
    return math.factorial(i) * float(tables.cross[k, k_prime]) ** i
