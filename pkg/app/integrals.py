"""Riemann sums of the conversion formula and the chaos decomposition behind it.

All sums take the potential f and integrate its gradient along the path:

- compensated_sum: sum_k sum_{1<=|i|<=l} d^i f(t_k, x_k) prod_l (dx_l)^{i_l} / i_l!
- skorohod_sum: sum_k sum_{1<=|i|<=[rho]} prod_l 1/i_l! * delta^i(d^i f beta_k^{|i|})
- young_sum: sum_k sum_l d^2_ll f(t_k, x_k) (R_l(t_k+1, t_k+1) - R_l(t_k, t_k))

Paths may be a SamplePath, a (d, n+1) array, or an (N, d, n+1) batch; batch
input returns one value per path.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.chaos import ChaosSum, _neumaier, divergence_eval
from app.errors import CapabilityError, DomainError
from app.kernel import CovarianceKernel, Partition, PartitionTables, partition_tables
from app.sampler import SamplePath
from app.testfn import TestFunction, eval_partial

logger = logging.getLogger(__name__)

QUADRATURES = ("trapezoid", "midpoint")
CASES = ("i", "ii", "iii", "iv", "v", "vi")

# Integer parts are taken after this nudge so that 2 * 1.25 counts as 2.5
# and 1/(2 * 0.25) as 2.
_FLOOR_SLACK = 1e-12

MultiIndex = Tuple[int, ...]
PathLike = Union[SamplePath, np.ndarray]


def auto_orders(rho: float, epsilon: float = 0.0) -> Tuple[int, int]:
    """(skorohod_order, strat_order) = ([rho + eps], [2 (rho + eps)])."""
    r = rho + epsilon
    return int(math.floor(r + _FLOOR_SLACK)), int(math.floor(2.0 * r + _FLOOR_SLACK))


@dataclass(frozen=True, eq=False)
class SumSpec:
    partition: Partition
    kernels: List[CovarianceKernel]
    f: TestFunction
    strat_order: int
    skorohod_order: int
    rho: float
    rho_prime: float
    quadrature: str = "trapezoid"

    def __post_init__(self):
        if not 1 <= self.skorohod_order <= self.strat_order:
            raise DomainError(
                f"Need 1 <= skorohod_order <= strat_order, got {self.skorohod_order}, {self.strat_order}"
            )
        if self.f.d != len(self.kernels):
            raise DomainError(f"Test function has d={self.f.d} but {len(self.kernels)} kernels were given")
        if self.quadrature not in QUADRATURES:
            raise DomainError(f"Unknown quadrature '{self.quadrature}' (use {' or '.join(QUADRATURES)})")

    @property
    def d(self) -> int:
        return len(self.kernels)

    def tables(self) -> List[PartitionTables]:
        return [partition_tables(k, self.partition) for k in self.kernels]


def build_sum_spec(
    kernels: Sequence[CovarianceKernel],
    partition: Partition,
    f: TestFunction,
    epsilon: float = 0.0,
    skorohod_order: Optional[int] = None,
    strat_order: Optional[int] = None,
    quadrature: str = "trapezoid",
) -> SumSpec:
    """Derive orders from max declared rho (+ epsilon); explicit orders win."""
    if epsilon < 0:
        raise DomainError(f"epsilon must be nonnegative, got {epsilon}")
    rho = max(k.rho for k in kernels) + epsilon
    rho_prime = max(k.rho_prime for k in kernels)
    auto_sk, auto_strat = auto_orders(rho)
    return SumSpec(
        partition=partition,
        kernels=list(kernels),
        f=f,
        strat_order=auto_strat if strat_order is None else int(strat_order),
        skorohod_order=auto_sk if skorohod_order is None else int(skorohod_order),
        rho=rho,
        rho_prime=rho_prime,
        quadrature=quadrature,
    )


def multi_indices(d: int, lo: int, hi: int) -> List[MultiIndex]:
    """All i in N^d with lo <= |i| <= hi, by total degree then lexicographically."""
    out = [i for i in itertools.product(range(hi + 1), repeat=d) if lo <= sum(i) <= hi]
    return sorted(out, key=lambda i: (sum(i), i))


def _values(path: PathLike) -> np.ndarray:
    values = path.values if isinstance(path, SamplePath) else np.asarray(path, dtype=float)
    if values.ndim not in (2, 3):
        raise DomainError(f"Path values must have shape (d, n+1) or (N, d, n+1), got {values.shape}")
    return values


def _tables(tables, d: int) -> List[PartitionTables]:
    if isinstance(tables, PartitionTables):
        tables = [tables]
    tables = list(tables)
    if len(tables) != d:
        raise DomainError(f"Expected {d} component tables, got {len(tables)}")
    return tables


def _left(spec: SumSpec, values: np.ndarray):
    """Left-point times, component-first left values, component-first increments."""
    if values.shape[-1] != spec.partition.n + 1 or values.shape[-2] != spec.d:
        raise DomainError(
            f"Path shape {values.shape} does not match d={spec.d}, n={spec.partition.n}"
        )
    x_left = np.moveaxis(values[..., :-1], -2, 0)
    incr = np.moveaxis(np.diff(values, axis=-1), -2, 0)
    return spec.partition.times[:-1], x_left, incr


def _require(f: TestFunction, order: int, what: str):
    if order > f.max_order:
        raise CapabilityError(f"{what} needs derivative order {order}, test function provides {f.max_order}")


def _finish(per_path: np.ndarray):
    return float(per_path) if np.ndim(per_path) == 0 else per_path


def _interval_sum(parts: List[np.ndarray]) -> np.ndarray:
    return np.sum(_neumaier(parts), axis=-1)


def _compensated_intervals(spec: SumSpec, values: np.ndarray) -> np.ndarray:
    _require(spec.f, spec.strat_order, "compensated sum")
    t, x, incr = _left(spec, values)
    parts = []
    for i in sorted(multi_indices(spec.d, 1, spec.strat_order), key=lambda i: -sum(i)):
        term = eval_partial(spec.f, 0, i, t, x)
        for l, il in enumerate(i):
            if il:
                term = term * incr[l] ** il / math.factorial(il)
        parts.append(np.broadcast_to(term, x.shape[1:]))
    return _neumaier(parts)


def compensated_sum(spec: SumSpec, path: PathLike):
    return _finish(np.sum(_compensated_intervals(spec, _values(path)), axis=-1))


def _skorohod_intervals(spec: SumSpec, values: np.ndarray, tables, order: Optional[int] = None) -> np.ndarray:
    m = spec.skorohod_order if order is None else int(order)
    if m < 1:
        raise DomainError(f"Skorohod order must be >= 1, got {m}")
    tables = _tables(tables, spec.d)
    _require(spec.f, 2 * m, f"order-{m} Skorohod sum")
    parts = []
    for i in sorted(multi_indices(spec.d, 1, m), key=lambda i: -sum(i)):
        chaos = divergence_eval(spec.f, i, i, None, tables, spec.partition.times)
        weight = 1.0 / math.prod(math.factorial(v) for v in i)
        parts.append(weight * chaos.evaluate(spec.f, values))
    return _neumaier(parts)


def skorohod_sum(spec: SumSpec, path: PathLike, tables, order: Optional[int] = None):
    """Order-[rho] Skorohod-Riemann sum; ``order`` truncates at another order."""
    return _finish(np.sum(_skorohod_intervals(spec, _values(path), tables, order), axis=-1))


def _young_intervals(spec: SumSpec, values: np.ndarray, tables=None) -> np.ndarray:
    _require(spec.f, 2, "Young sum")
    t, x, _ = _left(spec, values)
    if tables is None:
        tables = spec.tables()
    tables = _tables(tables, spec.d)
    total = np.zeros(x.shape[1:])
    for l in range(spec.d):
        a = tuple(2 if c == l else 0 for c in range(spec.d))
        total = total + eval_partial(spec.f, 0, a, t, x) * tables[l].diag_incr
    return total


def young_sum(spec: SumSpec, path: PathLike, tables=None):
    return _finish(np.sum(_young_intervals(spec, _values(path), tables), axis=-1))


def _time_quadrature_intervals(spec: SumSpec, values: np.ndarray) -> np.ndarray:
    times = spec.partition.times
    dt = np.diff(times)
    x_all = np.moveaxis(values, -2, 0)
    a = (0,) * spec.d
    if spec.quadrature == "trapezoid":
        g = np.broadcast_to(eval_partial(spec.f, 1, a, times, x_all), x_all.shape[1:])
        return 0.5 * (g[..., :-1] + g[..., 1:]) * dt
    mid_t = 0.5 * (times[:-1] + times[1:])
    mid_x = 0.5 * (x_all[..., :-1] + x_all[..., 1:])
    g = np.broadcast_to(eval_partial(spec.f, 1, a, mid_t, mid_x), mid_x.shape[1:])
    return g * dt


def stratonovich_oracle(spec: SumSpec, path: PathLike):
    """f(T, x_T) - f(0, x_0) - quadrature of d_0 f(t, x_t) on the grid."""
    values = _values(path)
    _left(spec, values)
    T = spec.partition.T
    end = spec.f(T, np.moveaxis(values[..., -1], -1, 0))
    start = spec.f(0.0, np.moveaxis(values[..., 0], -1, 0))
    quad = np.sum(_time_quadrature_intervals(spec, values), axis=-1)
    return _finish(end - start - quad)


def conversion_residual(spec: SumSpec, path: PathLike, tables):
    """Oracle minus Skorohod sum minus half the Young sum."""
    values = _values(path)
    tables = _tables(tables, spec.d)
    oracle = np.asarray(stratonovich_oracle(spec, values))
    sk = np.asarray(skorohod_sum(spec, values, tables))
    young = np.asarray(young_sum(spec, values, tables))
    return _finish(oracle - sk - 0.5 * young)


def ito_residual(spec: SumSpec, path: PathLike, tables):
    """Same quantity as conversion_residual, accumulated interval by interval.

    Each interval contributes f(t_k+1, x_k+1) - f(t_k, x_k) minus its share of
    the time quadrature, the Skorohod sum and half the Young sum.
    """
    values = _values(path)
    tables = _tables(tables, spec.d)
    times = spec.partition.times
    f_nodes = np.broadcast_to(spec.f(times, np.moveaxis(values, -2, 0)), values.shape[:-2] + times.shape)
    per_interval = (
        np.diff(f_nodes, axis=-1)
        - _time_quadrature_intervals(spec, values)
        - _skorohod_intervals(spec, values, tables)
        - 0.5 * _young_intervals(spec, values, tables)
    )
    return _finish(np.sum(per_interval, axis=-1))


# Index sets of the chaos decomposition. A multi-index is a d-tuple; the
# one-dimensional case uses 1-tuples.

Triple = Tuple[MultiIndex, MultiIndex, MultiIndex]


def _as_multi(v, d: Optional[int] = None) -> MultiIndex:
    if isinstance(v, (int, np.integer)):
        v = (int(v),)
    v = tuple(int(c) for c in v)
    if d is not None and len(v) != d:
        raise DomainError(f"Multi-index {v} does not have length {d}")
    if any(c < 0 for c in v):
        raise DomainError(f"Multi-index {v} has negative entries")
    return v


def _sub(a: MultiIndex, b: MultiIndex) -> MultiIndex:
    return tuple(x - y for x, y in zip(a, b))


def _add(a: MultiIndex, b: MultiIndex) -> MultiIndex:
    return tuple(x + y for x, y in zip(a, b))


def index_set_A(ell: int, d: int = 1) -> List[Triple]:
    """(i, q, j) with 1 <= |i| <= ell, 2q <= i and j <= i - 2q componentwise."""
    per_component = [
        (i, q, j) for i in range(ell + 1) for q in range(i // 2 + 1) for j in range(i - 2 * q + 1)
    ]
    out = []
    for combo in itertools.product(per_component, repeat=d):
        i = tuple(c[0] for c in combo)
        if 1 <= sum(i) <= ell:
            out.append((i, tuple(c[1] for c in combo), tuple(c[2] for c in combo)))
    return out


def index_set_A_L(ell: int, L) -> List[Triple]:
    L = _as_multi(L)
    return [t for t in index_set_A(ell, len(L)) if _sub(_sub(t[0], _add(t[1], t[1])), t[2]) == L]


def index_set_A_Ltau(ell: int, L, tau) -> List[Triple]:
    L = _as_multi(L)
    tau = _as_multi(tau, len(L))
    return [t for t in index_set_A_L(ell, L) if _add(t[1], t[2]) == tau]


def index_set_I(ell: int, d: int = 1) -> List[Tuple[MultiIndex, MultiIndex]]:
    out = []
    for L in multi_indices(d, 0, ell):
        for tau in multi_indices(d, 0, ell - sum(L)):
            out.append((L, tau))
    return out


def explicit_A_Ltau(L, tau) -> List[Triple]:
    """Closed-form A_{L tau}: per component (L+tau, 0, tau), (L+tau+1, 1, tau-1), ..., (L+2tau, tau, 0).

    Matches the filtered set whenever |L + 2 tau| <= ell. A_00 is empty.
    """
    L = _as_multi(L)
    tau = _as_multi(tau, len(L))
    if not any(L) and not any(tau):
        return []
    choices = [[(Ll + tl + s, s, tl - s) for s in range(tl + 1)] for Ll, tl in zip(L, tau)]
    return [
        (tuple(c[0] for c in combo), tuple(c[1] for c in combo), tuple(c[2] for c in combo))
        for combo in itertools.product(*choices)
    ]


def _check_m_indices(ell: int, L, tau, i, q, j, j_prime, d: int):
    L, tau, i, q, j, j_prime = (_as_multi(v, d) for v in (L, tau, i, q, j, j_prime))
    if not 1 <= sum(i) <= ell:
        raise DomainError(f"|i| = {sum(i)} outside [1, {ell}]")
    if any(2 * ql > il for ql, il in zip(q, i)):
        raise DomainError(f"2q > i for q={q}, i={i}")
    if any(jl > il - 2 * ql for jl, il, ql in zip(j, i, q)):
        raise DomainError(f"j > i - 2q for i={i}, q={q}, j={j}")
    if _sub(_sub(i, _add(q, q)), j) != L:
        raise DomainError(f"L={L} differs from i - 2q - j for i={i}, q={q}, j={j}")
    if _add(q, j) != tau:
        raise DomainError(f"tau={tau} differs from q + j for q={q}, j={j}")
    if any(jp > jl for jp, jl in zip(j_prime, j)):
        raise DomainError(f"j'={j_prime} exceeds j={j}")
    return L, tau, i, q, j, j_prime


def _m_weights(tables: List[PartitionTables], q, j, j_prime, L) -> np.ndarray:
    const = 1.0
    weights = np.ones(tables[0].n)
    for l, tab in enumerate(tables):
        const *= (
            math.comb(j[l], j_prime[l]) * (-1) ** j_prime[l]
            / (2 ** (q[l] + j[l]) * math.factorial(q[l]) * math.factorial(j[l]) * math.factorial(L[l]))
        )
        weights = weights * np.power(tab.sigma_sq, j_prime[l] + q[l])
        weights = weights * np.power(tab.diag_incr, j[l] - j_prime[l])
    return const * weights


class _DivergenceCache:
    """Evaluated delta^L(d^{L+2tau} f beta^|L|) per (L, L+2tau) on one batch of paths."""

    def __init__(self, spec: SumSpec, values: np.ndarray, tables: List[PartitionTables]):
        self.spec = spec
        self.values = values
        self.tables = tables
        self._cache: Dict[Tuple[MultiIndex, MultiIndex], np.ndarray] = {}

    def get(self, L: MultiIndex, base: MultiIndex) -> np.ndarray:
        key = (L, base)
        if key not in self._cache:
            chaos: ChaosSum = divergence_eval(self.spec.f, base, L, None, self.tables, self.spec.partition.times)
            self._cache[key] = chaos.evaluate(self.spec.f, self.values)
        return self._cache[key]


def _m_intervals(cache: _DivergenceCache, L, tau, q, j, j_prime) -> np.ndarray:
    base = _add(L, _add(tau, tau))
    return cache.get(L, base) * _m_weights(cache.tables, q, j, j_prime, L)


def m_term(L, tau, i, q, j, j_prime, spec: SumSpec, path: PathLike, tables):
    """M(L, tau, i, q, j, j') summed over the intervals of the partition."""
    tables = _tables(tables, spec.d)
    L, tau, i, q, j, j_prime = _check_m_indices(spec.strat_order, L, tau, i, q, j, j_prime, spec.d)
    values = _values(path)
    _left(spec, values)
    cache = _DivergenceCache(spec, values, tables)
    return _finish(np.sum(_m_intervals(cache, L, tau, q, j, j_prime), axis=-1))


def _j_primes(j: MultiIndex) -> List[MultiIndex]:
    return list(itertools.product(*(range(jl + 1) for jl in j)))


def _decomposition(spec: SumSpec):
    """Yield (L, tau, i, q, j, j') over I x A_{L tau} x {j' <= j}."""
    grouped: Dict[Tuple[MultiIndex, MultiIndex], List[Triple]] = {}
    for i, q, j in index_set_A(spec.strat_order, spec.d):
        L = _sub(_sub(i, _add(q, q)), j)
        grouped.setdefault((L, _add(q, j)), []).append((i, q, j))
    for L, tau in index_set_I(spec.strat_order, spec.d):
        for i, q, j in grouped.get((L, tau), []):
            for jp in _j_primes(j):
                yield L, tau, i, q, j, jp


def _check_decomposition_order(spec: SumSpec):
    _require(spec.f, 2 * spec.strat_order, "chaos decomposition")


def chaos_identity_residual(spec: SumSpec, path: PathLike, tables):
    """compensated_sum minus the sum of every M-term; zero up to rounding."""
    tables = _tables(tables, spec.d)
    _check_decomposition_order(spec)
    values = _values(path)
    cache = _DivergenceCache(spec, values, tables)
    parts = [_m_intervals(cache, L, tau, q, j, jp) for L, tau, i, q, j, jp in _decomposition(spec)]
    decomposed = _interval_sum(parts)
    comp = np.sum(_compensated_intervals(spec, values), axis=-1)
    return _finish(comp - decomposed)


def case_v_coeff(tau: int) -> Fraction:
    """sum_{q+j=tau} 2^-q / (q! j!) * (-1/2)^j, which is (1/2 - 1/2)^tau / tau!."""
    if tau < 1:
        raise DomainError(f"tau must be >= 1, got {tau}")
    return sum(
        (Fraction(1, 2 ** q * math.factorial(q) * math.factorial(tau - q)) * Fraction(-1, 2) ** (tau - q)
         for q in range(tau + 1)),
        Fraction(0),
    )


def classify_case(L, tau, i, q, j, j_prime, rho: float) -> str:
    """Which of the six mutually exclusive cases an M-term index tuple falls in."""
    L, tau, j, j_prime = (_as_multi(v) for v in (L, tau, j, j_prime))
    gap = sum(j) - sum(j_prime)
    size = sum(L) + sum(tau)
    if gap >= 2:
        return "i"
    if gap == 1:
        return "ii" if size > 1 else "iv"
    if size > rho:
        return "iii"
    return "v" if any(tau) else "vi"


def case_sums(spec: SumSpec, path: PathLike, tables) -> Dict[str, Union[float, np.ndarray]]:
    """Per-case totals of the M-terms; they add up to compensated_sum.

    Case (iv) is half the Young sum, case (v) cancels, and case (vi) is the
    Skorohod sum at order [rho].
    """
    tables = _tables(tables, spec.d)
    _check_decomposition_order(spec)
    values = _values(path)
    cache = _DivergenceCache(spec, values, tables)
    parts: Dict[str, List[np.ndarray]] = {c: [] for c in CASES}
    for L, tau, i, q, j, jp in _decomposition(spec):
        parts[classify_case(L, tau, i, q, j, jp, spec.rho)].append(_m_intervals(cache, L, tau, q, j, jp))
    shape = values.shape[:-2]
    return {
        c: _finish(_interval_sum(p) if p else np.zeros(shape))
        for c, p in parts.items()
    }
