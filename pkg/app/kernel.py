"""Covariance kernels and the inner-product tables of a partition.

Everything downstream works in the Hilbert space spanned by indicator
functions 1_[s,t], where <1_[u,v], 1_[s,t]> is the rectangular increment of
the covariance R. This module owns R, its increments, and the per-partition
tables sigma_k^2, alpha_k, <beta_k, beta_k'> derived from them.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from app.errors import DomainError, KernelIntegrityError

logger = logging.getLogger(__name__)

# Absolute slack (relative to the largest variance on the grid) tolerated
# before a negative interval variance counts as an integrity failure.
VARIANCE_TOLERANCE = 1e-10


def _brownian(s, t, T, params):
    return np.minimum(s, t)


def _fbm(s, t, T, params):
    two_h = 2.0 * params["H"]
    return 0.5 * (np.power(s, two_h) + np.power(t, two_h) - np.power(np.abs(t - s), two_h))


def _ou(s, t, T, params):
    lam = params["lam"]
    scale = params.get("sigma", 1.0) ** 2 / (2.0 * lam)
    return scale * np.exp(-lam * np.abs(t - s))


def _bridge(s, t, T, params):
    return np.minimum(s, t) - s * t / T


@dataclass(frozen=True)
class KernelEntry:
    cov: Callable
    required: Tuple[str, ...]
    description: str
    rho: Callable[[dict], float]
    rho_prime: Callable[[dict], float]
    indices: str = "rho=1 rho'=1"
    defaults: Dict[str, float] = field(default_factory=dict)


CATALOGUE: Dict[str, KernelEntry] = {
    "brownian": KernelEntry(
        cov=_brownian,
        required=(),
        description="Brownian motion, min(s,t)",
        rho=lambda p: 1.0,
        rho_prime=lambda p: 1.0,
    ),
    "fbm": KernelEntry(
        cov=_fbm,
        required=("H",),
        description="fractional Brownian motion, (s^2H + t^2H - |t-s|^2H)/2",
        rho=lambda p: max(1.0, 1.0 / (2.0 * p["H"])),
        rho_prime=lambda p: 1.0,
        indices="rho=max(1, 1/(2H)) rho'=1",
    ),
    "ou": KernelEntry(
        cov=_ou,
        required=("lam",),
        description="stationary Ornstein-Uhlenbeck, sigma^2/(2 lam) exp(-lam|t-s|)",
        rho=lambda p: 1.0,
        rho_prime=lambda p: 1.0,
        defaults={"sigma": 1.0},
    ),
    "bridge": KernelEntry(
        cov=_bridge,
        required=(),
        description="Brownian bridge, min(s,t) - st/T",
        rho=lambda p: 1.0,
        rho_prime=lambda p: 1.0,
    ),
}


@dataclass(frozen=True, eq=False)
class CovarianceKernel:
    """A named covariance R(s,t) on [0, T] with declared variation indices.

    ``rho`` and ``rho_prime`` are metadata. They drive the sum orders and the
    regime flag; nothing here computes them from R.
    """

    name: str
    params: Dict[str, float]
    T: float
    rho: float
    rho_prime: float

    def cov(self, s, t):
        """Vectorized R(s,t) without range checks."""
        return CATALOGUE[self.name].cov(s, t, self.T, self.params)

    @property
    def pinned(self) -> bool:
        """True when R(0,0) = 0, i.e. the process starts at 0."""
        return float(self.cov(0.0, 0.0)) == 0.0

    def describe(self) -> str:
        params = ", ".join(f"{k}={v:g}" for k, v in sorted(self.params.items()))
        return f"{self.name}({params}) T={self.T:g} rho={self.rho:g} rho'={self.rho_prime:g}"


def make_kernel(
    name: str,
    params: Optional[dict] = None,
    T: float = 1.0,
    rho: Optional[float] = None,
    rho_prime: Optional[float] = None,
) -> CovarianceKernel:
    """Build a catalogue kernel, filling in the documented rho/rho' when omitted."""
    entry = CATALOGUE.get(name)
    if entry is None:
        raise DomainError(f"Unknown kernel '{name}' (known: {', '.join(sorted(CATALOGUE))})")

    merged = dict(entry.defaults)
    merged.update({k: float(v) for k, v in (params or {}).items()})
    missing = [p for p in entry.required if p not in merged]
    if missing:
        raise DomainError(f"Kernel '{name}' requires parameter(s): {', '.join(missing)}")

    if not T > 0:
        raise DomainError(f"Horizon T must be positive, got {T}")
    if name == "fbm" and not 0.0 < merged["H"] < 1.0:
        raise DomainError(f"Hurst exponent must lie in (0,1), got {merged['H']}")
    if name == "ou":
        if merged["lam"] <= 0:
            raise DomainError(f"OU rate lam must be positive, got {merged['lam']}")
        if merged["sigma"] <= 0:
            raise DomainError(f"OU sigma must be positive, got {merged['sigma']}")

    documented_rho = entry.rho(merged)
    documented_rho_prime = entry.rho_prime(merged)
    rho = documented_rho if rho is None else float(rho)
    rho_prime = documented_rho_prime if rho_prime is None else float(rho_prime)
    if rho < 1 or rho_prime < 1:
        raise DomainError(f"Declared rho and rho' must be >= 1, got {rho}, {rho_prime}")
    if not math.isclose(rho, documented_rho) or not math.isclose(rho_prime, documented_rho_prime):
        logger.warning(
            "Kernel %s declares rho=%g rho'=%g; catalogue documents rho=%g rho'=%g",
            name, rho, rho_prime, documented_rho, documented_rho_prime,
        )

    return CovarianceKernel(name=name, params=merged, T=float(T), rho=rho, rho_prime=rho_prime)


@dataclass(frozen=True, eq=False)
class Partition:
    """Strictly increasing times 0 = t_0 < ... < t_n = T."""

    times: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise DomainError("A partition needs at least two points")
        if times[0] != 0.0:
            raise DomainError(f"A partition must start at 0, got {times[0]}")
        if np.any(np.diff(times) <= 0):
            raise DomainError("Partition times must be strictly increasing")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @classmethod
    def uniform(cls, n: int, T: float = 1.0) -> "Partition":
        if n < 1:
            raise DomainError(f"A partition needs n >= 1 intervals, got {n}")
        times = np.linspace(0.0, T, n + 1)
        times[-1] = T
        return cls(times)

    @property
    def n(self) -> int:
        return self.times.size - 1

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def mesh(self) -> float:
        return float(np.max(np.diff(self.times)))


@dataclass(frozen=True, eq=False)
class PartitionTables:
    """Inner products of the interval indicators beta_k = 1_[t_k, t_k+1]."""

    sigma_sq: np.ndarray
    alpha: np.ndarray
    cross: np.ndarray
    diag_incr: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(self.sigma_sq)

    @property
    def n(self) -> int:
        return self.sigma_sq.size


def _check_time(kernel: CovarianceKernel, *times: float):
    for t in times:
        if not 0.0 <= t <= kernel.T:
            raise DomainError(f"Time {t} outside [0, {kernel.T}]")


def _check_horizon(kernel: CovarianceKernel, p: Partition):
    if not math.isclose(p.T, kernel.T, rel_tol=1e-12, abs_tol=0.0):
        raise DomainError(f"Partition ends at {p.T} but kernel {kernel.name} has T={kernel.T}")


def eval_R(kernel: CovarianceKernel, s: float, t: float) -> float:
    _check_time(kernel, s, t)
    return float(kernel.cov(s, t))


def rect_increment(kernel: CovarianceKernel, u: float, v: float, s: float, t: float) -> float:
    """R(v,t) - R(u,t) - R(v,s) + R(u,s), the inner product <1_[u,v], 1_[s,t]>."""
    _check_time(kernel, u, v, s, t)
    if u > v or s > t:
        raise DomainError(f"Intervals must be ordered, got [{u},{v}] x [{s},{t}]")
    return float(kernel.cov(v, t) - kernel.cov(u, t) - kernel.cov(v, s) + kernel.cov(u, s))


def diagonal_increment(kernel: CovarianceKernel, s: float, t: float) -> float:
    _check_time(kernel, s, t)
    if s > t:
        raise DomainError(f"Interval must be ordered, got [{s},{t}]")
    return float(kernel.cov(t, t) - kernel.cov(s, s))


def past_inner(kernel: CovarianceKernel, s: float, t: float) -> float:
    """E[x_s (x_t - x_s)] = R(s,t) - R(s,s).

    Equals rect_increment(kernel, 0, s, s, t) whenever R(0, .) = 0 and stays
    the right quantity for the stationary OU kernel, whose start is random.
    """
    _check_time(kernel, s, t)
    if s > t:
        raise DomainError(f"Interval must be ordered, got [{s},{t}]")
    return float(kernel.cov(s, t) - kernel.cov(s, s))


def partition_tables(kernel: CovarianceKernel, p: Partition) -> PartitionTables:
    _check_horizon(kernel, p)
    t = p.times
    gram = kernel.cov(t[:, None], t[None, :])

    cross = gram[1:, 1:] - gram[:-1, 1:] - gram[1:, :-1] + gram[:-1, :-1]
    scale = max(1.0, float(np.max(np.abs(np.diag(gram)))))
    if not np.allclose(cross, cross.T, rtol=0.0, atol=1e-14 * scale):
        raise KernelIntegrityError(f"Kernel {kernel.name} produced a non-symmetric Gram matrix")
    cross = 0.5 * (cross + cross.T)

    sigma_sq = np.diag(cross).copy()
    worst = float(np.min(sigma_sq))
    if worst < -VARIANCE_TOLERANCE * scale:
        raise KernelIntegrityError(
            f"Kernel {kernel.name} gives negative interval variance {worst:.3e} on n={p.n}"
        )
    sigma_sq = np.clip(sigma_sq, 0.0, None)
    np.fill_diagonal(cross, sigma_sq)

    diag = np.diag(gram)
    diag_incr = np.diff(diag)
    alpha = np.diag(gram, 1) - diag[:-1]

    for arr in (sigma_sq, alpha, cross, diag_incr):
        arr.setflags(write=False)
    return PartitionTables(sigma_sq=sigma_sq, alpha=alpha, cross=cross, diag_incr=diag_incr)
