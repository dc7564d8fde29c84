"""Exact Gaussian path simulation on a grid.

Each component is drawn as L z with L the Cholesky factor of its Gram matrix
and z standard normal. Random streams are keyed per (level, path, component)
so the output does not depend on how paths are split across workers.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
import scipy.linalg

from app.errors import DomainError, KernelIntegrityError, NonPSDError
from app.kernel import CovarianceKernel, Partition

logger = logging.getLogger(__name__)

JITTER_CAP = 1e-8
BLOCK_PATHS = 256


@dataclass(frozen=True)
class SimConfig:
    n_paths: int
    master_seed: int
    jitter: float = 1e-12
    workers: int = 1
    # Stream level; the convergence harness uses the mesh exponent so every
    # level draws fresh paths.
    level: int = 0

    def __post_init__(self):
        if self.n_paths < 1:
            raise DomainError(f"n_paths must be >= 1, got {self.n_paths}")
        if self.jitter < 0:
            raise DomainError(f"jitter must be nonnegative, got {self.jitter}")
        if self.workers < 1:
            raise DomainError(f"workers must be >= 1, got {self.workers}")


@dataclass(frozen=True, eq=False)
class SamplePath:
    """One draw of a d-component path; values[l, k] = x_l(t_k)."""

    grid: Partition
    values: np.ndarray
    component_kernels: List[CovarianceKernel]

    @property
    def d(self) -> int:
        return self.values.shape[0]


def gram_matrix(kernel: CovarianceKernel, p: Partition) -> np.ndarray:
    """(n+1) x (n+1) matrix of R(t_i, t_j)."""
    if not math.isclose(p.T, kernel.T, rel_tol=1e-12):
        raise DomainError(f"Partition ends at {p.T} but kernel {kernel.name} has T={kernel.T}")
    t = p.times
    m = kernel.cov(t[:, None], t[None, :])
    return 0.5 * (m + m.T)


def cholesky_psd(m: np.ndarray, jitter: float = 1e-12) -> np.ndarray:
    """Lower-triangular L with L L^T = m + eps * trace(m)/dim * I.

    Rows and columns of m that are identically zero (a pinned start, a bridge
    end) are left out of the factorization and come back as zero rows of L.
    eps starts at ``jitter`` and grows tenfold per failed attempt up to
    JITTER_CAP.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DomainError(f"Expected a square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-12 * scale):
        raise KernelIntegrityError("Matrix passed to cholesky_psd is not symmetric")

    dim = m.shape[0]
    out = np.zeros_like(m)
    active = np.max(np.abs(m), axis=1) > 1e-14 * scale
    if not np.any(active):
        return out

    sub = m[np.ix_(active, active)]
    k = sub.shape[0]
    mean_diag = float(np.trace(sub)) / k
    eps = jitter
    while True:
        try:
            factor = scipy.linalg.cholesky(sub + eps * mean_diag * np.eye(k), lower=True)
            break
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            eps = eps * 10.0 if eps > 0 else 1e-15
            if eps > JITTER_CAP:
                raise NonPSDError(
                    f"Cholesky failed for a {dim}x{dim} Gram matrix even with jitter {JITTER_CAP:g}"
                )
            logger.warning("Cholesky failed, escalating jitter to %.1e", eps)

    out[np.ix_(active, active)] = factor
    return out


def stream_rng(master_seed: int, level: int, stream: int) -> np.random.Generator:
    """Generator for stream index ``path * d + component`` at a level."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(level, stream)))


def _check_kernels(kernels: Sequence[CovarianceKernel], p: Partition):
    if not kernels:
        raise DomainError("At least one component kernel is required")
    for kernel in kernels:
        if not math.isclose(kernel.T, p.T, rel_tol=1e-12):
            raise DomainError(f"Kernel {kernel.name} has T={kernel.T} but partition ends at {p.T}")


def sample_array(kernels: Sequence[CovarianceKernel], p: Partition, cfg: SimConfig) -> np.ndarray:
    """Draw cfg.n_paths paths as an array of shape (n_paths, d, n+1)."""
    _check_kernels(kernels, p)
    d = len(kernels)
    factors = []
    cache = {}
    for kernel in kernels:
        if id(kernel) not in cache:
            cache[id(kernel)] = cholesky_psd(gram_matrix(kernel, p), cfg.jitter)
        factors.append(cache[id(kernel)])

    size = p.n + 1
    out = np.empty((cfg.n_paths, d, size))

    def fill(start: int, stop: int):
        z = np.empty((stop - start, size))
        for comp in range(d):
            for row, path in enumerate(range(start, stop)):
                z[row] = stream_rng(cfg.master_seed, cfg.level, path * d + comp).standard_normal(size)
            out[start:stop, comp, :] = z @ factors[comp].T

    # Fixed blocks keep the output independent of the worker count
    blocks = [(a, min(a + BLOCK_PATHS, cfg.n_paths)) for a in range(0, cfg.n_paths, BLOCK_PATHS)]
    if cfg.workers == 1 or len(blocks) == 1:
        for a, b in blocks:
            fill(a, b)
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(fill, a, b) for a, b in blocks]
            for future in futures:
                future.result()

    logger.debug("Sampled %d paths, d=%d, n=%d", cfg.n_paths, d, p.n)
    return out


def sample_paths(
    kernels: Sequence[CovarianceKernel], p: Partition, cfg: SimConfig
) -> List[SamplePath]:
    values = sample_array(kernels, p, cfg)
    return [SamplePath(grid=p, values=v, component_kernels=list(kernels)) for v in values]
