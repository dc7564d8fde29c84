"""Monte-Carlo convergence harness for the conversion formula.

For each mesh level 2^e the harness draws fresh paths, evaluates every sum
and residual per path, and reduces them in path order to RMS statistics.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from app.config import ExperimentConfig
from app.errors import CapabilityError, DomainError, KernelIntegrityError
from app.integrals import (
    SumSpec,
    auto_orders,  # noqa: F401  public next to regime_flag
    build_sum_spec,
    compensated_sum,
    skorohod_sum,
    stratonovich_oracle,
    young_sum,
)
from app.kernel import Partition, PartitionTables
from app.sampler import SimConfig, sample_array
from app.storage import read_rows, write_rows

logger = logging.getLogger(__name__)

REPORT_COLUMNS = (
    "n", "mesh", "rms_conversion", "stderr_conversion", "rms_strat_vs_oracle", "mean_skorohod", "seconds",
)
CHUNK_PATHS = 250


def regime_flag(rho: float, rho_prime: float) -> bool:
    """True when the conversion formula is claimed: rho < 3/2 or 1/(2 rho) + 1/rho' > 1."""
    return rho < 1.5 or 1.0 / (2.0 * rho) + 1.0 / rho_prime > 1.0


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    mesh: float
    rms_conversion: float
    stderr_conversion: float
    rms_strat_vs_oracle: float
    mean_skorohod: float
    seconds: float
    regime: bool = True

    def __post_init__(self):
        if self.stderr_conversion < 0:
            raise DomainError(f"stderr must be nonnegative, got {self.stderr_conversion}")

    def as_row(self) -> tuple:
        return tuple(getattr(self, c) for c in REPORT_COLUMNS)


def path_sums(spec: SumSpec, values: np.ndarray, tables: Sequence[PartitionTables]) -> Dict[str, np.ndarray]:
    """Every per-path quantity the harness and the integrate command report."""
    compensated = np.atleast_1d(compensated_sum(spec, values))
    skorohod = np.atleast_1d(skorohod_sum(spec, values, tables))
    young = np.atleast_1d(young_sum(spec, values, tables))
    oracle = np.atleast_1d(stratonovich_oracle(spec, values))
    return {
        "compensated": compensated,
        "skorohod": skorohod,
        "young": young,
        "oracle": oracle,
        "conversion_residual": oracle - skorohod - 0.5 * young,
    }


def rms_with_stderr(residuals: np.ndarray):
    """RMS of residuals and its delta-method standard error stderr(mean r^2) / (2 RMS)."""
    sq = np.asarray(residuals, dtype=float) ** 2
    rms = math.sqrt(float(np.mean(sq)))
    if sq.size < 2 or rms == 0.0:
        return rms, 0.0
    return rms, float(np.std(sq, ddof=1)) / math.sqrt(sq.size) / (2.0 * rms)


class ConvergencePipeline:
    """Runs the mesh levels of one experiment config in order."""

    def __init__(self, config: ExperimentConfig):
        self._config = config
        self._kernels = config.build_kernels()
        self._f = config.build_function()
        self._paths_done = 0
        self._levels_done = 0

        spec = build_sum_spec(self._kernels, Partition.uniform(1, self._kernels[0].T), self._f,
                               epsilon=config.epsilon, skorohod_order=config.orders.skorohod,
                               strat_order=config.orders.strat, quadrature=config.quadrature)
        self.rho = spec.rho
        self.rho_prime = spec.rho_prime
        self.skorohod_order = spec.skorohod_order
        self.strat_order = spec.strat_order
        self.regime = regime_flag(self.rho, self.rho_prime)
        for kernel in self._kernels:
            logger.info("Kernel %s", kernel.describe())
        logger.info(
            "rho=%g rho'=%g orders skorohod=%d strat=%d regime=%s",
            self.rho, self.rho_prime, self.skorohod_order, self.strat_order, str(self.regime).lower(),
        )
        if not self.regime:
            logger.warning("Kernel indices fall outside the conversion regime; no convergence is claimed")

    @property
    def paths_done(self) -> int:
        return self._paths_done

    @property
    def levels_done(self) -> int:
        return self._levels_done

    def run(self) -> List[ConvergenceRow]:
        rows = []
        for e in self._config.mesh_exponents:
            rows.append(self._run_level(e))
        logger.info("Finished %d mesh levels, %d paths in total", self._levels_done, self._paths_done)
        return rows

    def _run_level(self, exponent: int) -> ConvergenceRow:
        n = 2 ** exponent
        try:
            return self._run_level_inner(exponent)
        except (DomainError, CapabilityError, KernelIntegrityError) as e:
            logger.exception("Mesh level n=%d failed", n)
            raise type(e)(f"mesh n={n}: {e}") from e

    def _run_level_inner(self, exponent: int) -> ConvergenceRow:
        cfg = self._config
        n = 2 ** exponent
        start = time.perf_counter()
        partition = Partition.uniform(n, self._kernels[0].T)
        spec = build_sum_spec(self._kernels, partition, self._f, epsilon=cfg.epsilon,
                              skorohod_order=cfg.orders.skorohod, strat_order=cfg.orders.strat,
                              quadrature=cfg.quadrature)
        tables = spec.tables()
        sim = SimConfig(n_paths=cfg.n_paths, master_seed=cfg.master_seed, jitter=cfg.jitter,
                        workers=cfg.workers, level=exponent)
        values = sample_array(self._kernels, partition, sim)
        logger.info("Mesh n=%d: sampled %d paths", n, cfg.n_paths)

        chunks = [values[a:a + CHUNK_PATHS] for a in range(0, cfg.n_paths, CHUNK_PATHS)]
        if cfg.workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                results = list(pool.map(lambda v: path_sums(spec, v, tables), chunks))
        else:
            results = [path_sums(spec, v, tables) for v in chunks]
        # Ordered reduction: concatenation follows path order
        sums = {key: np.concatenate([r[key] for r in results]) for key in results[0]}

        rms, stderr = rms_with_stderr(sums["conversion_residual"])
        strat_err = math.sqrt(float(np.mean((sums["compensated"] - sums["oracle"]) ** 2)))
        elapsed = time.perf_counter() - start
        row = ConvergenceRow(
            n=n,
            mesh=partition.mesh,
            rms_conversion=rms,
            stderr_conversion=stderr,
            rms_strat_vs_oracle=strat_err,
            mean_skorohod=float(np.mean(sums["skorohod"])),
            seconds=elapsed if cfg.record_timing else 0.0,
            regime=self.regime,
        )

        self._paths_done += cfg.n_paths
        self._levels_done += 1
        logger.info(
            "Mesh n=%d: rms_conversion=%.4g (+/- %.2g), rms_strat_vs_oracle=%.4g, mean_skorohod=%.3g",
            n, rms, stderr, strat_err, row.mean_skorohod,
        )
        logger.debug("Mesh n=%d took %.2fs", n, elapsed)
        return row


def convergence_slope(rows: Sequence[ConvergenceRow]) -> float:
    """Least-squares slope of log rms_conversion against log n."""
    if len(rows) < 2:
        raise DomainError("A convergence slope needs at least two mesh levels")
    n = np.array([r.n for r in rows], dtype=float)
    rms = np.array([r.rms_conversion for r in rows])
    if np.any(rms <= 0):
        raise DomainError("A convergence slope needs positive RMS values")
    return float(np.polyfit(np.log(n), np.log(rms), 1)[0])


def run_convergence(cfg: ExperimentConfig) -> List[ConvergenceRow]:
    return ConvergencePipeline(cfg).run()


def emit_report(rows: Sequence[ConvergenceRow], path: str) -> str:
    if not rows:
        raise DomainError("Cannot write a convergence report without rows")
    write_rows(path, REPORT_COLUMNS, (r.as_row() for r in rows))
    return path


def read_report(path: str, regime: bool = True) -> List[ConvergenceRow]:
    header, rows = read_rows(path)
    if tuple(header) != REPORT_COLUMNS:
        raise ValueError(f"{path}: unexpected report header {','.join(header)}")
    return [
        ConvergenceRow(int(r[0]), *(float(v) for v in r[1:]), regime=regime)
        for r in rows
    ]
