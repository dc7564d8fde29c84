import os
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Union

import yaml

from app.integrals import QUADRATURES
from app.kernel import CovarianceKernel, make_kernel
from app.testfn import TestFunction, make_test_function

logger = logging.getLogger(__name__)


@dataclass
class KernelConfig:
    name: str = "brownian"
    params: dict = field(default_factory=dict)
    T: float = 1.0
    rho: Optional[float] = None        # None = catalogue value
    rho_prime: Optional[float] = None

    def build(self) -> CovarianceKernel:
        return make_kernel(self.name, self.params, self.T, self.rho, self.rho_prime)


@dataclass
class OrdersConfig:
    skorohod: Optional[int] = None     # None = [rho + epsilon]
    strat: Optional[int] = None        # None = [2 (rho + epsilon)]

    @property
    def auto(self) -> bool:
        return self.skorohod is None and self.strat is None


@dataclass
class ExperimentConfig:
    kernels: List[KernelConfig]
    f: dict
    mesh_exponents: List[int]
    n_paths: int
    master_seed: int
    orders: OrdersConfig = field(default_factory=OrdersConfig)
    epsilon: float = 0.0
    quadrature: str = "trapezoid"
    jitter: float = 1e-12
    workers: int = 1                   # path-level threads per mesh level
    record_timing: bool = True         # False = seconds column written as 0

    def build_kernels(self) -> List[CovarianceKernel]:
        return [k.build() for k in self.kernels]

    def build_function(self) -> TestFunction:
        return make_test_function(self.f)


def _build_dataclass(cls, data: dict):
    """Build a dataclass from a dict, ignoring unknown keys."""
    if data is None:
        return cls()
    valid_fields = {f.name for f in cls.__dataclass_fields__.values()}
    filtered = {k: v for k, v in data.items() if k in valid_fields}
    return cls(**filtered)


def _parse_orders(raw: Union[str, dict, None]) -> OrdersConfig:
    if raw == "auto":
        return OrdersConfig()
    if not isinstance(raw, dict):
        raise ValueError("orders must be \"auto\" or a map with 'skorohod' and/or 'strat'")
    orders = _build_dataclass(OrdersConfig, raw)
    for name in ("skorohod", "strat"):
        value = getattr(orders, name)
        if value is not None and (not isinstance(value, int) or value < 1):
            raise ValueError(f"orders.{name} must be a positive integer, got {value!r}")
    return orders


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a raw config map and build an ExperimentConfig."""
    if not isinstance(raw, dict):
        raise ValueError("Config must be a map at the top level")

    missing = [k for k in ("f", "mesh_exponents", "n_paths", "master_seed", "orders") if k not in raw]
    if "kernel" not in raw and "kernels" not in raw:
        missing.insert(0, "kernel")
    if missing:
        raise ValueError(f"Missing required config field(s): {', '.join(missing)}")

    f_raw = raw["f"]
    if not isinstance(f_raw, dict):
        raise ValueError("f must be a map, e.g. {family: sinusoid, omega: [2.0], d: 1}")

    if "kernels" in raw:
        kernels_raw = raw["kernels"]
        if not isinstance(kernels_raw, list) or not kernels_raw:
            raise ValueError("kernels must be a non-empty list")
    else:
        # One kernel spec shared by every component of f
        d = int(f_raw.get("d", (f_raw.get("params") or {}).get("d", 1)))
        kernels_raw = [raw["kernel"]] * d
    for k in kernels_raw:
        if not isinstance(k, dict) or not k.get("name"):
            raise ValueError("kernel.name is required")
    kernels = [_build_dataclass(KernelConfig, k) for k in kernels_raw]

    exponents = raw["mesh_exponents"]
    if not isinstance(exponents, list) or not exponents or not all(
        isinstance(e, int) and 0 <= e <= 12 for e in exponents
    ):
        raise ValueError("mesh_exponents must be a non-empty list of integers in [0, 12]")

    n_paths = raw["n_paths"]
    if not isinstance(n_paths, int) or n_paths < 1:
        raise ValueError(f"n_paths must be a positive integer, got {n_paths!r}")
    seed = raw["master_seed"]
    if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ValueError(f"master_seed must be a 64-bit unsigned integer, got {seed!r}")

    quadrature = raw.get("quadrature", "trapezoid")
    if quadrature not in QUADRATURES:
        raise ValueError(f"quadrature must be one of {', '.join(QUADRATURES)}, got {quadrature!r}")
    epsilon = float(raw.get("epsilon", 0.0))
    if epsilon < 0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    workers = int(raw.get("workers", 1))
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")

    return ExperimentConfig(
        kernels=kernels,
        f=dict(f_raw),
        mesh_exponents=list(exponents),
        n_paths=n_paths,
        master_seed=seed,
        orders=_parse_orders(raw["orders"]),
        epsilon=epsilon,
        quadrature=quadrature,
        jitter=float(raw.get("jitter", 1e-12)),
        workers=workers,
        record_timing=bool(raw.get("record_timing", True)),
    )


def load_config(path: str) -> ExperimentConfig:
    if not os.path.exists(path):
        raise FileNotFoundError(f"Config file not found: {path}")

    # YAML is a superset of JSON, so .json configs load unchanged
    with open(path, encoding="utf-8") as f:
        try:
            raw = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ValueError(f"Cannot parse {path}: {e}") from e

    config = parse_config(raw)

    logger.info("Configuration loaded from %s", path)
    logger.info("  Kernels: %s", ", ".join(k.name for k in config.kernels))
    logger.info("  Test function: %s", config.f.get("family", "?"))
    logger.info("  Meshes: %s", ", ".join(f"2^{e}" for e in config.mesh_exponents))
    logger.info("  Paths per mesh: %d (seed %d)", config.n_paths, config.master_seed)
    logger.info(
        "  Orders: %s",
        "auto" if config.orders.auto else f"skorohod={config.orders.skorohod} strat={config.orders.strat}",
    )

    return config
