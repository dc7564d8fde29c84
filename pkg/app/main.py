import argparse
import logging
import sys
from typing import List, Optional

import numpy as np

from app.config import load_config
from app.errors import KernelIntegrityError
from app.experiments import ConvergencePipeline, emit_report, path_sums
from app.integrals import build_sum_spec
from app.kernel import CATALOGUE, Partition, make_kernel
from app.sampler import SimConfig, sample_array
from app.storage import VARIATION_COLUMNS, read_paths, write_paths, write_rows, write_sums
from app.variation import rho_variation_2d, superadditivity_check

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s [%(name)s] %(levelname)s: %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
logger = logging.getLogger("skorohod")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def cmd_kernels(args) -> int:
    for name, entry in sorted(CATALOGUE.items()):
        params = ", ".join(entry.required) or "-"
        print(f"{name:<10} params: {params:<6} {entry.indices:<28} {entry.description}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    exponent = args.exponent if args.exponent is not None else config.mesh_exponents[0]
    kernels = config.build_kernels()
    partition = Partition.uniform(2 ** exponent, kernels[0].T)
    sim = SimConfig(n_paths=config.n_paths, master_seed=config.master_seed, jitter=config.jitter,
                    workers=config.workers, level=exponent)
    values = sample_array(kernels, partition, sim)
    write_paths(args.out, partition.times, values)
    logger.info("Simulated %d paths on n=%d into %s", config.n_paths, partition.n, args.out)
    return EXIT_OK


def cmd_integrate(args) -> int:
    config = load_config(args.config)
    kernels = config.build_kernels()
    times, values = read_paths(args.paths)
    partition = Partition(times)
    spec = build_sum_spec(kernels, partition, config.build_function(), epsilon=config.epsilon,
                          skorohod_order=config.orders.skorohod, strat_order=config.orders.strat,
                          quadrature=config.quadrature)
    sums = path_sums(spec, values, spec.tables())
    write_sums(args.out, sums)
    logger.info(
        "Integrated %d paths: mean conversion residual %.4g",
        values.shape[0], float(np.mean(sums["conversion_residual"])),
    )
    return EXIT_OK


def cmd_converge(args) -> int:
    config = load_config(args.config)
    pipeline = ConvergencePipeline(config)
    rows = pipeline.run()
    emit_report(rows, args.out)
    print(f"regime={str(pipeline.regime).lower()}")
    return EXIT_OK


def _parse_params(pairs: Optional[List[str]]) -> dict:
    params = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ValueError(f"--param expects key=value, got {pair!r}")
        try:
            params[key.strip()] = float(value)
        except ValueError:
            raise ValueError(f"--param {key} needs a number, got {value!r}")
    return params


def cmd_variation(args) -> int:
    kernel = make_kernel(args.kernel, _parse_params(args.param), T=args.T)
    grid = Partition.uniform(args.grid_n, kernel.T)
    method = "exact" if args.exact else "heuristic" if args.heuristic else "auto"
    report = rho_variation_2d(kernel, grid, args.rho, exact_limit=args.exact_limit, method=method)
    row = (
        report.method, args.rho, args.grid_n, report.value,
        " ".join(str(i) for i in report.partition),
        " ".join(str(i) for i in report.partition_t or ()),
    )
    write_rows(args.out, VARIATION_COLUMNS, [row])
    print(f"{report.method} {args.rho:g}-variation of {kernel.name} on n={args.grid_n}: {report.value:.17g}")

    if args.check_superadditivity:
        check = superadditivity_check(kernel, grid, args.rho)
        print(f"superadditivity checked={check.checked} violations={len(check.violations)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skorohod",
        description="Riemann-Skorohod sums and conversion-formula experiments for Gaussian processes",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    kernels = sub.add_parser("kernels", help="kernel catalogue")
    kernels.add_argument("action", choices=["list"])
    kernels.set_defaults(func=cmd_kernels)

    simulate = sub.add_parser("simulate", help="sample paths to CSV")
    simulate.add_argument("--config", required=True)
    simulate.add_argument("--out", required=True)
    simulate.add_argument("--exponent", type=int, default=None,
                          help="grid n = 2^exponent (default: first mesh exponent)")
    simulate.set_defaults(func=cmd_simulate)

    integrate = sub.add_parser("integrate", help="per-path sums for sampled paths")
    integrate.add_argument("--config", required=True)
    integrate.add_argument("--paths", required=True)
    integrate.add_argument("--out", required=True)
    integrate.set_defaults(func=cmd_integrate)

    converge = sub.add_parser("converge", help="mesh-refinement convergence report")
    converge.add_argument("--config", required=True)
    converge.add_argument("--out", required=True)
    converge.set_defaults(func=cmd_converge)

    variation = sub.add_parser("variation", help="2D rho-variation of a kernel on a grid")
    variation.add_argument("--kernel", required=True, choices=sorted(CATALOGUE))
    variation.add_argument("--param", action="append", metavar="KEY=VALUE")
    variation.add_argument("--T", type=float, default=1.0)
    variation.add_argument("--grid-n", type=int, required=True)
    variation.add_argument("--rho", type=float, required=True)
    variation.add_argument("--exact-limit", type=int, default=12)
    mode = variation.add_mutually_exclusive_group()
    mode.add_argument("--exact", action="store_true")
    mode.add_argument("--heuristic", action="store_true")
    variation.add_argument("--check-superadditivity", action="store_true")
    variation.add_argument("--out", required=True)
    variation.set_defaults(func=cmd_variation)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        return args.func(args)
    except KernelIntegrityError as e:
        logger.error("Numerical integrity error: %s", e)
        return EXIT_NUMERICAL
    except (FileNotFoundError, ValueError) as e:
        logger.error("Configuration error: %s", e)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
