#!/usr/bin/env python3
"""Run the bundled convergence configs and check their expected behaviour.

Writes one CSV report per config into reports/ and prints PASS/FAIL per
check. Takes several minutes (2000 paths, fBm H = 0.35 up to n = 4096).

The RMS conversion residual of a rough fBm decays like n^(1/2 - (m+1)H),
where m is the Skorohod order: slope -0.2 for H = 0.35 (m = 1) and -0.1 for
H = 0.2 (m = 2). The fBm checks fit that slope on the log-log report.

Usage:
    python scripts/run_acceptance.py [--out reports]
"""
import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from app.config import load_config  # noqa: E402
from app.experiments import ConvergencePipeline, convergence_slope, emit_report  # noqa: E402

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")
SLOPE_TOLERANCE = 0.07


def _non_monotone_steps(values):
    return sum(1 for a, b in zip(values, values[1:]) if b > a)


def check_brownian(rows):
    rms = [r.rms_conversion for r in rows]
    return rms[-1] < 0.05, f"final rms {rms[-1]:.4g} < 0.05"


def check_fbm035(rows):
    rms = [r.rms_conversion for r in rows]
    slope = convergence_slope(rows)
    ok = (
        rms[-1] <= 0.5 * rms[0]
        and _non_monotone_steps(rms) <= 1
        and abs(slope + 0.2) <= SLOPE_TOLERANCE
    )
    return ok, (
        f"rms {rms[0]:.4g} -> {rms[-1]:.4g}, {_non_monotone_steps(rms)} non-monotone step(s), "
        f"slope {slope:.3f} (expected -0.2)"
    )


def check_fbm020_auto(rows):
    slope = convergence_slope(rows)
    ok = slope < 0 and abs(slope + 0.1) <= SLOPE_TOLERANCE
    return ok, f"slope {slope:.3f} (expected -0.1)"


def check_fbm020_order1(rows):
    rms = [r.rms_conversion for r in rows]
    return rms[-1] >= 0.8 * rms[0], f"rms {rms[0]:.4g} -> {rms[-1]:.4g} (must not drop by 20%)"


CHECKS = [
    ("brownian_quadratic.json", check_brownian),
    ("fbm035_sinusoid.json", check_fbm035),
    ("fbm020_auto.json", check_fbm020_auto),
    ("fbm020_order1.json", check_fbm020_order1),
]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="reports")
    args = parser.parse_args()

    failures = 0
    for name, check in CHECKS:
        config = load_config(os.path.join(CONFIG_DIR, name))
        pipeline = ConvergencePipeline(config)
        rows = pipeline.run()
        report = emit_report(rows, os.path.join(args.out, name.rsplit(".", 1)[0] + ".csv"))

        ok, detail = check(rows)
        failures += not ok
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail} (regime={str(pipeline.regime).lower()}, {report})")

    print(f"{len(CHECKS) - failures}/{len(CHECKS)} acceptance checks passed")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
