"""Monte-Carlo convergence harness and its CSV report."""

import logging
import os

import numpy as np
import pytest

from app.config import parse_config
from app.errors import CapabilityError, DomainError
from app.experiments import (
    REPORT_COLUMNS,
    ConvergencePipeline,
    ConvergenceRow,
    convergence_slope,
    emit_report,
    read_report,
    regime_flag,
    rms_with_stderr,
    run_convergence,
)

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")


def _config(**overrides):
    raw = {
        "kernel": {"name": "brownian"},
        "f": {"family": "polynomial", "coefficients": [0.0, 0.0, 0.5]},
        "mesh_exponents": [3, 4],
        "n_paths": 300,
        "master_seed": 5,
        "orders": "auto",
        "record_timing": False,
    }
    raw.update(overrides)
    return parse_config(raw)


class TestRegime:
    @pytest.mark.parametrize("rho, rho_prime, expected", [
        (1.0, 1.0, True),
        (2.5, 1.0, True),
        (2.5, 2.0, False),
        (1.49, 5.0, True),
    ])
    def test_flag(self, rho, rho_prime, expected):
        assert regime_flag(rho, rho_prime) is expected

    def test_pipeline_flag_and_warning(self, caplog):
        pipeline = ConvergencePipeline(_config(kernel={"name": "fbm", "params": {"H": 0.2}, "rho_prime": 2.0}))
        assert not pipeline.regime
        assert "outside the conversion regime" in caplog.text


class TestStatistics:
    def test_rms(self):
        rms, stderr = rms_with_stderr(np.array([3.0, -4.0, 0.0, 5.0]))
        assert rms == pytest.approx(np.sqrt(50.0 / 4))
        assert stderr > 0

    def test_all_zero(self):
        assert rms_with_stderr(np.zeros(5)) == (0.0, 0.0)

    def test_negative_stderr_rejected(self):
        with pytest.raises(DomainError):
            ConvergenceRow(8, 0.125, 0.1, -1.0, 0.0, 0.0, 0.0)

    def test_slope_of_power_law(self):
        """RMS proportional to n^-1/2 fits a slope of -1/2."""
        rows = [ConvergenceRow(n, 1.0 / n, 3.0 / np.sqrt(n), 0.0, 0.0, 0.0, 0.0) for n in (32, 64, 128, 256)]
        assert convergence_slope(rows) == pytest.approx(-0.5)

    def test_slope_needs_two_levels(self):
        with pytest.raises(DomainError):
            convergence_slope([ConvergenceRow(32, 1.0 / 32, 0.1, 0.0, 0.0, 0.0, 0.0)])

    def test_slope_needs_positive_rms(self):
        rows = [ConvergenceRow(n, 1.0 / n, 0.0, 0.0, 0.0, 0.0, 0.0) for n in (32, 64)]
        with pytest.raises(DomainError):
            convergence_slope(rows)


class TestPipeline:
    def test_rows(self):
        rows = run_convergence(_config())
        assert [r.n for r in rows] == [8, 16]
        assert rows[0].mesh == pytest.approx(0.125)
        assert all(r.stderr_conversion >= 0 for r in rows)
        assert all(r.seconds == 0.0 for r in rows)
        # x^2/2 has an exact Taylor expansion, so the compensated sum is the oracle
        assert all(r.rms_strat_vs_oracle < 1e-12 for r in rows)

    def test_counters(self, caplog):
        with caplog.at_level(logging.INFO):
            pipeline = ConvergencePipeline(_config())
            pipeline.run()
        assert "Finished 2 mesh levels, 600 paths in total" in caplog.text
        assert "Kernel brownian() T=1" in caplog.text
        assert pipeline.paths_done == 600
        assert pipeline.levels_done == 2

    def test_workers_do_not_change_results(self):
        serial = run_convergence(_config(n_paths=600))
        threaded = run_convergence(_config(n_paths=600, workers=3))
        for a, b in zip(serial, threaded):
            assert a.rms_conversion == pytest.approx(b.rms_conversion, rel=1e-12)
            assert a.mean_skorohod == pytest.approx(b.mean_skorohod, rel=1e-12, abs=1e-15)

    def test_stderr_shrinks_with_paths(self):
        few = run_convergence(_config(mesh_exponents=[6], n_paths=1000))[0]
        many = run_convergence(_config(mesh_exponents=[6], n_paths=4000))[0]
        ratio = few.stderr_conversion / many.stderr_conversion
        assert 2.0 / 1.3 <= ratio <= 2.0 * 1.3

    def test_level_errors_name_the_mesh(self):
        config = _config(f={"family": "sinusoid", "omega": [2.0], "max_order": 1})
        with pytest.raises(CapabilityError, match="mesh n=8"):
            run_convergence(config)

    def test_two_component_yaml(self):
        from app.config import load_config

        config = load_config(os.path.join(CONFIG_DIR, "ou_2d.yml"))
        config.mesh_exponents = [3]
        config.n_paths = 50
        rows = ConvergencePipeline(config).run()
        assert len(rows) == 1
        assert np.isfinite(rows[0].rms_conversion)


class TestReport:
    def test_round_trip(self, tmp_path):
        rows = run_convergence(_config())
        path = emit_report(rows, str(tmp_path / "out" / "report.csv"))
        lines = open(path).read().splitlines()
        assert lines[0] == ",".join(REPORT_COLUMNS)
        assert len(lines) == 3
        back = read_report(path)
        for a, b in zip(rows, back):
            assert a.as_row() == b.as_row()

    def test_single_row(self, tmp_path):
        path = emit_report([ConvergenceRow(8, 0.125, 0.1, 0.01, 0.0, 0.0, 0.0)], str(tmp_path / "r.csv"))
        assert len(open(path).read().splitlines()) == 2

    def test_deterministic_bytes(self, tmp_path):
        a = emit_report(run_convergence(_config()), str(tmp_path / "a.csv"))
        b = emit_report(run_convergence(_config()), str(tmp_path / "b.csv"))
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_empty(self, tmp_path):
        with pytest.raises(DomainError):
            emit_report([], str(tmp_path / "r.csv"))


@pytest.mark.slow
class TestAcceptance:
    """Full mesh sweeps with 2000 paths.

    For rough fBm the RMS conversion residual decays like n^(1/2 - (m+1)H),
    m being the Skorohod order: slope -0.2 for H = 0.35 and -0.1 for H = 0.2.
    """

    SLOPE_TOLERANCE = 0.07

    def _rows(self, name):
        from app.config import load_config

        return run_convergence(load_config(os.path.join(CONFIG_DIR, name)))

    def test_brownian_quadratic(self):
        assert self._rows("brownian_quadratic.json")[-1].rms_conversion < 0.05

    def test_fbm035_sinusoid_converges(self):
        rows = self._rows("fbm035_sinusoid.json")
        rms = [r.rms_conversion for r in rows]
        assert rows[-1].n == 4096
        assert rms[-1] <= 0.5 * rms[0]
        assert sum(1 for a, b in zip(rms, rms[1:]) if b > a) <= 1
        assert convergence_slope(rows) == pytest.approx(-0.2, abs=self.SLOPE_TOLERANCE)

    def test_fbm020_second_order_decays(self):
        slope = convergence_slope(self._rows("fbm020_auto.json"))
        assert slope < 0
        assert slope == pytest.approx(-0.1, abs=self.SLOPE_TOLERANCE)

    def test_fbm020_first_order_stalls(self):
        rms = [r.rms_conversion for r in self._rows("fbm020_order1.json")]
        assert rms[-1] >= 0.8 * rms[0]
