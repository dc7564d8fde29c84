"""Command-line entry point: subcommands and exit codes."""

import json

import pytest

from app import main as cli
from app.errors import NonPSDError
from app.storage import SUM_COLUMNS, VARIATION_COLUMNS, read_paths, read_rows


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({
        "kernel": {"name": "fbm", "params": {"H": 0.35}},
        "f": {"family": "sinusoid", "omega": [2.0], "nu": 1.0, "d": 1},
        "mesh_exponents": [3, 4],
        "n_paths": 20,
        "master_seed": 4,
        "orders": "auto",
        "record_timing": False,
    }))
    return str(path)


class TestCommands:
    def test_kernels_list(self, capsys):
        assert cli.main(["kernels", "list"]) == cli.EXIT_OK
        out = capsys.readouterr().out
        for name in ("brownian", "fbm", "ou", "bridge"):
            assert name in out

    def test_converge(self, config_path, tmp_path, capsys):
        out = str(tmp_path / "report.csv")
        assert cli.main(["converge", "--config", config_path, "--out", out]) == cli.EXIT_OK
        assert "regime=true" in capsys.readouterr().out
        header, rows = read_rows(out)
        assert len(rows) == 2

    def test_simulate_then_integrate(self, config_path, tmp_path):
        paths = str(tmp_path / "paths.csv")
        sums = str(tmp_path / "sums.csv")
        assert cli.main(["simulate", "--config", config_path, "--out", paths, "--exponent", "4"]) == cli.EXIT_OK
        times, values = read_paths(paths)
        assert values.shape == (20, 1, 17)

        assert cli.main(["integrate", "--config", config_path, "--paths", paths, "--out", sums]) == cli.EXIT_OK
        header, rows = read_rows(sums)
        assert tuple(header) == SUM_COLUMNS
        assert len(rows) == 20

    def test_variation(self, tmp_path, capsys):
        out = str(tmp_path / "var.csv")
        code = cli.main([
            "variation", "--kernel", "brownian", "--grid-n", "4", "--rho", "1",
            "--exact", "--check-superadditivity", "--out", out,
        ])
        assert code == cli.EXIT_OK
        printed = capsys.readouterr().out
        assert "violations=0" in printed
        header, rows = read_rows(out)
        assert tuple(header) == VARIATION_COLUMNS
        assert rows[0][0] == "exact"
        assert float(rows[0][3]) == pytest.approx(1.0)

    def test_variation_with_params(self, tmp_path):
        out = str(tmp_path / "var.csv")
        code = cli.main(["variation", "--kernel", "fbm", "--param", "H=0.2", "--grid-n", "6",
                         "--rho", "2.5", "--out", out])
        assert code == cli.EXIT_OK


class TestExitCodes:
    def test_missing_config(self, tmp_path):
        assert cli.main(["converge", "--config", str(tmp_path / "none.json"), "--out", "x.csv"]) == cli.EXIT_CONFIG

    def test_invalid_config(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"kernel": {"name": "brownian"}}))
        assert cli.main(["converge", "--config", str(path), "--out", str(tmp_path / "r.csv")]) == cli.EXIT_CONFIG

    def test_bad_param(self, tmp_path):
        code = cli.main(["variation", "--kernel", "fbm", "--param", "H", "--grid-n", "4",
                         "--rho", "2", "--out", str(tmp_path / "v.csv")])
        assert code == cli.EXIT_CONFIG

    def test_exact_beyond_limit(self, tmp_path):
        code = cli.main(["variation", "--kernel", "brownian", "--grid-n", "20", "--rho", "1",
                         "--exact", "--out", str(tmp_path / "v.csv")])
        assert code == cli.EXIT_CONFIG

    def test_numerical_failure(self, config_path, tmp_path, monkeypatch):
        def broken(*args, **kwargs):
            raise NonPSDError("Cholesky failed")

        monkeypatch.setattr(cli, "sample_array", broken)
        code = cli.main(["simulate", "--config", config_path, "--out", str(tmp_path / "p.csv")])
        assert code == cli.EXIT_NUMERICAL
