"""Experiment config loading and validation."""

import json

import pytest

from app.config import load_config, parse_config


def _raw(**overrides):
    raw = {
        "kernel": {"name": "fbm", "params": {"H": 0.35}},
        "f": {"family": "sinusoid", "omega": [2.0], "nu": 1.0, "d": 1},
        "mesh_exponents": [5, 6],
        "n_paths": 100,
        "master_seed": 1,
        "orders": "auto",
    }
    raw.update(overrides)
    return raw


class TestParseConfig:
    def test_defaults(self):
        config = parse_config(_raw())
        assert config.orders.auto
        assert config.quadrature == "trapezoid"
        assert config.workers == 1
        assert config.record_timing
        assert config.build_kernels()[0].rho == pytest.approx(1.0 / 0.7)

    def test_kernel_replicated_per_component(self):
        config = parse_config(_raw(f={"family": "sinusoid", "omega": [1.0, 2.0], "d": 2}))
        kernels = config.build_kernels()
        assert len(kernels) == 2
        assert all(k.name == "fbm" for k in kernels)

    def test_kernel_list(self):
        raw = _raw(kernels=[{"name": "brownian"}, {"name": "ou", "params": {"lam": 1.0}}])
        del raw["kernel"]
        raw["f"] = {"family": "sinusoid", "omega": [1.0, 2.0]}
        assert [k.name for k in parse_config(raw).kernels] == ["brownian", "ou"]

    def test_orders_override(self):
        config = parse_config(_raw(orders={"skorohod": 1}))
        assert config.orders.skorohod == 1
        assert config.orders.strat is None
        assert not config.orders.auto

    def test_unknown_keys_ignored(self):
        raw = _raw(kernel={"name": "brownian", "colour": "blue"})
        assert parse_config(raw).kernels[0].name == "brownian"

    @pytest.mark.parametrize("field", ["f", "mesh_exponents", "n_paths", "master_seed", "orders", "kernel"])
    def test_missing_field(self, field):
        raw = _raw()
        del raw[field]
        with pytest.raises(ValueError, match=field):
            parse_config(raw)

    @pytest.mark.parametrize("overrides", [
        {"mesh_exponents": []},
        {"mesh_exponents": [13]},
        {"n_paths": 0},
        {"master_seed": -1},
        {"orders": {"skorohod": 0}},
        {"orders": "manual"},
        {"quadrature": "simpson"},
        {"epsilon": -0.1},
        {"workers": 0},
        {"kernel": {"params": {"H": 0.3}}},
        {"f": "sin"},
    ])
    def test_invalid(self, overrides):
        with pytest.raises(ValueError):
            parse_config(_raw(**overrides))


class TestLoadConfig:
    def test_json(self, tmp_path):
        path = tmp_path / "exp.json"
        path.write_text(json.dumps(_raw()))
        assert load_config(str(path)).n_paths == 100

    def test_yaml(self, tmp_path):
        path = tmp_path / "exp.yml"
        path.write_text(
            "kernel:\n  name: brownian\n"
            "f: {family: polynomial, coefficients: [0, 0, 0.5]}\n"
            "mesh_exponents: [4]\nn_paths: 10\nmaster_seed: 3\norders: auto\n"
        )
        config = load_config(str(path))
        assert config.build_function().family == "polynomial"

    def test_example_config_loads(self):
        import os

        path = os.path.join(os.path.dirname(__file__), "..", "config.example.yml")
        assert load_config(path).mesh_exponents == [5, 6, 7, 8, 9, 10]

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(str(tmp_path / "nope.yml"))

    def test_malformed(self, tmp_path):
        path = tmp_path / "bad.yml"
        path.write_text("kernel: [unclosed\n")
        with pytest.raises(ValueError):
            load_config(str(path))
