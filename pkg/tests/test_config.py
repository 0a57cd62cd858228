"""config: key=value parsing, includes, typing, hashing."""

import pytest

from kflqr.config import (
    ConfigError,
    config_hash,
    experiment_config,
    load_config,
    parse_config_text,
)


class TestParsing:
    def test_types(self):
        cfg = parse_config_text(
            """
            plant = example1
            seed = 3
            train.learning_rate = 0.01
            train.squash = true
            data.unforced_twin = off
            train.hidden = 64,64
            """
        )
        assert cfg["plant"] == "example1"
        assert cfg["seed"] == 3
        assert cfg["train.learning_rate"] == 0.01
        assert cfg["train.squash"] is True
        assert cfg["data.unforced_twin"] is False
        assert cfg["train.hidden"] == (64, 64)

    def test_comments_and_blank_lines(self):
        cfg = parse_config_text("# comment\n\nseed = 1  # trailing\n")
        assert cfg == {"seed": 1}

    def test_include_and_override(self, tmp_path):
        (tmp_path / "base.cfg").write_text("plant = example1\nseed = 1\n")
        child = tmp_path / "child.cfg"
        child.write_text("include base.cfg\nseed = 9\n")
        cfg = load_config(child)
        assert cfg["plant"] == "example1"
        assert cfg["seed"] == 9

    def test_missing_include_raises(self, tmp_path):
        child = tmp_path / "child.cfg"
        child.write_text("include nope.cfg\n")
        with pytest.raises(ConfigError):
            load_config(child)

    def test_malformed_line_raises(self):
        with pytest.raises(ConfigError):
            parse_config_text("this is not a key value line\n")

    def test_hash_stable_and_order_independent(self):
        a = parse_config_text("seed = 1\nplant = example1\n")
        b = parse_config_text("plant = example1\nseed = 1\n")
        assert config_hash(a) == config_hash(b)
        c = parse_config_text("plant = example1\nseed = 2\n")
        assert config_hash(a) != config_hash(c)


class TestExperimentConfig:
    def test_defaults_and_seed_override(self):
        cfg = parse_config_text("plant = example2\n")
        ec = experiment_config(cfg, seed_override=42)
        assert ec.plant == "example2"
        assert ec.seed == 42
        assert ec.hyper.seed == 43
        assert ec.hyper.p_bar == 10
        assert ec.hyper.hidden == (120, 120, 120)
        assert ec.lqr.q_diag == (10.0,)

    def test_requires_plant(self):
        with pytest.raises(ConfigError):
            experiment_config(parse_config_text("seed = 1\n"))

    def test_scalar_hidden_becomes_tuple(self):
        cfg = parse_config_text("plant = example1\ntrain.hidden = 32\n")
        ec = experiment_config(cfg)
        assert ec.hyper.hidden == (32,)

    def test_presets_parse(self):
        from pathlib import Path

        import kflqr

        presets = Path(kflqr.__file__).parent / "presets"
        for preset in sorted(presets.glob("*.cfg")):
            ec = experiment_config(load_config(preset))
            assert ec.plant in ("example1", "example2")
