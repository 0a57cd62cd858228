"""cli: subcommand pipeline, determinism of outputs, error handling."""

import json



import pytest

from kflqr.cli import main

TOY_CFG = """
plant = example1
seed = 7
data.dt = 0.025
data.horizon = 1.0
data.ic_count = 6
data.ic_layout = edge
data.amp_lo = -1.0
data.amp_hi = 1.0
data.hold_lo = 0.025
data.hold_hi = 0.1
data.unforced_twin = true
train.p_bar = 2
train.epochs = 3
train.batch_size = 128
train.hidden = 8,8
train.coupling_layers = 2
train.mode = two_phase
eval.horizon = 0.5
eval.n_trajectories = 3
eval.plot_count = 1
lqr.q = 1.0
lqr.r = 1.0
lqr.horizon = 2.0
lqr.dt = 0.01
lqr.ic_count = 3
sim.horizon = 0.5
"""


@pytest.fixture
def toy_config(tmp_path):
    path = tmp_path / "toy.cfg"
    path.write_text(TOY_CFG)
    return path


def run(args):
    return main([str(a) for a in args])


class TestPipeline:
    def test_full_pipeline_outputs(self, toy_config, tmp_path):
        out = tmp_path / "run"
        assert run(["generate", "--config", toy_config, "--out", out]) == 0
        assert run(["train", "--config", toy_config, "--out", out]) == 0
        assert run(["evaluate", "--config", toy_config, "--out", out]) == 0
        assert run(["lqr", "--config", toy_config, "--out", out]) == 0
        assert run(["simulate", "--config", toy_config, "--out", out,
                    "--model", out / "model.json"]) == 0
        expected = [
            "dataset.csv", "dataset.csv.meta.json", "model.json",
            "training_log.csv", "training_loss.png", "rmse_summary.csv",
            "rmse_hist.png", "rollout_000.csv", "rollout_000.png",
            "controller.json", "cost_report.csv", "cost_summary.csv",
            "cost_comparison.png", "closed_loop_000.png", "trajectory.csv",
            "trajectory.png",
        ]
        for name in expected:
            assert (out / name).exists(), name

    def test_generate_deterministic_bytes(self, toy_config, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run(["generate", "--config", toy_config, "--out", out1]) == 0
        assert run(["generate", "--config", toy_config, "--out", out2]) == 0
        assert (out1 / "dataset.csv").read_bytes() == (out2 / "dataset.csv").read_bytes()

    def test_seed_override_changes_dataset(self, toy_config, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run(["generate", "--config", toy_config, "--out", out1]) == 0
        assert run(["generate", "--config", toy_config, "--out", out2, "--seed", 8]) == 0
        assert (out1 / "dataset.csv").read_bytes() != (out2 / "dataset.csv").read_bytes()

    def test_zero_epochs_emits_initialization(self, toy_config, tmp_path):
        out = tmp_path / "run"
        cfg = tmp_path / "zero.cfg"
        cfg.write_text(TOY_CFG.replace("train.epochs = 3", "train.epochs = 0"))
        assert run(["generate", "--config", cfg, "--out", out]) == 0
        assert run(["train", "--config", cfg, "--out", out]) == 0
        assert (out / "model.json").exists()
        log = (out / "training_log.csv").read_text().strip().splitlines()
        assert len(log) == 2  # provenance comment + header, no epochs

    def test_outputs_carry_config_hash(self, toy_config, tmp_path):
        out = tmp_path / "run"
        run(["generate", "--config", toy_config, "--out", out])
        run(["train", "--config", toy_config, "--out", out])
        run(["evaluate", "--config", toy_config, "--out", out])
        run(["lqr", "--config", toy_config, "--out", out])
        meta = json.loads((out / "dataset.csv.meta.json").read_text())
        model = json.loads((out / "model.json").read_text())
        assert meta["config_hash"] == model["meta"]["config_hash"]
        expected = f"config_hash={meta['config_hash']}"
        for name in ("training_log.csv", "rmse_summary.csv", "rollout_000.csv",
                     "cost_report.csv", "cost_summary.csv"):
            first = (out / name).read_text().splitlines()[0]
            assert first.startswith("#") and expected in first, name


class TestErrors:
    def test_missing_config_is_parsable_error(self, tmp_path, capsys):
        code = run(["generate", "--config", tmp_path / "absent.cfg", "--out", tmp_path])
        assert code == 2
        assert capsys.readouterr().err.startswith("error:")

    def test_plant_mismatch_refused(self, toy_config, tmp_path, capsys):
        out = tmp_path / "run"
        run(["generate", "--config", toy_config, "--out", out])
        run(["train", "--config", toy_config, "--out", out])
        wrong = tmp_path / "wrong.cfg"
        wrong.write_text(TOY_CFG.replace("plant = example1", "plant = example2"))
        code = run(["evaluate", "--config", wrong, "--out", out])
        assert code == 2
        assert "example1" in capsys.readouterr().err

    def test_dataset_plant_mismatch_refused(self, toy_config, tmp_path, capsys):
        out = tmp_path / "run"
        run(["generate", "--config", toy_config, "--out", out])
        wrong = tmp_path / "wrong.cfg"
        wrong.write_text(TOY_CFG.replace("plant = example1", "plant = example2"))
        code = run(["train", "--config", wrong, "--out", out])
        assert code == 2
        assert capsys.readouterr().err.startswith("error:")
