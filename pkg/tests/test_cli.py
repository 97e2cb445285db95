import json

import numpy as np
import pytest

from inflow.cli import (
    VARIANTS,
    RunConfig,
    build_pipeline,
    cmd_ablate,
    cmd_eval,
    cmd_synth,
    cmd_train,
    load_checkpoint,
    load_config,
    main,
    resolve_mode,
    save_checkpoint,
    save_config,
)
from inflow.errors import ConfigError, ContractError


def tiny_config(out_dir, **train_overrides):
    cfg = RunConfig.from_dict({
        "dataset": {"preset": "synthetic-1", "total_length": 400, "num_series": 3,
                    "seed": 0},
        "model": {"variant": "inflow", "num_blocks": 2, "flow_hidden": 8,
                  "backbone": "mlp", "lookback": 8, "horizon": 8,
                  "hidden_width": 16, "depth": 2},
        "train": {"batch_size": 128, "max_epochs": 2, "patience": 2,
                  **train_overrides},
        "out_dir": str(out_dir),
        "seeds": [0],
    })
    return cfg


class TestConfig:
    def test_round_trip(self):
        cfg = tiny_config("somewhere")
        assert RunConfig.from_dict(cfg.to_dict()) == cfg

    def test_file_round_trip(self, tmp_path):
        cfg = tiny_config(tmp_path)
        save_config(cfg, tmp_path / "c.json")
        assert load_config(tmp_path / "c.json") == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="model.widht"):
            RunConfig.from_dict({"model": {"widht": 3}})

    def test_mode_resolution(self):
        assert resolve_mode("inflow", "auto") == "bilevel"
        assert resolve_mode("inflow_t", "auto") == "bilevel"
        assert resolve_mode("realnvp", "auto") == "bilevel"
        assert resolve_mode("inflow_j", "auto") == "joint"
        assert resolve_mode("revin", "auto") == "joint"
        assert resolve_mode("revin", "bilevel") == "bilevel"
        assert resolve_mode("none", "auto") == "backbone_only"

    def test_inconsistent_mode_is_preflight_error(self):
        with pytest.raises(ConfigError):
            resolve_mode("inflow_j", "bilevel")
        cfg = tiny_config("x", mode="bilevel")
        cfg.model.variant = "none"
        with pytest.raises(ConfigError):
            cfg.validate()


class TestCheckpoint:
    def test_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {
            "theta.w": rng.normal(size=(4, 3)),
            "theta.b": rng.normal(size=3),
            "phi.scalar": np.asarray(rng.normal()),
        }
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_checkpoint(p1, arrays)
        loaded = load_checkpoint(p1)
        for k, v in arrays.items():
            np.testing.assert_array_equal(loaded[k], v)
            assert loaded[k].shape == v.shape
        save_checkpoint(p2, loaded)
        assert p1.read_bytes() == p2.read_bytes()

    def test_shape_mismatch_names_parameter(self, tmp_path):
        cfg = tiny_config(tmp_path)
        pipe = build_pipeline(cfg.model, num_variates=3, seed=0)
        state = {k: t.data for k, t in pipe.state_tensors().items()}
        bad = dict(state)
        name = next(iter(bad))
        bad[name] = np.zeros((1, 1))
        path = tmp_path / "bad.bin"
        save_checkpoint(path, bad)
        with pytest.raises(ContractError, match=name.replace(".", r"\.")):
            pipe.load_state(load_checkpoint(path))

    def test_missing_tensor_detected(self, tmp_path):
        cfg = tiny_config(tmp_path)
        pipe = build_pipeline(cfg.model, num_variates=3, seed=0)
        state = {k: t.data for k, t in pipe.state_tensors().items()}
        state.pop(next(iter(state)))
        path = tmp_path / "short.bin"
        save_checkpoint(path, state)
        with pytest.raises(ContractError, match="missing"):
            pipe.load_state(load_checkpoint(path))


class TestSynth:
    def test_same_seed_identical_bytes(self, tmp_path):
        cfg_a = tiny_config(tmp_path / "a")
        cfg_b = tiny_config(tmp_path / "b")
        cmd_synth(cfg_a)
        cmd_synth(cfg_b)
        assert (tmp_path / "a" / "series.csv").read_bytes() == \
               (tmp_path / "b" / "series.csv").read_bytes()

    def test_manifest_records_preset_tau(self, tmp_path):
        for preset, tau in (("synthetic-1", 24), ("synthetic-2", 12),
                            ("synthetic-3", 48)):
            out = tmp_path / preset
            cfg = tiny_config(out)
            cfg.dataset.preset = preset
            cfg.dataset.total_length = 400
            cmd_synth(cfg)
            manifest = json.loads((out / "dataset_manifest.json").read_text())
            assert manifest["provenance"]["config"]["tau"] == tau


class TestTrainEval:
    def test_artifacts_written_per_seed(self, tmp_path):
        cfg = tiny_config(tmp_path / "run")
        cfg.seeds = [1, 2]
        out = cmd_train(cfg)
        for seed in (1, 2):
            assert (out / f"checkpoint_seed{seed}.bin").exists()
            assert (out / f"report_seed{seed}.json").exists()
            assert (out / f"loss_seed{seed}.csv").exists()
        assert (out / "config.json").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert set(manifest["files"]) >= {"checkpoint_seed1.bin", "report_seed1.json"}
        assert manifest["config_hash"] == cfg.hash()

    def test_checkpoint_contains_both_parameter_groups(self, tmp_path):
        cfg = tiny_config(tmp_path / "run")
        out = cmd_train(cfg)
        names = set(load_checkpoint(out / "checkpoint_seed0.bin"))
        assert any(n.startswith("theta.") for n in names)
        assert any(n.startswith("phi.") for n in names)

    def test_eval_reproduces_best_val_loss(self, tmp_path):
        cfg = tiny_config(tmp_path / "run")
        out = cmd_train(cfg)
        report = json.loads((out / "report_seed0.json").read_text())
        eval_out = cmd_eval(cfg, out / "checkpoint_seed0.bin",
                            out_dir=tmp_path / "eval")
        metrics = json.loads((eval_out / "metrics.json").read_text())
        assert metrics["val_mse"] == pytest.approx(report["best_val_loss"], abs=1e-9)

    def test_trace_flag_emits_csv_per_window(self, tmp_path):
        cfg = tiny_config(tmp_path / "run")
        out = cmd_train(cfg)
        eval_out = cmd_eval(cfg, out / "checkpoint_seed0.bin",
                            out_dir=tmp_path / "eval", trace_windows=[0, 3])
        assert (eval_out / "trace_0.csv").exists()
        assert (eval_out / "trace_3.csv").exists()

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg_a = tiny_config(tmp_path / "a")
        cfg_b = tiny_config(tmp_path / "b")
        out_a, out_b = cmd_train(cfg_a), cmd_train(cfg_b)
        assert (out_a / "checkpoint_seed0.bin").read_bytes() == \
               (out_b / "checkpoint_seed0.bin").read_bytes()
        assert (out_a / "report_seed0.json").read_bytes() == \
               (out_b / "report_seed0.json").read_bytes()
        assert (out_a / "loss_seed0.csv").read_bytes() == \
               (out_b / "loss_seed0.csv").read_bytes()

    def test_main_entry_train(self, tmp_path, capsys):
        cfg = tiny_config(tmp_path / "run")
        save_config(cfg, tmp_path / "cfg.json")
        rc = main(["train", "--config", str(tmp_path / "cfg.json"),
                   "--out", str(tmp_path / "cli_run"), "--variant", "none"])
        assert rc == 0
        assert (tmp_path / "cli_run" / "checkpoint_seed0.bin").exists()

    def test_flag_precedence_over_config(self, tmp_path):
        cfg = tiny_config(tmp_path / "run")
        save_config(cfg, tmp_path / "cfg.json")
        rc = main(["synth", "--config", str(tmp_path / "cfg.json"),
                   "--preset", "synthetic-2", "--out", str(tmp_path / "s2")])
        assert rc == 0
        manifest = json.loads((tmp_path / "s2" / "dataset_manifest.json").read_text())
        assert manifest["provenance"]["config"]["tau"] == 12


class TestAblate:
    def test_roster_and_fairness(self, tmp_path):
        cfg = tiny_config(tmp_path / "ablation", max_epochs=1)
        cfg.train.mode = "auto"
        out = cmd_ablate(cfg)
        table = json.loads((out / "ablation.json").read_text())["table"]
        assert [row["variant"] for row in table] == list(VARIANTS)
        ok = [row for row in table if row["status"] == "ok"]
        assert len(ok) == len(VARIANTS)
        csv_lines = (out / "ablation.csv").read_text().strip().splitlines()
        assert len(csv_lines) == 1 + len(VARIANTS)
        hashes = {
            json.loads((out / v / "manifest.json").read_text())["anchor_hash"]
            for v in VARIANTS
        }
        assert len(hashes) == 1  # identical window sets across variants
