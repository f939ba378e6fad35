import json

import numpy as np
import pytest

from fourier_circuits.construction import construct_max_margin
from fourier_circuits.io import (
    CheckpointError,
    ConfigError,
    GrokOptions,
    RunConfig,
    dump_config,
    load_checkpoint,
    load_config,
    parse_config,
    save_checkpoint,
)
from fourier_circuits.mlp import MlpParams
from fourier_circuits.training import TrainConfig
from fourier_circuits.transformer import AttnConfig, init_transformer


class TestConfig:
    def test_empty_is_default(self):
        assert parse_config("") == RunConfig()

    def test_fields_and_types(self):
        cfg = parse_config("model: attention\np: 7\nlr: 5e-3\nlam: 0\nresidual: false\ngrok:\n  seeds: [4, 5]\n  threshold: 0.9\n")
        assert cfg.train.model == "attention" and cfg.train.p == 7
        assert cfg.train.lr == 0.005 and isinstance(cfg.train.lam, float) and cfg.train.lam == 0.0
        assert cfg.train.residual is False
        assert cfg.grok == GrokOptions((4, 5), 0.9)

    def test_unknown_key_reports_line(self):
        with pytest.raises(ConfigError, match=r"run.cfg:3: learning_rate: unknown key"):
            parse_config("p: 5\nk: 2\nlearning_rate: 0.1\n", "run.cfg")

    def test_unknown_grok_key(self):
        with pytest.raises(ConfigError, match=r":2: grok.delay"):
            parse_config("grok:\n  delay: 3\n")

    @pytest.mark.parametrize(
        "text",
        ["p: five\n", "steps: 1.5\n", "residual: 1\n", "lr: fast\n", "model: 3\n", "grok:\n  seeds: [a]\n", "grok:\n  seeds: []\n"],
    )
    def test_bad_types(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config("p: 5\np: 7\n")

    def test_semantic_validation(self):
        with pytest.raises(ConfigError):
            parse_config("model: rnn\n")

    def test_syntax_error_has_line(self):
        # the unclosed bracket is detected at end of input
        with pytest.raises(ConfigError, match=r"<config>:3:"):
            parse_config("p: 5\nk: [1\n")
        with pytest.raises(ConfigError, match=r"<config>:2:"):
            parse_config("p: 5\nk: 2: 3\n")

    def test_top_level_must_be_mapping(self):
        with pytest.raises(ConfigError):
            parse_config("- 1\n- 2\n")

    def test_dump_roundtrip(self):
        cfg = RunConfig(TrainConfig(model="attention", p=13, lr=1e-3, mlp_hidden=8), GrokOptions((7,), 0.95))
        assert parse_config(dump_config(cfg)) == cfg

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.cfg")

    def test_presets_parse(self):
        from pathlib import Path

        presets = sorted((Path(__file__).parent.parent / "presets").glob("*.cfg"))
        assert presets
        for path in presets:
            load_config(path)


class TestCheckpoint:
    def test_mlp_bitwise_roundtrip(self, tmp_path):
        net = MlpParams.random(7, 3, 5, 1.0, seed=0)
        net = MlpParams(net.U * np.pi, net.W / 3.0)
        save_checkpoint(tmp_path / "a.ckpt", net, {"seed": 0})
        loaded, header = load_checkpoint(tmp_path / "a.ckpt")
        assert loaded.U.tobytes() == net.U.tobytes() and loaded.W.tobytes() == net.W.tobytes()
        assert header["kind"] == "mlp" and header["model"] == {"p": 7, "k": 3, "m": 5} and header["config"] == {"seed": 0}

    def test_attention_roundtrip(self, tmp_path):
        params = init_transformer(AttnConfig(p=5, k=2, heads=2, d=4, d_head=2, mlp_hidden=3, layers=2))
        save_checkpoint(tmp_path / "b.ckpt", params)
        loaded, _ = load_checkpoint(tmp_path / "b.ckpt")
        assert loaded.cfg == params.cfg
        for name, arr in params.arrays.items():
            assert loaded.arrays[name].tobytes() == arr.tobytes()

    def test_extreme_values(self, tmp_path):
        u = np.array([[[5e-324, 1.7976931348623157e308, -0.0, 1 / 3, 0.1]]])
        net = MlpParams(u, np.array([[np.nextafter(1.0, 2.0)] * 5]))
        save_checkpoint(tmp_path / "c.ckpt", net)
        loaded, _ = load_checkpoint(tmp_path / "c.ckpt")
        assert loaded.U.tobytes() == net.U.tobytes() and loaded.W.tobytes() == net.W.tobytes()

    def test_save_is_deterministic(self, tmp_path):
        net = construct_max_margin(5, 2)
        save_checkpoint(tmp_path / "a", net)
        save_checkpoint(tmp_path / "b", net)
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_rejects_nonfinite(self, tmp_path):
        net = MlpParams(np.full((1, 2, 5), np.nan), np.zeros((1, 5)))
        with pytest.raises(ValueError):
            save_checkpoint(tmp_path / "x", net)

    def test_not_a_checkpoint(self, tmp_path):
        (tmp_path / "x").write_text('{"format": "other"}')
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "x")
        (tmp_path / "y").write_text("not json")
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "y")

    def test_wrong_version(self, tmp_path):
        save_checkpoint(tmp_path / "a", construct_max_margin(3, 2))
        doc = json.loads((tmp_path / "a").read_text())
        doc["version"] = 99
        (tmp_path / "a").write_text(json.dumps(doc))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(tmp_path / "a")
