import json

import pytest
from click.testing import CliRunner

from haed import config as cfgmod
from haed.cli import main as cli_main
from haed.errors import ConfigError, UnknownKey


class TestConfigDefaults:
    def test_empty_config_full_scale_defaults(self):
        cfg = cfgmod.resolve({})
        assert cfg["model"]["embed_dim"] == 10
        assert cfg["dataset"]["hierarchy"] == {"mode": "word", "k": 12}
        m = cfg["model"]["main"]
        assert (m["layers"], m["dim"], m["ff_dim"], m["heads"], m["head_dim"]) == \
            (6, 356, 1424, 8, 32)
        assert m["max_positions"] == 100
        assert cfg["optimizer"]["lr_enc_dec"] == 0.002
        assert cfg["optimizer"]["lr_main"] == 0.00035
        assert cfg["optimizer"]["clip_norm"] == 0.01
        assert cfg["schedule"]["warmup_steps"] == 2000
        assert cfg["schedule"]["floor_frac"] == 0.05
        assert cfg["batch"]["segments_per_batch"] == 256
        assert cfg["batch"]["docs_per_batch"] == 32

    def test_iem_overlay_defaults(self):
        cfg = cfgmod.resolve({"objective": {"kind": "iem"}})
        assert cfg["model"]["main"]["heads"] == 12
        assert cfg["model"]["decoder"]["units"] == 2000
        assert cfg["objective"]["extra_negative_batches"] == 3

    def test_iem_overlay_respects_explicit_values(self):
        cfg = cfgmod.resolve({"objective": {"kind": "iem"},
                              "model": {"main": {"heads": 4}, "decoder": {"units": 8}}})
        assert cfg["model"]["main"]["heads"] == 4
        assert cfg["model"]["decoder"]["units"] == 8

    def test_image_defaults_to_fixed_k(self):
        cfg = cfgmod.resolve({"dataset": {"kind": "image"}})
        assert cfg["dataset"]["hierarchy"]["mode"] == "fixed_k"

    def test_rnn_main_lr_and_warmup(self):
        cfg = cfgmod.resolve({"model": {"main": {"kind": "rnn"}}})
        assert cfg["optimizer"]["lr_main"] == 0.002
        assert cfg["schedule"]["warmup_steps"] == 0


class TestConfigValidation:
    def test_unknown_key(self):
        with pytest.raises(UnknownKey) as e:
            cfgmod.resolve({"typo_key": 1})
        assert "typo_key" in str(e.value)

    def test_nested_unknown_key_path(self):
        with pytest.raises(UnknownKey) as e:
            cfgmod.resolve({"model": {"main": {"n_heads": 4}}})
        assert "model.main.n_heads" in str(e.value)

    def test_bad_k(self):
        with pytest.raises(ConfigError):
            cfgmod.resolve({"dataset": {"hierarchy": {"k": 0}}})

    def test_word_mode_on_images_rejected(self):
        with pytest.raises(ConfigError):
            cfgmod.resolve({"dataset": {"kind": "image", "hierarchy": {"mode": "word"}}})

    def test_parse_is_pure(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"run": {"seed": 7}}))
        a = cfgmod.parse_config(p)
        b = cfgmod.parse_config(p)
        assert a == b
        assert cfgmod.config_hash(a) == cfgmod.config_hash(b)

    def test_hash_changes_with_content(self):
        a = cfgmod.resolve({"run": {"seed": 1}})
        b = cfgmod.resolve({"run": {"seed": 2}})
        assert cfgmod.config_hash(a) != cfgmod.config_hash(b)

    def test_invalid_json_reports_path(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            cfgmod.parse_config(p)


def _tiny_config_file(tmp_path, corpus, steps=3):
    cfg = {
        "dataset": {"path": str(corpus)},
        "model": {"embed_dim": 8,
                  "encoder": {"mlp_hidden": [16, 16]},
                  "main": {"layers": 1, "dim": 16, "ff_dim": 32, "heads": 2,
                           "head_dim": 8},
                  "decoder": {"units": 16}},
        "schedule": {"warmup_steps": 0},
        "batch": {"segments_per_batch": 16},
        "run": {"steps": steps, "eval_every": 1, "seed": 0,
                "out_dir": str(tmp_path / "out")},
    }
    p = tmp_path / "config.json"
    p.write_text(json.dumps(cfg))
    return p


class TestCli:
    def test_make_synth_and_train_and_eval(self, tmp_path):
        runner = CliRunner()
        corpus = tmp_path / "corpus.txt"
        r = runner.invoke(cli_main, ["make-synth", "--out", str(corpus),
                                     "--size", "20000", "--seed", "1"])
        assert r.exit_code == 0, r.output
        cfg = _tiny_config_file(tmp_path, corpus)
        r = runner.invoke(cli_main, ["train", "--config", str(cfg)])
        assert r.exit_code == 0, r.output
        out = tmp_path / "out"
        names = {p.name for p in out.iterdir()}
        assert {"resolved_config.json", "metrics.csv", "checkpoint.pt"} <= names
        r = runner.invoke(cli_main, ["eval", "--checkpoint", str(out / "checkpoint.pt"),
                                     "--data", str(corpus), "--max-batches", "2"])
        assert r.exit_code == 0, r.output
        assert r.output.startswith("bpt=")

    def test_make_synth_image(self, tmp_path):
        runner = CliRunner()
        out = tmp_path / "imgs.haim"
        r = runner.invoke(cli_main, ["make-synth", "--kind", "image", "--out", str(out),
                                     "--count", "2", "--height", "4", "--width", "4"])
        assert r.exit_code == 0, r.output
        from haed import data
        assert len(data.load_image_corpus(out)) == 2

    def test_unknown_config_key_fails_cleanly(self, tmp_path):
        runner = CliRunner()
        bad = tmp_path / "bad.json"
        bad.write_text('{"typo_key": 1}')
        r = runner.invoke(cli_main, ["train", "--config", str(bad)])
        assert r.exit_code != 0
        assert "typo_key" in r.output

    def test_pretrain_then_finetune(self, tmp_path):
        runner = CliRunner()
        corpus = tmp_path / "corpus.txt"
        runner.invoke(cli_main, ["make-synth", "--out", str(corpus), "--size", "20000"])
        cfg = _tiny_config_file(tmp_path, corpus, steps=2)
        r = runner.invoke(cli_main, ["pretrain", "--config", str(cfg),
                                     "--out", str(tmp_path / "pre")])
        assert r.exit_code == 0, r.output
        r = runner.invoke(cli_main, [
            "finetune", "--config", str(cfg),
            "--checkpoint", str(tmp_path / "pre" / "checkpoint.pt"),
            "--out", str(tmp_path / "ft")])
        assert r.exit_code == 0, r.output
        assert (tmp_path / "ft" / "metrics.csv").exists()

    def test_timing_command(self, tmp_path):
        runner = CliRunner()
        corpus = tmp_path / "corpus.txt"
        runner.invoke(cli_main, ["make-synth", "--out", str(corpus), "--size", "20000"])
        cfg = _tiny_config_file(tmp_path, corpus)
        r = runner.invoke(cli_main, ["timing", "--config", str(cfg),
                                     "--out", str(tmp_path / "tim"), "--trials", "20"])
        assert r.exit_code == 0, r.output
        assert (tmp_path / "tim" / "timing.csv").exists()
        assert (tmp_path / "tim" / "timing.png").exists()
