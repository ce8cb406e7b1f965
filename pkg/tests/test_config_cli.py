"""Run-config parsing/rendering and the CLI contract: subcommands, outputs,
exit codes, resume."""

from __future__ import annotations

import pytest

from modernn import cli
from modernn.config import (RunConfig, apply_pairs, parse_config_file,
                            render_config, resolve)
from modernn.datagen import load_dataset
from modernn.errors import ConfigError
from modernn.trainer import load_checkpoint


class TestConfigFile:
    def test_parse_comments_and_blanks(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# full line comment\n\nseed=7   # trailing\n  batch = 3\n")
        assert parse_config_file(p) == {"seed": "7", "batch": "3"}

    def test_parse_error_reports_line(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("seed=1\nnot a pair\n")
        with pytest.raises(ConfigError, match=r":2:"):
            parse_config_file(p)

    def test_unknown_key_rejected(self):
        cfg = RunConfig()
        with pytest.raises(ConfigError, match="unknown config key"):
            apply_pairs(cfg, {"sped": "3"}, "test")

    def test_bad_value_reports_key_and_origin(self):
        cfg = RunConfig()
        with pytest.raises(ConfigError, match=r"myfile.*'seed'"):
            apply_pairs(cfg, {"seed": "fast"}, "myfile")

    def test_typed_casting(self):
        cfg = RunConfig()
        apply_pairs(cfg, {
            "modes": "1, 2,3", "proportions": "0.5,0.25,0.25", "lr": "1e-3",
            "deterministic": "yes", "clip_norm": "none", "fusion_mode": "equal",
        }, "test")
        assert cfg.modes == (1, 2, 3)
        assert cfg.proportions == (0.5, 0.25, 0.25)
        assert cfg.lr == 1e-3
        assert cfg.deterministic is True
        assert cfg.clip_norm is None
        assert cfg.fusion_mode == "equal"

    def test_bool_rejects_garbage(self):
        with pytest.raises(ConfigError):
            apply_pairs(RunConfig(), {"deterministic": "sort of"}, "test")

    def test_render_parse_round_trip(self, tmp_path):
        cfg = RunConfig()
        cfg.modes = (2, 4)
        cfg.proportions = (0.75, 0.25)
        cfg.clip_norm = None
        cfg.deterministic = True
        cfg.lr = 0.00025
        p = tmp_path / "r.cfg"
        p.write_text(render_config(cfg))
        back = resolve(p)
        assert back == cfg

    def test_overrides_beat_file(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("seed=1\nbatch=2\n")
        cfg = resolve(p, {"seed": "5"})
        assert cfg.seed == 5 and cfg.batch == 2


TINY_CFG = """
frame_size=16
seq_len=8
modes=1,2
sprite_size=7
speed_min=1
speed_max=2
count=12
layers=1
channels=8
patch=4
input_len=4
pred_len=4
image_size=16
num_slots=2
ffn_hidden=4
lr=0.003
batch=4
max_iters=6
eval_every=3
ssim_window=7
seed=3
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Shared gen-data + train outputs for the CLI pipeline tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.cfg"
    cfg.write_text(TINY_CFG)
    data = root / "train.mseq"
    assert cli.main(["gen-data", "--config", str(cfg), "--out", str(data)]) == 0
    run = root / "run1"
    assert cli.main(["train", "--config", str(cfg), "--data", str(data),
                     "--out", str(run)]) == 0
    return {"root": root, "cfg": cfg, "data": data, "run": run}


class TestGenData:
    def test_outputs(self, workdir):
        ds = load_dataset(workdir["data"])
        assert ds.count == 12 and ds.seq_len == 8
        assert (workdir["root"] / "train.mseq.config").exists()

    def test_byte_deterministic(self, workdir, tmp_path):
        out = tmp_path / "again.mseq"
        assert cli.main(["gen-data", "--config", str(workdir["cfg"]),
                         "--out", str(out)]) == 0
        assert out.read_bytes() == workdir["data"].read_bytes()

    def test_flag_overrides_change_content(self, workdir, tmp_path):
        out = tmp_path / "seeded.mseq"
        assert cli.main(["gen-data", "--config", str(workdir["cfg"]),
                         "--seed", "99", "--out", str(out)]) == 0
        assert out.read_bytes() != workdir["data"].read_bytes()
        assert "seed=99" in (tmp_path / "seeded.mseq.config").read_text()


class TestTrain:
    def test_outputs(self, workdir):
        run = workdir["run"]
        assert (run / "resolved.config").exists()
        assert (run / "ckpt_000003.mckp").exists()
        assert (run / "ckpt_final.mckp").exists()
        lines = (run / "loss.csv").read_text().splitlines()
        assert lines[0] == "iteration,loss"
        assert len(lines) == 7
        ckpt = load_checkpoint(run / "ckpt_final.mckp")
        assert ckpt.iteration == 6

    def test_resume_matches_uninterrupted(self, workdir, tmp_path):
        args = ["--config", str(workdir["cfg"]), "--data", str(workdir["data"])]
        resumed = tmp_path / "resumed"
        assert cli.main(["train", *args, "--out", str(resumed), "--resume",
                         str(workdir["run"] / "ckpt_000003.mckp")]) == 0
        a = (workdir["run"] / "ckpt_final.mckp").read_bytes()
        b = (resumed / "ckpt_final.mckp").read_bytes()
        assert a == b

    def test_resume_config_mismatch_rejected(self, workdir, tmp_path):
        code = cli.main(["train", "--config", str(workdir["cfg"]),
                         "--data", str(workdir["data"]),
                         "--out", str(tmp_path / "x"),
                         "--set", "channels=16",
                         "--resume", str(workdir["run"] / "ckpt_final.mckp")])
        assert code == 2

    def test_missing_out_rejected(self, workdir):
        assert cli.main(["train", "--config", str(workdir["cfg"]),
                         "--data", str(workdir["data"])]) == 2


class TestEval:
    def test_table_and_files(self, workdir, tmp_path, capsys):
        out = tmp_path / "eval"
        code = cli.main(["eval", "--config", str(workdir["cfg"]),
                         "--checkpoint", str(workdir["run"] / "ckpt_final.mckp"),
                         "--data", str(workdir["data"]), "--out", str(out)])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "mse_pixel" in stdout and "overall" in stdout and "mode-1" in stdout
        assert (out / "metrics_overall.csv").exists()
        assert (out / "metrics_mode1.csv").exists()
        text = (out / "metrics.txt").read_text()
        assert "overall.aggregate.mse=" in text

    def test_works_without_out(self, workdir, capsys):
        code = cli.main(["eval", "--config", str(workdir["cfg"]),
                         "--checkpoint", str(workdir["run"] / "ckpt_final.mckp"),
                         "--data", str(workdir["data"])])
        assert code == 0
        assert "overall" in capsys.readouterr().out


class TestDiagnose:
    def test_matrix_and_features(self, workdir, tmp_path, capsys):
        out = tmp_path / "diag"
        code = cli.main(["diagnose", "--config", str(workdir["cfg"]),
                         "--checkpoint", str(workdir["run"] / "ckpt_final.mckp"),
                         "--data", str(workdir["data"]), "--out", str(out)])
        assert code == 0
        assert "A-distance matrix" in capsys.readouterr().out
        text = (out / "adistance.txt").read_text()
        assert text.startswith("kind=bus")
        assert "d_a.1.2=" in text
        # symmetric entries are rendered identically
        pairs = dict(line.split("=") for line in text.splitlines()[1:])
        assert pairs["d_a.1.2"] == pairs["d_a.2.1"]
        from modernn.diagnostics import import_features
        records = import_features(out / "features.csv")
        assert records and {r.mode_label for r in records} == {1, 2}


class TestExitCodes:
    def test_unknown_config_key(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("bogus=1\n")
        assert cli.main(["gen-data", "--config", str(p),
                         "--out", str(tmp_path / "d.mseq")]) == 2

    def test_bad_set_syntax(self, tmp_path):
        assert cli.main(["gen-data", "--set", "seed", "--out",
                         str(tmp_path / "d.mseq")]) == 2

    def test_missing_dataset_file(self, tmp_path):
        assert cli.main(["train", "--data", str(tmp_path / "nope.mseq"),
                         "--out", str(tmp_path / "run")]) == 3

    def test_corrupt_checkpoint(self, workdir, tmp_path):
        bad = tmp_path / "bad.mckp"
        bad.write_bytes(b"XXXXgarbage")
        assert cli.main(["eval", "--checkpoint", str(bad),
                         "--data", str(workdir["data"])]) == 3

    def test_invalid_model_config(self, workdir, tmp_path):
        # channels not divisible by slots surfaces as a config error
        assert cli.main(["train", "--config", str(workdir["cfg"]),
                         "--data", str(workdir["data"]),
                         "--out", str(tmp_path / "run"),
                         "--set", "channels=9"]) == 2

    def test_env_threads_must_be_integer(self, workdir, tmp_path, monkeypatch):
        monkeypatch.setenv("MODERNN_THREADS", "lots")
        assert cli.main(["gen-data", "--config", str(workdir["cfg"]),
                         "--out", str(tmp_path / "d.mseq")]) == 2

    def test_threads_flag_recorded_in_resolved_config(self, workdir, tmp_path):
        out = tmp_path / "t.mseq"
        assert cli.main(["gen-data", "--config", str(workdir["cfg"]),
                         "--threads", "2", "--out", str(out)]) == 0
        assert "threads=2" in (tmp_path / "t.mseq.config").read_text()
