import json
from dataclasses import fields

import pytest

from wsseg.cli import EXIT_CODES, build_parser, main
from wsseg.config import SEED_ENV, Config

TINY = ["--image-size", "16", "--patch-size", "8", "--embed-dim", "8", "--num-blocks", "1",
        "--token-dim", "2", "--hidden-dim", "4", "--head-hidden", "4", "--k", "2",
        "--batch-size", "4", "--crf-iterations", "2"]


def last_json(text):
    return json.loads(text.strip().splitlines()[-1])


class TestParser:
    def test_every_config_key_has_a_flag(self):
        helptext = build_parser()._subparsers._group_actions[0].choices["train"].format_help()
        for f in fields(Config):
            assert "--" + f.name.replace("_", "-") in helptext

    def test_subcommands(self):
        choices = build_parser()._subparsers._group_actions[0].choices
        assert set(choices) == {"gen", "train", "infer", "eval", "gradcheck", "ablate",
                                "bench-scaling"}

    def test_unknown_command_exits_nonzero(self):
        with pytest.raises(SystemExit) as err:
            main(["frobnicate"])
        assert err.value.code != 0


class TestErrors:
    def test_config_error(self, tmp_path, capsys):
        code = main(["train", "--out", str(tmp_path), "--k", "99"])
        assert code == EXIT_CODES["config"]
        assert last_json(capsys.readouterr().err)["error"] == "config"

    def test_data_error(self, tmp_path, capsys):
        code = main(["eval", "--pred", str(tmp_path), "--data-root", str(tmp_path / "none")])
        assert code == EXIT_CODES["data"]
        assert "JPEGImages" in last_json(capsys.readouterr().err)["message"]

    def test_checkpoint_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"garbage")
        code = main(["infer", "--checkpoint", str(bad), "--out", str(tmp_path)])
        assert code == EXIT_CODES["checkpoint"]

    def test_missing_file_is_io(self, tmp_path, capsys):
        code = main(["infer", "--checkpoint", str(tmp_path / "none.bin"), "--out", str(tmp_path)])
        assert code == EXIT_CODES["io"]

    def test_bad_bool(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as err:
            main(["train", "--out", str(tmp_path), "--crf", "maybe"])
        assert err.value.code != 0


class TestWorkflow:
    def test_gen_train_infer_eval(self, tmp_path, capsys, monkeypatch):
        monkeypatch.delenv(SEED_ENV, raising=False)
        data, run, pred = tmp_path / "data", tmp_path / "run", tmp_path / "pred"
        assert main(["gen", "--out", str(data), "--n", "6", "--image-size", "16"]) == 0
        assert main(["gen", "--out", str(data), "--n", "3", "--image-size", "16",
                     "--seed", "1", "--split", "val"]) == 0
        assert main(["train", "--out", str(run), "--data-root", str(data), "--epochs", "2",
                     *TINY]) == 0
        summary = last_json(capsys.readouterr().out)
        assert summary["epochs"] == 2
        assert Config.load(run / "config.ini", env=False).epochs == 2
        assert main(["infer", "--checkpoint", str(run / "checkpoint.bin"), "--out",
                     str(pred)]) == 0
        assert len(list((pred / "crf").glob("*.png"))) == 3
        capsys.readouterr()
        assert main(["eval", "--pred", str(pred / "bpm"), "--data-root", str(data),
                     "--out", str(tmp_path / "report.csv")]) == 0
        out = capsys.readouterr().out
        assert out.startswith("class,intersection,union,iou")
        assert 0 <= last_json(out)["miou"] <= 1
        assert (tmp_path / "report.csv").read_text().splitlines()[-1].startswith("mean")

    def test_config_file_and_env_seed(self, tmp_path, capsys, monkeypatch):
        data = tmp_path / "data"
        main(["gen", "--out", str(data), "--n", "4", "--image-size", "16"])
        Config(image_size=16, embed_dim=8, num_blocks=1, token_dim=2, hidden_dim=4,
               head_hidden=4, k=2, epochs=1, seed=3, data_root=str(data)).save(tmp_path / "c.ini")
        monkeypatch.setenv(SEED_ENV, "9")
        assert main(["train", "--config", str(tmp_path / "c.ini"), "--out",
                     str(tmp_path / "run")]) == 0
        assert Config.load(tmp_path / "run" / "config.ini", env=False).seed == 9

    def test_gradcheck_command(self, capsys):
        assert main(["gradcheck", "--seeds", "1"]) == 0
        assert last_json(capsys.readouterr().out)["failures"] == []

    def test_bench_command(self, capsys):
        assert main(["bench-scaling", "--sizes", "2x4", "4x4", "--repeats", "1"]) == 0
        out = capsys.readouterr().out
        assert out.startswith("s,fusion_seconds,attention_seconds")
        assert "fusion_ratio" in last_json(out)

    def test_bench_bad_grid(self):
        with pytest.raises(SystemExit):
            main(["bench-scaling", "--sizes", "64by64"])
