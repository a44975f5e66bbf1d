import json

import pytest

from m2mclip.cli import RunConfig, build_parser, resolve_config, run
from m2mclip.encoders import count_parameters
from m2mclip.errors import UsageError
from m2mclip.training import load_checkpoint

TINY = {"image_size": 16, "width": 16, "depth": 2, "heads": 2, "embed_dim": 8, "ffn_dim": 16, "batch_size": 8}


def _main(capsys, *argv):
    code = run(list(argv))
    out = capsys.readouterr().out
    return code, (json.loads(out) if code == 0 else None)


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "tiny.json").write_text(json.dumps(TINY))
    return tmp_path


def test_gen_data_is_reproducible(workdir, capsys):
    for out in ("a", "b"):
        code, res = _main(capsys, "gen-data", "--n", "100", "--views", "main_object,background", "--seed", "7", "--out", out, "--image-size", "16")
        assert code == 0 and res["n"] == 100
    assert (workdir / "a/manifest.jsonl").read_bytes() == (workdir / "b/manifest.jsonl").read_bytes()


@pytest.fixture
def trained(workdir, capsys):
    _main(capsys, "gen-data", "--n", "24", "--views", "main_object,background", "--seed", "3", "--out", "data", "--image-size", "16")
    code, res = _main(capsys, "train", "--config", "tiny.json", "--manifest", "data/manifest.jsonl", "--out", "run", "--steps", "2", "--variant", "mlp")
    assert code == 0 and res["steps"] == 2
    return workdir


def test_train_writes_checkpoint_and_log(trained):
    assert (trained / "run/model.ckpt").read_bytes().startswith(b"M2MCKPT1")
    assert (trained / "run/train_log.csv").read_text().splitlines()[0] == "step,epoch,loss,tau,lr"


def test_eval_reports_schema(trained, capsys):
    reports = {}
    for fusion in ("average", "max", "norm_max"):
        code, rep = _main(capsys, "eval", "--checkpoint", "run/model.ckpt", "--manifest", "data/manifest.jsonl", "--fusion", fusion, "--out", fusion)
        assert code == 0
        assert rep == json.loads((trained / fusion / "metrics.json").read_text())
        for direction in ("I2T", "T2I"):
            assert set(rep[direction]) == {"R@1", "R@5", "R@10"}
        reports[fusion] = rep
    code, rep = _main(capsys, "eval", "--checkpoint", "run/model.ckpt", "--manifest", "data/manifest.jsonl", "--branches", "1")
    assert code == 0 and rep["branches"] == [1]
    assert run(["eval", "--checkpoint", "run/model.ckpt", "--manifest", "data/manifest.jsonl", "--branches", "5"]) == 2


def test_inspect_matches_parameter_formula(trained, capsys):
    code, rep = _main(capsys, "inspect", "--checkpoint", "run/model.ckpt")
    cfg = load_checkpoint(trained / "run/model.ckpt").model_config
    assert code == 0 and rep["parameters"] == count_parameters(cfg)
    assert rep["parameters"]["branch_overhead"] == (2 - 1) * 2 * (16 * 16 + 16)


def test_viz_writes_files(trained, capsys):
    code, rep = _main(capsys, "viz", "--checkpoint", "run/model.ckpt", "--image", "data/images/000000.ppm", "--branch", "1", "--out", "viz")
    assert code == 0 and len(rep["mask"]) == 4
    assert (trained / "viz/attention_branch1.pgm").is_file()


def test_stats_with_control(workdir, capsys):
    _main(capsys, "gen-data", "--n", "30", "--seed", "1", "--out", "five", "--image-size", "16")
    code, rep = _main(capsys, "stats", "--manifest", "five/manifest.jsonl", "--control", "--out", "s")
    assert code == 0
    assert rep["views"]["mean_similarity"] < rep["near_duplicate_control"]["mean_similarity"]
    assert set(rep["views"]["words"]) == {"details", "nouns", "main_object", "background", "style"}


def test_usage_errors_exit_1(workdir, capsys):
    (workdir / "typo.json").write_text(json.dumps({"widht": 3}))
    assert run(["train", "--config", "typo.json"]) == 1
    assert run([]) == 1
    assert run(["fly"]) == 1
    assert run(["eval", "--fusion", "median"]) == 1
    assert run(["inspect"]) == 1
    assert "usage" in capsys.readouterr().err


def test_runtime_errors_exit_2(workdir):
    assert run(["inspect", "--checkpoint", "missing.ckpt"]) == 2
    (workdir / "junk.ckpt").write_bytes(b"garbage")
    assert run(["inspect", "--checkpoint", "junk.ckpt"]) == 2


def test_flags_override_config_file(workdir):
    (workdir / "c.json").write_text(json.dumps({"seed": 3, "width": 32}))
    cfg = RunConfig.from_file(workdir / "c.json")
    assert cfg.seed == 3 and cfg.width == 32
    args = build_parser().parse_args(["train", "--config", str(workdir / "c.json"), "--seed", "9"])
    merged = resolve_config(args)
    assert merged.seed == 9 and merged.width == 32
    with pytest.raises(UsageError):
        (workdir / "d.json").write_text("[1]")
        RunConfig.from_file(workdir / "d.json")
