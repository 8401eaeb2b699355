import json
from pathlib import Path

import pytest

from detpp.cli import main, parse_config, UsageError
from detpp.events import load_sequences
from detpp.metrics import evaluate_run
from detpp.train import load_trained

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--process", "markov", "--L", "3", "--t-max", "12", "--n-sequences", "40",
                 "--seed", "4", "--out-dir", str(d)]) == 0
    cfg = d / "run.cfg"
    cfg.write_text("# smoke\nmethod = detpp\nL = 3\nK = 4\nH = 3.0\nhidden_dim = 8\n"
                   f"epochs = 2\nbatch_size = 8\ntrain = {d / 'train.jsonl'}\nval = {d / 'val.jsonl'}\n")
    assert main(["train", "--config", str(cfg), "--checkpoint", str(d / "m.ckpt")]) == 0
    return d


def test_generate_files_and_summary(tmp_path, capsys):
    assert main(["generate", "--process", "hawkes", "--L", "1", "--mu", "1.0", "--t-max", "5",
                 "--n-sequences", "20", "--seed", "2", "--out-dir", str(tmp_path)]) == 0
    summary = json.loads(capsys.readouterr().out)
    for name in ("train", "val", "test"):
        lines = (tmp_path / f"{name}.jsonl").read_text().splitlines()
        assert len(lines) == summary[name]
    first = (tmp_path / "train.jsonl").read_bytes()
    assert main(["generate", "--process", "hawkes", "--L", "1", "--mu", "1.0", "--t-max", "5",
                 "--n-sequences", "20", "--seed", "2", "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "train.jsonl").read_bytes() == first


def test_generate_supercritical_is_usage_error(tmp_path):
    assert main(["generate", "--process", "hawkes", "--L", "1", "--alpha", "3.0",
                 "--out-dir", str(tmp_path)]) == 1


def test_predict_evaluate_matches_in_memory(workdir, capsys):
    pred = workdir / "p.jsonl"
    assert main(["predict", "--checkpoint", str(workdir / "m.ckpt"), "--data", str(workdir / "test.jsonl"),
                 "--out", str(pred)]) == 0
    capsys.readouterr()
    assert main(["evaluate", "--predictions", str(pred), "--data", str(workdir / "test.jsonl"),
                 "--checkpoint", str(workdir / "m.ckpt"), "--seed", "4"]) == 0
    report = json.loads(capsys.readouterr().out)
    model, cal, _ = load_trained(workdir / "m.ckpt")
    direct = evaluate_run(model, load_sequences(workdir / "test.jsonl"), thresholds=cal.thresholds())
    for k, v in direct.as_dict().items():
        assert report[k] == v, k
    assert report["seed"] == 4 and report["config"]["horizon"] == 3.0


def test_predict_is_deterministic(workdir):
    outs = []
    for name in ("a", "b"):
        out = workdir / f"{name}.jsonl"
        main(["predict", "--checkpoint", str(workdir / "m.ckpt"), "--data", str(workdir / "val.jsonl"),
              "--out", str(out)])
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_predict_empty_dataset(workdir, tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    out = tmp_path / "p.jsonl"
    assert main(["predict", "--checkpoint", str(workdir / "m.ckpt"), "--data", str(empty),
                 "--out", str(out)]) == 0
    assert out.read_text() == ""


def test_label_mismatch_is_data_error(workdir, tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "x", "times": [0.0, 1.0], "labels": [0, 7]}\n')
    assert main(["predict", "--checkpoint", str(workdir / "m.ckpt"), "--data", str(bad),
                 "--out", str(tmp_path / "p.jsonl")]) == 2
    assert "bad.jsonl:1" in capsys.readouterr().err


def test_missing_anchor_is_data_error(workdir, tmp_path, capsys):
    out = tmp_path / "p.jsonl"
    main(["predict", "--checkpoint", str(workdir / "m.ckpt"), "--data", str(workdir / "test.jsonl"),
          "--out", str(out)])
    lines = out.read_text().splitlines()
    out.write_text("\n".join(lines[1:]) + "\n")
    assert main(["evaluate", "--predictions", str(out), "--data", str(workdir / "test.jsonl"),
                 "--horizon", "3", "--k", "4"]) == 2
    assert "missing predictions" in capsys.readouterr().err


def test_bad_method_and_config_errors(workdir, tmp_path, capsys):
    assert main(["train", "--train", str(workdir / "train.jsonl"), "--checkpoint", str(tmp_path / "x"),
                 "--set", "method = transformer"]) == 1
    assert "unknown method" in capsys.readouterr().err
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("L = 3\n\nepochs = many\n")
    assert main(["train", "--config", str(cfg)]) == 1
    err = capsys.readouterr().err
    assert "bad.cfg:3" in err and "'epochs'" in err
    with pytest.raises(UsageError, match="<config>:1: unknown key 'colour'"):
        parse_config("colour = red")


def test_unknown_subcommand_exit_code():
    assert main(["fly"]) == 1


def test_resume_continues_log(workdir, tmp_path):
    base = ["--train", str(workdir / "train.jsonl"), "--val", str(workdir / "val.jsonl"),
            "--set", "L = 3", "--set", "K = 4", "--set", "H = 3.0", "--set", "hidden_dim = 8",
            "--set", "calibration_refresh = false"]
    assert main(["train", *base, "--set", "epochs = 3", "--checkpoint", str(tmp_path / "full.ckpt")]) == 0
    assert main(["train", *base, "--set", "epochs = 1", "--checkpoint", str(tmp_path / "half.ckpt")]) == 0
    assert main(["train", "--resume", str(tmp_path / "half.ckpt"), "--set", "epochs = 3",
                 "--checkpoint", str(tmp_path / "resumed.ckpt")]) == 0

    def rows(path):
        lines = Path(str(path) + ".log.csv").read_text().splitlines()
        return [",".join(line.split(",")[:3]) for line in lines]

    assert rows(tmp_path / "resumed.ckpt") == rows(tmp_path / "full.ckpt")


def test_golden_report(capsys):
    # frozen predictions and data: the JSON report must not drift
    assert main(["evaluate", "--predictions", str(DATA / "golden_predictions.jsonl"),
                 "--data", str(DATA / "golden_sequences.jsonl"), "--horizon", "2.0", "--k", "4",
                 "--seed", "0"]) == 0
    assert capsys.readouterr().out == (DATA / "golden_report.json").read_text()
