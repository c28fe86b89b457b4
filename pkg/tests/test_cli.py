import json

import pytest

from sedmil.cli import main

SPEC = {
    "class_names": ["a", "b"],
    "d": 4,
    "n_frames": 40,
    "splits": {"train": {"a": 8, "b": 8, "a;b": 4}, "validation": {"a": 3, "b": 3}, "test": {"a": 3, "b": 2, "a;b": 1}},
    "durations": {"a": [0.2, 0.05], "b": [0.3, 0.1]},
    "seed": 1,
}


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.json").write_text(json.dumps(SPEC))
    assert main(["gen", str(root / "spec.json"), "--out", str(root / "ds")]) == 0
    return root


def train_args(data, out, *extra):
    return ["train", "--data", str(data / "ds"), "--out", str(out), "--max-epochs", "3", "--batch", "8", *extra]


def test_gen_is_reproducible(data, tmp_path):
    assert main(["gen", str(data / "spec.json"), "--out", str(tmp_path / "again"), "--seed", "1"]) == 0
    for name in ("train.csv", "train_strong.csv", "features/train_00003.txt"):
        assert (tmp_path / "again" / name).read_bytes() == (data / "ds" / name).read_bytes()


def test_gen_missing_spec(tmp_path, capsys):
    assert main(["gen", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x")]) == 2
    assert "not found" in capsys.readouterr().err


@pytest.mark.parametrize(
    "flags, message",
    [
        (["--pooling", "egmp", "--sds"], "SDS requires ATP"),
        (["--df", "df1", "--pooling", "igap"], "eatp"),
        (["--m", "1.5", "--df", "dfw"], "m must lie"),
    ],
)
def test_invalid_combinations_exit_2(data, tmp_path, capsys, flags, message):
    assert main(train_args(data, tmp_path / "run", *flags)) == 2
    assert message in capsys.readouterr().err
    assert not (tmp_path / "run").exists()


def test_m_one_warns(data, tmp_path, caplog):
    assert main(train_args(data, tmp_path / "run", "--df", "dfw", "--m", "1")) == 0
    assert "DF degenerates to general feature" in caplog.text


def test_train_twice_is_byte_identical(data, tmp_path):
    flags = ("--pooling", "eatp", "--sds", "--df", "df1", "--seed", "3", "--encoder", "mlp", "--hidden", "5")
    assert main(train_args(data, tmp_path / "one", *flags)) == 0
    assert main(train_args(data, tmp_path / "two", *flags)) == 0
    for name in ("checkpoint.txt", "history.csv", "allocation.txt"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()


def test_config_file_and_flag_precedence(data, tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"pooling": "igsp", "lr": 0.01}))
    assert main(train_args(data, tmp_path / "run", "--config", str(tmp_path / "cfg.json"), "--lr", "0.002")) == 0
    config = json.loads((tmp_path / "run" / "checkpoint.txt").read_text().splitlines()[1][len("config "):])
    assert config["pooling"] == "igsp" and config["lr"] == 0.002
    (tmp_path / "bad.json").write_text(json.dumps({"colour": "red"}))
    assert main(train_args(data, tmp_path / "run", "--config", str(tmp_path / "bad.json"))) == 2


@pytest.fixture(scope="module")
def trained(data):
    out = data / "run"
    assert main(["train", "--data", str(data / "ds"), "--out", str(out), "--max-epochs", "3", "--batch", "8", "--sds"]) == 0
    return out / "checkpoint.txt"


def test_predict_and_eval(data, trained, tmp_path, capsys):
    pred = tmp_path / "pred"
    assert main(["predict", "--checkpoint", str(trained), "--data", str(data / "ds"), "--out", str(pred),
                 "--beta", "1/3", "--dump-frames", "--dump-features"]) == 0
    for name in ("clips.csv", "events.csv", "frame_probs.csv", "features.csv"):
        assert (pred / name).exists()
    assert main(["predict", "--checkpoint", str(trained), "--data", str(data / "ds"), "--out", str(tmp_path / "fixed"),
                 "--fixed-window", "27"]) == 0
    assert "windows [27, 27]" in capsys.readouterr().out

    weak = tmp_path / "weak.csv"
    rows = (data / "ds" / "test.csv").read_text().splitlines()[1:]
    weak.write_text("clip_id,labels\n" + "".join(f"{r.split(',')[0]},{r.split(',')[2]}\n" for r in rows))
    assert main(["eval", "--ref-strong", str(data / "ds" / "test_strong.csv"), "--ref-weak", str(weak),
                 "--pred-events", str(pred / "events.csv"), "--pred-clips", str(pred / "clips.csv"),
                 "--classes", str(data / "ds" / "classes.txt"), "--csv", str(tmp_path / "r.csv")]) == 0
    out = capsys.readouterr()
    assert "event-based" in out.out and out.err == ""
    assert (tmp_path / "r.csv").read_text().startswith("task,class,precision,recall,f1,tp,fp,fn\n")


def test_eval_perfect_and_empty(data, tmp_path, capsys):
    ds = data / "ds"
    weak = tmp_path / "weak.csv"
    rows = (ds / "test.csv").read_text().splitlines()[1:]
    weak.write_text("clip_id,labels\n" + "".join(f"{r.split(',')[0]},{r.split(',')[2]}\n" for r in rows))
    base = ["eval", "--ref-strong", str(ds / "test_strong.csv"), "--ref-weak", str(weak), "--classes", str(ds / "classes.txt")]

    assert main(base + ["--pred-events", str(ds / "test_strong.csv"), "--pred-clips", str(weak), "--csv", str(tmp_path / "p.csv")]) == 0
    f1s = [line.split(",")[4] for line in (tmp_path / "p.csv").read_text().splitlines()[1:]]
    assert set(f1s) == {"1.000000"}

    empty_events, empty_weak = tmp_path / "e.csv", tmp_path / "w.csv"
    empty_events.write_text("clip_id,class,onset_s,offset_s\n")
    empty_weak.write_text("clip_id,labels\n")
    assert main(base + ["--pred-events", str(empty_events), "--pred-clips", str(empty_weak), "--csv", str(tmp_path / "z.csv")]) == 0
    recalls = [line.split(",")[3] for line in (tmp_path / "z.csv").read_text().splitlines()[1:] if ",macro," not in line]
    assert set(recalls) == {"0.000000"}


def test_eval_hand_example(tmp_path, capsys):
    (tmp_path / "classes.txt").write_text("a\n")
    (tmp_path / "ref.csv").write_text("clip_id,class,onset_s,offset_s\nx,a,1.0,2.0\ny,a,1.0,2.0\n")
    (tmp_path / "pred.csv").write_text("clip_id,class,onset_s,offset_s\nx,a,1.1,2.1\ny,a,1.3,2.0\n")
    (tmp_path / "weak.csv").write_text("clip_id,labels\nx,a\ny,a\n")
    args = ["eval", "--ref-strong", str(tmp_path / "ref.csv"), "--ref-weak", str(tmp_path / "weak.csv"),
            "--pred-events", str(tmp_path / "pred.csv"), "--pred-clips", str(tmp_path / "weak.csv"),
            "--classes", str(tmp_path / "classes.txt"), "--csv", str(tmp_path / "r.csv")]
    assert main(args) == 0
    assert "event,a,0.500000,0.500000,0.500000,1,1,1" in (tmp_path / "r.csv").read_text()

    (tmp_path / "pred.csv").write_text("clip_id,class,onset_s,offset_s\nx,zebra,1.1,2.1\n")
    assert main(args) == 2
    assert "zebra" in capsys.readouterr().err


def test_predict_class_mismatch(data, trained, tmp_path):
    other = tmp_path / "other"
    spec = dict(SPEC, class_names=["a", "c"], durations={"a": [0.2, 0.05], "c": [0.3, 0.1]},
                splits={"validation": {"a": 1, "c": 1}, "test": {"a": 1}})
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    assert main(["gen", str(tmp_path / "spec.json"), "--out", str(other)]) == 0
    assert main(["predict", "--checkpoint", str(trained), "--data", str(other), "--out", str(tmp_path / "p")]) == 2


def test_predict_empty_split(data, trained, tmp_path):
    (data / "ds" / "empty.csv").write_text("clip_id,feature_path,labels\n")
    out = tmp_path / "p"
    assert main(["predict", "--checkpoint", str(trained), "--data", str(data / "ds"), "--split", "empty", "--out", str(out)]) == 0
    assert (out / "events.csv").read_text() == "clip_id,class,onset_s,offset_s\n"
    assert (out / "clips.csv").read_text() == "clip_id,labels\n"
