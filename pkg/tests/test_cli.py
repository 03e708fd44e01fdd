import csv
import io
import json

import pytest

from mrnn import training
from mrnn.cli import main
from mrnn.corpus import generate_synthetic_corpus, write_corpus_tsv


def cli(*argv, stdin=""):
    out = io.StringIO()
    code = main([str(a) for a in argv], stdout=out, stdin=io.StringIO(stdin))
    return code, out.getvalue()


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    vocab, train = generate_synthetic_corpus(0, 120, 5)
    _, dev = generate_synthetic_corpus(1, 40, 5, split="dev")
    write_corpus_tsv(d / "train.tsv", train, vocab)
    write_corpus_tsv(d / "dev.tsv", dev, vocab)
    return d


@pytest.fixture(scope="module")
def model(data):
    path = data / "model.json"
    code, _ = cli("train", "--model", "mrnn", "--head", "ordinal", "--classes", 5,
                  "--train", data / "train.tsv", "--dev", data / "train.tsv",
                  "--random-dim", 8, "--epochs", 40, "--patience", 40, "--out", path)
    assert code == 0
    return path


def json_lines(text):
    return [json.loads(line) for line in text.splitlines()]


def test_train_smoke(data, tmp_path):
    out = tmp_path / "m.json"
    code, log = cli("train", "--model", "mrnn", "--hidden", 25, "--activation", "tanh",
                    "--head", "ordinal", "--classes", 5, "--train", data / "train.tsv",
                    "--dev", data / "dev.tsv", "--random-dim", 6, "--epochs", 2, "--out", out)
    assert code == 0
    lines = json_lines(log)
    assert [l["epoch"] for l in lines[:-1]] == [1, 2]
    assert set(lines[-1]) == {"best_epoch", "epochs_run", "dev_metric_name", "best_dev_metric",
                              "snapshot_id"}
    doc = json.loads(out.read_text())
    assert doc["d_h"] == 25 and doc["config"]["hidden"] == 25 and "out" not in doc["config"]


@pytest.mark.parametrize("kind, extra", [("elman", []), ("matrix-space", ["--activation", "identity"])])
def test_train_other_families(kind, extra, tmp_path):
    code, log = cli("train", "--model", kind, "--head", "classify", "--classes", 5,
                    "--synthetic", 40, "--epochs", 1, "--out", tmp_path / "m.json", *extra)
    assert code == 0
    assert json_lines(log)[-1]["dev_metric_name"] == "accuracy"


def test_missing_required_flag_is_usage_error(tmp_path, capsys):
    code, _ = cli("train", "--model", "mrnn", "--head", "ordinal", "--synthetic", 40,
                  "--out", tmp_path / "m.json")
    assert code == 2
    assert "--classes" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["train", "--model", "lstm"],
    ["frobnicate"],
    ["eval", "--data", "x.tsv"],
    ["train", "--model", "mrnn", "--head", "ordinal", "--classes", "5", "--synthetic", "40",
     "--out", "m.json", "--embeddings", "e.txt", "--random-dim", "4"],
    ["train", "--model", "mrnn", "--head", "ordinal", "--classes", "5", "--synthetic", "40",
     "--out", "m.json", "--lr", "-1"],
])
def test_usage_errors(argv):
    assert cli(*argv)[0] == 2


def test_config_file_and_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# run\nmodel = elman\nhead = ordinal\nclasses = 5\nhidden = 3\n"
                   "synthetic = 40\nepochs = 2\nseed = 4\n")
    out = tmp_path / "m.json"
    code, _ = cli("train", "--config", cfg, "--hidden", 5, "--out", out)
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["model_kind"] == "elman"
    assert doc["d_h"] == 5  # flag beats file
    assert doc["config"]["seed"] == 4  # file beats default
    assert doc["config"]["lr"] == 0.05  # default


def test_config_file_unknown_key(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("model = elman\nlearning_rat = 0.1\n")
    assert cli("train", "--config", cfg, "--out", tmp_path / "m.json")[0] == 2


def test_eval_on_memorized_training_set(model, data):
    code, out = cli("eval", "--model-file", model, "--data", data / "train.tsv")
    assert code == 0
    result = json.loads(out)
    assert result["accuracy"] == 1.0 and result["ranking_loss"] == 0.0 and result["n"] == 120


def test_eval_empty_data(model, tmp_path):
    empty = tmp_path / "empty.tsv"
    empty.write_text("# nothing\n")
    assert cli("eval", "--model-file", model, "--data", empty)[0] == 1


def test_eval_class_mismatch(model, data, capsys):
    code, _ = cli("eval", "--model-file", model, "--data", data / "dev.tsv", "--classes", 3)
    assert code == 1
    err = capsys.readouterr().err
    assert "K=5" in err and "3" in err


def test_eval_missing_model(tmp_path, data):
    assert cli("eval", "--model-file", tmp_path / "nope.json", "--data", data / "dev.tsv")[0] == 1


def test_predict(model):
    code, out = cli("predict", "--model-file", model, stdin="terrible\nnot terrible\nvery good\n")
    assert code == 0
    rows = [line.split("\t") for line in out.splitlines()]
    assert [int(r[0]) for r in rows] == [0, 4, 4]
    assert all(len(r[1].split(",")) == 4 for r in rows)
    assert cli("predict", "--model-file", model, stdin="terrible\nnot terrible\nvery good\n")[1] == out


def test_predict_rejects_empty_phrase(model):
    assert cli("predict", "--model-file", model, stdin="good\n\nbad\n")[0] == 1
    code, out = cli("predict", "--model-file", model, stdin="")
    assert code == 0 and out == ""


def test_inspect(model, data, tmp_path):
    out = tmp_path / "h.csv"
    assert cli("inspect", "--model-file", model, "--data", data / "dev.tsv", "--out", out)[0] == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["text", "label", "predicted"] + [f"h{i}" for i in range(1, 9)]
    assert len(rows) == 41 and all(len(r) == 11 for r in rows)
    first = out.read_bytes()
    cli("inspect", "--model-file", model, "--data", data / "dev.tsv", "--out", out)
    assert out.read_bytes() == first


def test_gradcheck_stock(capsys):
    code, out = cli("gradcheck", "--model", "elman", "--instances", 2)
    assert code == 0
    lines = out.splitlines()
    blocks = {(l.split("\t")[1], l.split("\t")[2], l.split("\t")[3]) for l in lines}
    assert len(lines) == len(blocks) == 2 * 3 * 6  # heads x activations x blocks
    assert "below" in capsys.readouterr().err


def test_gradcheck_flags_injected_fault(monkeypatch):
    real = training.example_gradients

    def broken(p, ex, emb, K, prefix=None):
        value, g = real(p, ex, emb, K, prefix)
        if "V" in g.dense:
            g.dense["V"] = 2.0 * g.dense["V"] + 1e-3
        return value, g

    monkeypatch.setattr(training, "example_gradients", broken)
    code, out = cli("gradcheck", "--model", "elman", "--instances", 1)
    assert code == 1
    worst_v = max(float(l.split("\t")[4]) for l in out.splitlines() if l.split("\t")[3] == "V")
    assert worst_v > 1e-2


def test_equivcheck():
    code, out = cli("equivcheck", "--seed", 0)
    assert code == 0 and len(out.splitlines()) == 10
    assert cli("equivcheck", "--perturb", 1e-3)[0] == 1
    assert cli("equivcheck", "--max-len", 1)[0] == 0


def test_failed_run_leaves_no_partial_file(tmp_path, data):
    bad = tmp_path / "bad.tsv"
    bad.write_text("1\tgood\n9\tbad\n")
    out = tmp_path / "m.json"
    code, _ = cli("train", "--model", "elman", "--head", "ordinal", "--classes", 5,
                  "--train", data / "train.tsv", "--dev", bad, "--random-dim", 4, "--out", out)
    assert code == 1
    assert list(tmp_path.iterdir()) == [bad]
