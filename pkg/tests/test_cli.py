import csv
import io
import json

import pytest

from mslm.cli import main
from mslm.masking import MaskPlan
from mslm.metrics import EvalReport
from mslm.pmi_vocab import PmiVocabulary

TINY = """
[train]
epochs = 2
learning_rate = 0.001

[encoder]
hidden_dim = 16
n_heads = 2
ffn_dim = 32
ed_proj_dim = 8
el_proj_dim = 8
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(d / "data"), "--n-train", "60", "--n-val", "10", "--n-test", "20",
                 "--seed", "2"]) == 0
    (d / "tiny.toml").write_text(TINY)
    return d


def test_stats(workdir, capsys):
    main(["stats", "--dataset", str(workdir / "data" / "manifest.json")])
    stats = json.loads(capsys.readouterr().out)
    assert set(stats) == {"n_sents", "n_classes", "avg_sent_len", "n_ments", "avg_ments", "avg_ments_len"}
    assert stats["n_sents"] == {"train": 60, "val": 10, "test": 20}


def test_pmi_vocab_and_mask(workdir):
    manifest = str(workdir / "data" / "manifest.json")
    vocab = workdir / "vocab.jsonl"
    main(["build-pmi-vocab", "--dataset", manifest, "--min-count", "3", "--out", str(vocab)])
    assert len(PmiVocabulary.load(vocab)) > 0
    for line in vocab.read_text().splitlines():
        assert set(json.loads(line)) == {"tokens", "count", "pmi"}

    plans = workdir / "plans.jsonl"
    main(["mask", "--dataset", manifest, "--strategy", "joint", "--elm-rate", "0.5", "--blm-rate", "0.15",
          "--seed", "4", "--out", str(plans)])
    rows = [json.loads(l) for l in plans.read_text().splitlines()]
    assert len(rows) == 60
    assert {"masked_positions", "kind_per_position", "strategy"} <= set(rows[0])
    assert MaskPlan.from_dict(rows[0]).seq_id == "train-0"
    again = workdir / "plans2.jsonl"
    main(["mask", "--dataset", manifest, "--strategy", "joint", "--elm-rate", "0.5", "--blm-rate", "0.15",
          "--seed", "4", "--out", str(again)])
    assert again.read_bytes() == plans.read_bytes()

    main(["mask", "--dataset", manifest, "--strategy", "pmi", "--rate", "0.3", "--vocab", str(vocab),
          "--out", str(workdir / "pmi.jsonl")])
    assert any(json.loads(l)["masked_positions"] for l in (workdir / "pmi.jsonl").read_text().splitlines())


def test_train_and_evaluate(workdir, capsys):
    run = workdir / "run.toml"
    run.write_text('seed = 3\n[dataset]\nmanifest = "data/manifest.json"\n[mask]\nelm_rate = 0.5\n' + TINY)
    main(["train", "--config", str(run), "--out", str(workdir / "ckpt")])
    ckpt = workdir / "ckpt"
    header = json.loads((ckpt / "config.json").read_text())
    assert header["format_version"] == 1
    report = json.loads((ckpt / "train_report.json").read_text())
    assert {"raw_blm", "clamped_elm", "final_elm", "counts"} <= set(report["weights"])

    out, conf = workdir / "report.json", workdir / "conf.csv"
    main(["evaluate", "--ckpt", str(ckpt), "--dataset", str(workdir / "data" / "manifest.json"),
          "--out", str(out), "--confidence-csv", str(conf), "--stratify"])
    rep = json.loads(out.read_text())
    assert set(rep) == {"em", "macro_f1", "perplexity", "per_class", "config"}
    EvalReport(**rep)
    header_row = conf.read_text().splitlines()[0]
    assert header_row == "seq_id,span_text,gold_class,pred_class,confidence"
    strata = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert strata["short"]["n"] + strata["long"]["n"] == 20


def test_sweep_and_reproduce(workdir, capsys):
    cfg = workdir / "sweep.toml"
    cfg.write_text(f'elm_rates = [0.5, 1.0]\nblm_rates = [0.075]\nseeds = [0]\n'
                   f'[dataset]\nmanifest = "{workdir / "data" / "manifest.json"}"\n' + TINY)
    out = workdir / "results"
    main(["sweep", "--config", str(cfg), "--out", str(out)])
    rows = list(csv.DictReader(io.StringIO((out / "grid.csv").read_text())))
    assert len(rows) == 2 and rows[0]["strategy"] == "joint"
    assert "2 trained" in capsys.readouterr().out
    main(["sweep", "--config", str(cfg), "--out", str(out)])
    assert "0 trained" in capsys.readouterr().out

    cell = next((out / "cells").glob("*.json"))
    assert main(["reproduce", "--cell", str(cell), "--out", str(workdir / "again.json")]) == 0


def test_compare_and_ablate(workdir, capsys):
    manifest = str(workdir / "data" / "manifest.json")
    main(["compare", "--dataset", manifest, "--rates", "0.15", "--seeds", "1",
          "--run-config", str(workdir / "tiny.toml"), "--out", str(workdir / "cmp")])
    table = list(csv.DictReader(io.StringIO((workdir / "cmp" / "compare.csv").read_text())))
    assert [r["strategy"] for r in table] == ["joint", "span", "pmi"]
    budgets = json.loads((workdir / "cmp" / "budgets.json").read_text())
    assert all(b["masked"] <= b["budget"] for b in budgets)

    out = workdir / "ablation.json"
    main(["ablate", "--dataset", manifest, "--elm", "1.0", "--blm", "0.075", "--seeds", "2",
          "--run-config", str(workdir / "tiny.toml"), "--out", str(out)])
    res = json.loads(out.read_text())
    assert len(res["pairs"]) == 2 and all(p["plans_identical"] for p in res["pairs"])


def test_bad_command():
    with pytest.raises(SystemExit):
        main(["nonsense"])
