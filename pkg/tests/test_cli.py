import json
from pathlib import Path

import pytest

from sdprel import cli

from corpusgen import LABELS6, TRAIN_FLAGS, build_corpus


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    return build_corpus(tmp_path_factory.mktemp("corpus"))


@pytest.fixture(scope="module")
def run12(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run12")
    rc = cli.run(["train", "--examples", str(corpus["ex12"]),
                  "--variant", "cnn.rand", "--mode", "extract-classify-12",
                  "--out", str(out)] + TRAIN_FLAGS)
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def run6(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run6")
    rc = cli.run(["train", "--examples", str(corpus["ex6"]),
                  "--variant", "cnn.rand", "--mode", "classify-6",
                  "--out", str(out)] + TRAIN_FLAGS)
    assert rc == 0
    return out


# ------------------------------------------------------------ encode/ingest

def test_encode_outputs(corpus):
    lines = corpus["sents"].read_text(encoding="utf-8").splitlines()
    assert len(lines) == 12 * 5  # title + three statements + the pair sentence
    assert lines[0] == "A study of X00.7 design ."
    first_map = json.loads(corpus["map"].read_text(encoding="utf-8").splitlines()[0])
    assert first_map == {"entity_id": "X00.7", "doc_id": "X00",
                         "sentence_index": 0, "surface_tokens": ["neural", "parser"]}


def test_ingest_six_mode(corpus):
    rows = [json.loads(l) for l in corpus["ex6"].read_text(encoding="utf-8").splitlines()]
    assert len(rows) == 36  # the cross-sentence relation is dropped
    assert {r["label"] for r in rows} == set(LABELS6)
    assert all("NONE" != r["label"] for r in rows)
    sample = rows[0]
    joined = " ".join(sample["model_tokens"])
    assert "dep:" in joined
    assert "<L>" in sample["model_tokens"] or "<R>" in sample["model_tokens"]
    assert "→" in sample["path_string"] or "←" in sample["path_string"]
    assert not any(r["e1"] == "X00.7" for r in rows)  # dropped, not mislabeled


def test_ingest_twelve_mode_adds_negatives(corpus):
    rows = [json.loads(l) for l in corpus["ex12"].read_text(encoding="utf-8").splitlines()]
    assert len(rows) == 48
    none_rows = [r for r in rows if r["label"] == "NONE"]
    assert len(none_rows) == 12  # one unrelated pair per document
    assert {(r["e1"].split(".")[1], r["e2"].split(".")[1]) for r in none_rows} \
        == {("9", "10")}


def test_stats_json(corpus, capsys):
    rc = cli.run(["stats", "--sents", str(corpus["sents"]),
                  "--map", str(corpus["map"]),
                  "--relations", str(corpus["relations"]),
                  "--mode", "extract-classify-12", "--json"])
    assert rc == 0
    payload = json.loads(capsys.readouterr().out)
    # annotated totals include the cross-sentence USAGE relation
    assert payload["USAGE"]["total"] == 7
    assert payload["RESULT"]["total"] == 6
    assert payload["RESULT"]["reverse"] == 6
    assert payload["COMPARE"]["reverse"] == 0
    assert payload["NONE"]["total"] == 12
    assert payload["_cross_sentence"] == 1


def test_stats_table(corpus, capsys):
    rc = cli.run(["stats", "--sents", str(corpus["sents"]),
                  "--map", str(corpus["map"]),
                  "--relations", str(corpus["relations"])])
    assert rc == 0
    out = capsys.readouterr().out
    for label in LABELS6:
        assert label in out


# ------------------------------------------------------------ train artifacts

def test_train_writes_run_directory(run12):
    for name in ["report.json", "predictions.tsv", "folds.json", "run_config.json"]:
        assert (run12 / name).exists(), name
    for r in range(3):
        assert (run12 / f"model_fold{r}.sdprel").exists()
    report = json.loads((run12 / "report.json").read_text(encoding="utf-8"))
    assert report["variant"] == "cnn.rand"
    assert report["k"] == 3
    assert len(report["classes"]) == 12
    assert "subtask2" in report
    assert "mean_test_macro_f1" in report


def test_run_config_records_resolved_flags(run12):
    config = json.loads((run12 / "run_config.json").read_text(encoding="utf-8"))
    assert config["seed"] == 7
    assert config["folds"] == 3
    assert config["variant"] == "cnn.rand"
    assert config["widths"] == [2, 3]
    assert config["mode"] == "extract-classify-12"
    assert "version" in config


def test_predictions_cover_every_example(run12, corpus):
    lines = (run12 / "predictions.tsv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "doc_id\te1\te2\tlabel"
    assert len(lines) == 49
    keys = {tuple(l.split("\t")[:3]) for l in lines[1:]}
    assert len(keys) == 48  # no duplicates, one row per example


# ------------------------------------------------------------ eval

def test_eval_scores_train_predictions(run12, corpus, capsys):
    rc = cli.run(["eval", "--examples", str(corpus["ex12"]),
                  "--predictions", str(run12 / "predictions.tsv"),
                  "--mode", "extract-classify-12", "--json"])
    assert rc == 0
    payload = json.loads(capsys.readouterr().out)
    assert 0.0 <= payload["overall"]["macro_f1"] <= 1.0
    assert "extraction" in payload["subtask2"]
    report = json.loads((run12 / "report.json").read_text(encoding="utf-8"))
    assert payload["overall"]["macro_f1"] == pytest.approx(
        report["overall"]["macro_f1"])


def test_eval_rejects_missing_prediction(run12, corpus, tmp_path, capsys):
    lines = (run12 / "predictions.tsv").read_text(encoding="utf-8").splitlines()
    short = tmp_path / "short.tsv"
    short.write_text("\n".join(lines[:-1]) + "\n", encoding="utf-8")
    rc = cli.run(["eval", "--examples", str(corpus["ex12"]),
                  "--predictions", str(short),
                  "--mode", "extract-classify-12"])
    assert rc == 2
    capsys.readouterr()


# ------------------------------------------------------------ predict/ensemble

def test_predict_single_model(run12, corpus, tmp_path):
    out = tmp_path / "pred"
    rc = cli.run(["predict", "--model", str(run12 / "model_fold1.sdprel"),
                  "--examples", str(corpus["ex12"]), "--out", str(out)])
    assert rc == 0
    lines = (out / "predictions.tsv").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 49


def test_ensemble_majority_and_single(run12, corpus, tmp_path):
    models = [str(run12 / f"model_fold{r}.sdprel") for r in range(3)]
    mv = tmp_path / "mv"
    rc = cli.run(["ensemble", "--models", *models,
                  "--examples", str(corpus["ex12"]), "--out", str(mv)])
    assert rc == 0
    assert (mv / "predictions.tsv").exists()

    single = tmp_path / "single"
    rc = cli.run(["ensemble", "--models", *models, "--vote", "single:1",
                  "--examples", str(corpus["ex12"]), "--out", str(single)])
    assert rc == 0
    direct = tmp_path / "direct"
    rc = cli.run(["predict", "--model", models[1],
                  "--examples", str(corpus["ex12"]), "--out", str(direct)])
    assert rc == 0
    assert (single / "predictions.tsv").read_bytes() \
        == (direct / "predictions.tsv").read_bytes()


def test_ensemble_rejects_mixed_label_sets(run12, run6, corpus, tmp_path, capsys):
    rc = cli.run(["ensemble",
                  "--models", str(run12 / "model_fold0.sdprel"),
                  str(run6 / "model_fold0.sdprel"),
                  "--examples", str(corpus["ex12"]), "--out", str(tmp_path / "x")])
    assert rc == 2
    assert "label set" in capsys.readouterr().err


def test_ensemble_vote_validation(run12, corpus, tmp_path, capsys):
    models = ["--models", str(run12 / "model_fold0.sdprel")]
    base = models + ["--examples", str(corpus["ex12"])]
    assert cli.run(["ensemble", *base, "--vote", "best",
                    "--out", str(tmp_path / "a")]) == 1
    assert cli.run(["ensemble", *base, "--vote", "single:9",
                    "--out", str(tmp_path / "b")]) == 1
    capsys.readouterr()


# ------------------------------------------------------------ exit codes

def test_unknown_variant_lists_choices(corpus, tmp_path, capsys):
    rc = cli.run(["train", "--examples", str(corpus["ex6"]),
                  "--variant", "cnn.bogus", "--out", str(tmp_path / "x")])
    assert rc == 1
    err = capsys.readouterr().err
    for name in ["cnn.rand", "cnn.wiki-w2v", "cnn.acl-w2v", "cnn.multi.rand",
                 "cnn.multi.wiki-w2v", "cnn.multi.acl-w2v",
                 "cnn.multi.wiki-w2v.rand", "cnn.multi.acl-w2v.rand"]:
        assert name in err


def test_pretrained_variant_needs_embeddings(corpus, tmp_path, capsys):
    rc = cli.run(["train", "--examples", str(corpus["ex6"]),
                  "--variant", "cnn.wiki-w2v", "--out", str(tmp_path / "x")])
    assert rc == 1
    assert "embeddings" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(capsys):
    assert cli.run(["train", "--bogus-flag", "1"]) == 1
    capsys.readouterr()


def test_missing_input_file_is_data_error(tmp_path, capsys):
    rc = cli.run(["ingest", "--sents", str(tmp_path / "none.txt"),
                  "--map", str(tmp_path / "none.jsonl"),
                  "--conll", str(tmp_path / "none.conll"),
                  "--relations", str(tmp_path / "none.rel"),
                  "--out", str(tmp_path / "out.jsonl")])
    assert rc == 2
    capsys.readouterr()


def test_malformed_abstracts_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.xml"
    bad.write_text('<text id="A1"><title>No <entity id="A1.1">end'
                   "</title></text>\n", encoding="utf-8")
    rc = cli.run(["encode", "--abstracts", str(bad),
                  "--out-sents", str(tmp_path / "s.txt"),
                  "--out-map", str(tmp_path / "m.jsonl")])
    assert rc == 2
    capsys.readouterr()


def test_no_subcommand_is_usage_error(capsys):
    assert cli.run([]) == 1
    capsys.readouterr()


def test_version_flag(capsys):
    assert cli.run(["--version"]) == 0
    assert capsys.readouterr().out.startswith("sdprel ")


# ------------------------------------------------------------ config files

def test_config_file_matches_explicit_flags(corpus, tmp_path):
    config = tmp_path / "train.cfg"
    config.write_text(
        "folds=3\nseed=7\ndim=16\nwidths=2 3\nfilters=8\n"
        "max_epochs=3\npatience=3\nbatch_size=16\n", encoding="utf-8")
    from_file = tmp_path / "from_file"
    rc = cli.run(["train", "--examples", str(corpus["ex6"]),
                  "--variant", "cnn.rand", "--config", str(config),
                  "--out", str(from_file)])
    assert rc == 0
    explicit = tmp_path / "explicit"
    rc = cli.run(["train", "--examples", str(corpus["ex6"]),
                  "--variant", "cnn.rand", "--out", str(explicit)] + TRAIN_FLAGS)
    assert rc == 0
    assert (from_file / "report.json").read_bytes() \
        == (explicit / "report.json").read_bytes()
    assert (from_file / "predictions.tsv").read_bytes() \
        == (explicit / "predictions.tsv").read_bytes()


def test_explicit_flag_overrides_config(tmp_path):
    config = tmp_path / "gc.cfg"
    config.write_text("samples=40\nseed=3\n", encoding="utf-8")
    out = tmp_path / "gc"
    rc = cli.run(["gradcheck", "--config", str(config), "--samples", "60",
                  "--out", str(out)])
    assert rc == 0
    stored = json.loads((out / "run_config.json").read_text(encoding="utf-8"))
    assert stored["samples"] == 60  # explicit flag wins
    assert stored["seed"] == 3     # config value used where not overridden


# ------------------------------------------------------------ gradcheck

def test_gradcheck_passes(tmp_path, capsys):
    out = tmp_path / "gc"
    rc = cli.run(["gradcheck", "--seed", "0", "--out", str(out)])
    assert rc == 0
    report = json.loads((out / "gradcheck.json").read_text(encoding="utf-8"))
    assert report["passed"] is True
    assert report["checked"] >= 1
    assert report["worst_rel_err"] <= report["tolerance"]
    capsys.readouterr()
