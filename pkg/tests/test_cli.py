import hashlib
import json
import subprocess
import sys

import pytest

from icdattn import cli
from icdattn.analysis import ABLATIONS
from icdattn.corpus import load_code_table, load_records, write_code_table, write_manifest, write_records
from icdattn.training import save_checkpoint

from test_corpus import NEONATE_ITEMS, NEONATE_NOTE

TINY = ["--hidden", "8", "--char-embed", "4"]


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def synth_dir(tmp_path, capsys):
    d = tmp_path / "data"
    code, _, _ = run(capsys, "synth", "--codes", 3, "--records", 30, "--seed", 4, "--typo-rate",
                     0.03, "--realistic", "--vectors-dim", 6, "--out", d)
    assert code == 0
    return d


@pytest.fixture
def tiny_ckpt(synth_dir, tmp_path, capsys):
    ck = tmp_path / "m.ckpt"
    code, _, _ = run(capsys, "train", "--data", synth_dir, "--epochs", 1, *TINY, "--out", ck)
    assert code == 0
    return ck


@pytest.fixture(scope="module")
def perfect(clean_soft_row, tmp_path_factory):
    row, splits, codes = clean_soft_row
    d = tmp_path_factory.mktemp("perfect")
    write_records(splits.train + splits.validation + splits.test, d / "records.jsonl")
    write_code_table(codes, d / "codes.tsv")
    write_manifest(splits, d / "splits.json")
    save_checkpoint(row.checkpoint, d / "model.ckpt")
    return d


# ------------------------------------------------------------ extract

def test_extract_neonate_note(tmp_path, capsys):
    notes = tmp_path / "notes.jsonl"
    notes.write_text(json.dumps({"hadm_id": "189797", "text": NEONATE_NOTE}) + "\n"
                     + json.dumps({"hadm_id": "2", "text": "no diagnosis here"}) + "\n")
    code, out, _ = run(capsys, "extract", "--notes", notes, "--out", tmp_path / "r.jsonl")
    assert code == 0 and "records kept: 1" in out and "discarded: 1" in out
    recs = load_records(tmp_path / "r.jsonl")
    assert len(recs) == 1 and recs[0].descriptions == NEONATE_ITEMS


def test_extract_empty_and_malformed(tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    code, out, _ = run(capsys, "extract", "--notes", empty, "--out", tmp_path / "o.jsonl")
    assert code == 0 and "records kept: 0" in out
    bad = tmp_path / "bad.jsonl"
    bad.write_text(json.dumps({"hadm_id": "1", "text": NEONATE_NOTE}) + "\n{oops\n")
    code, _, err = run(capsys, "extract", "--notes", bad, "--out", tmp_path / "o.jsonl", "--strict")
    assert code == 2 and ":2:" in err
    code, out, _ = run(capsys, "extract", "--notes", bad, "--out", tmp_path / "o.jsonl")
    assert code == 0 and "records kept: 1" in out
    code, _, _ = run(capsys, "extract", "--notes", tmp_path / "missing.jsonl", "--out", tmp_path / "o")
    assert code == 2


def test_extract_top_k(tmp_path, capsys):
    notes = tmp_path / "n.jsonl"
    notes.write_text("".join(json.dumps({"hadm_id": str(i), "descriptions": ["x"], "codes": c}) + "\n"
                             for i, c in enumerate([["A", "B"], ["A"], ["C"]])))
    (tmp_path / "codes.tsv").write_text("A\tAlpha\nB\tBeta\nC\tGamma\n")
    code, _, _ = run(capsys, "extract", "--notes", notes, "--out", tmp_path / "r.jsonl",
                     "--codes", tmp_path / "codes.tsv", "--top-k", 1,
                     "--codes-out", tmp_path / "top.tsv", "--drop-unlabeled")
    assert code == 0
    assert [c.code for c in load_code_table(tmp_path / "top.tsv")] == ["A"]
    assert [r.hadm_id for r in load_records(tmp_path / "r.jsonl")] == ["0", "1"]


# ------------------------------------------------------------ synth / split / stats

def digest(d):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.iterdir())}


def test_synth_reproducible(tmp_path, capsys):
    args = ["synth", "--codes", 5, "--records", 50, "--seed", 7, "--typo-rate", 0.05]
    assert run(capsys, *args, "--out", tmp_path / "a")[0] == 0
    assert run(capsys, *args, "--out", tmp_path / "b")[0] == 0
    assert digest(tmp_path / "a") == digest(tmp_path / "b")
    assert sorted(digest(tmp_path / "a")) == ["codes.tsv", "records.jsonl", "splits.json",
                                               "vectors.txt"]


def test_synth_no_typos_gives_titles(tmp_path, capsys):
    assert run(capsys, "synth", "--codes", 5, "--records", 20, "--typo-rate", 0,
               "--out", tmp_path)[0] == 0
    titles = {c.code: c.long_title for c in load_code_table(tmp_path / "codes.tsv")}
    for r in load_records(tmp_path / "records.jsonl"):
        assert sorted(r.descriptions) == sorted(titles[c] for c in r.codes)


def test_synth_bad_params(tmp_path, capsys):
    code, _, err = run(capsys, "synth", "--codes", 5, "--records", 1, "--out", tmp_path)
    assert code == 1 and "n_records" in err


def test_split_and_stats(synth_dir, tmp_path, capsys):
    code, out, _ = run(capsys, "split", "--records", synth_dir / "records.jsonl",
                       "--out", tmp_path / "m.json", "--fractions", "0.8,0.1,0.1")
    assert code == 0 and out.strip() == "train 24  validation 3  test 3"
    code, out, _ = run(capsys, "stats", "--records", synth_dir / "records.jsonl")
    assert code == 0 and out.startswith("histogram,key,count")
    assert run(capsys, "split", "--records", synth_dir / "records.jsonl", "--out", "x",
               "--fractions", "0.5,0.5")[0] == 1


# ------------------------------------------------------------ train

def test_train_defaults_are_reference_hyperparameters():
    args = cli.build_parser().parse_args(["train", "--data", "d", "--out", "o"])
    assert (args.lr, args.batch, args.hidden, args.dropout) == (0.001, 10, 200, 0.5)
    assert (args.head, args.encoder, args.score, args.proj_bias) == ("soft", "char-lstm", "dot", False)


def test_train_heads_give_different_checkpoints(synth_dir, tmp_path, capsys):
    paths = {}
    for head in ("hard", "soft"):
        paths[head] = tmp_path / f"{head}.ckpt"
        code, out, _ = run(capsys, "train", "--data", synth_dir, "--head", head, "--epochs", 1,
                           *TINY, "--out", paths[head])
        assert code == 0 and "best epoch" in out
        assert (tmp_path / f"{head}.ckpt.log.csv").exists()
    assert paths["hard"].read_bytes() != paths["soft"].read_bytes()


def test_train_same_seed_same_bytes(synth_dir, tmp_path, capsys):
    for name in ("a", "b"):
        assert run(capsys, "train", "--data", synth_dir, "--epochs", 1, "--seed", 9, *TINY,
                   "--out", tmp_path / name)[0] == 0
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    assert (tmp_path / "a.log.csv").read_bytes() == (tmp_path / "b.log.csv").read_bytes()


def test_train_pretrained_encoder(synth_dir, tmp_path, capsys):
    code, _, err = run(capsys, "train", "--data", synth_dir, "--encoder", "word-embed-pretrained",
                       "--out", tmp_path / "x")
    assert code == 1 and "--pretrained" in err
    code, _, _ = run(capsys, "train", "--data", synth_dir, "--encoder", "word-embed-pretrained",
                     "--pretrained", synth_dir / "vectors.txt", "--epochs", 1, *TINY,
                     "--out", tmp_path / "x")
    assert code == 0


def test_train_missing_data_dir(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--data", tmp_path / "nope", "--out", tmp_path / "m.ckpt")
    assert code == 2
    assert not list(tmp_path.glob("m.ckpt*"))


def test_usage_errors_exit_one(capsys):
    assert run(capsys, "train", "--data", "x", "--out", "y", "--head", "max")[0] == 1
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "predict", "--ckpt", "x")[0] == 1
    assert run(capsys, "--help")[0] == 0


# ------------------------------------------------------------ eval / predict

def test_eval_perfect_model(perfect, capsys):
    args = ["eval", "--ckpt", perfect / "model.ckpt", "--data", perfect, "--split", "test"]
    code, out, _ = run(capsys, *args, "--tune-threshold")
    assert code == 0
    report = json.loads(out)
    assert report["micro_f1"] == 1.0 and report["micro_auc"] == 1.0
    assert "threshold" in report
    assert run(capsys, *args, "--tune-threshold")[1] == out


def test_eval_options(tiny_ckpt, synth_dir, tmp_path, capsys):
    code, out, _ = run(capsys, "eval", "--ckpt", tiny_ckpt, "--data", synth_dir,
                       "--split", "validation", "--threshold", 0.3,
                       "--scores-out", tmp_path / "s.csv")
    assert code == 0 and json.loads(out)["threshold"] == 0.3
    assert (tmp_path / "s.csv").read_text().startswith("hadm_id,")
    code, out, _ = run(capsys, "eval", "--ckpt", tiny_ckpt, "--data", synth_dir,
                       "--per-code-threshold")
    assert code == 0 and len(json.loads(out)["threshold"]) == 3


def test_eval_bad_checkpoint(synth_dir, tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    code, _, err = run(capsys, "eval", "--ckpt", bad, "--data", synth_dir)
    assert code == 2 and "magic" in err


def test_predict_monotone_in_threshold(perfect, capsys):
    assigned = {}
    for t in (0.9, 0.5, 0.2, 0.0):
        code, out, _ = run(capsys, "predict", "--ckpt", perfect / "model.ckpt",
                           "--in", perfect / "records.jsonl", "--threshold", t)
        assert code == 0
        assigned[t] = {json.loads(l)["hadm_id"]: set(json.loads(l)["assigned"])
                       for l in out.splitlines()}
    ts = sorted(assigned, reverse=True)
    for hi, lo in zip(ts, ts[1:]):
        assert all(assigned[hi][k] <= assigned[lo][k] for k in assigned[hi])


def test_predict_threshold_range_and_single_description(tiny_ckpt, tmp_path, capsys):
    inp = tmp_path / "one.jsonl"
    inp.write_text(json.dumps({"hadm_id": "z", "descriptions": ["Acute renal failure"]}) + "\n")
    code, _, err = run(capsys, "predict", "--ckpt", tiny_ckpt, "--in", inp, "--threshold", 1.01)
    assert code == 1 and "[0, 1]" in err
    code, out, _ = run(capsys, "predict", "--ckpt", tiny_ckpt, "--in", inp, "--out", tmp_path / "p")
    assert code == 0
    row = json.loads((tmp_path / "p").read_text())
    assert row["hadm_id"] == "z" and len(row["probabilities"]) == 3
    assert all(0 < p < 1 for p in row["probabilities"].values())


# ------------------------------------------------------------ analysis wrappers

def test_neighbors_k5(tiny_ckpt, synth_dir, capsys):
    code, out, _ = run(capsys, "neighbors", "--ckpt", tiny_ckpt, "--query", "heart", "--k", 5,
                       "--format", "tsv")
    assert code == 0
    rows = [l.split("\t") for l in out.splitlines()]
    assert len(rows) == 5
    d = [float(r[2]) for r in rows]
    assert d == sorted(d)
    code, out, _ = run(capsys, "neighbors", "--ckpt", tiny_ckpt, "--query", "heart failure",
                       "--level", "sentence", "--data", synth_dir, "--k", 2)
    assert code == 0 and out.startswith("heart failure: ")
    assert run(capsys, "neighbors", "--ckpt", tiny_ckpt, "--query", "x", "--level", "sentence")[0] == 1


def test_attn_table_rows_sum_to_one(tiny_ckpt, synth_dir, capsys):
    code, out, _ = run(capsys, "attn-table", "--ckpt", tiny_ckpt,
                       "--in", synth_dir / "records.jsonl", "--format", "tsv")
    assert code == 0
    body = [l.split("\t") for l in out.splitlines() if not l.startswith(("#", "long_title"))]
    assert len(body) == 3
    for row in body:
        assert f"{sum(float(x) for x in row[1:]):.2f}" in ("0.99", "1.00", "1.01")
    code, out, _ = run(capsys, "attn-table", "--ckpt", tiny_ckpt,
                       "--in", synth_dir / "records.jsonl", "--hadm-id", "S000001")
    assert code == 0 and "LONG TITLE OF ICD CODE" in out
    assert run(capsys, "attn-table", "--ckpt", tiny_ckpt, "--in", synth_dir / "records.jsonl",
               "--hadm-id", "nope")[0] == 2


def test_ablate_six_rows(synth_dir, capsys):
    code, out, _ = run(capsys, "ablate", "--data", synth_dir, "--epochs", 1, *TINY, "--format", "tsv")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "model\tf1\tauc_roc\tthreshold"
    assert [l.split("\t")[0] for l in lines[1:]] == [label for label, _ in ABLATIONS]


# ------------------------------------------------------------ process-level

def test_entry_point_help_and_threads(tmp_path):
    res = subprocess.run([sys.executable, "-m", "icdattn.cli", "train", "--help"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    for flag in ("--head", "--encoder", "--pretrained", "--epochs", "--seed", "--lr", "--batch",
                 "--hidden", "--dropout", "--score", "--proj-bias"):
        assert flag in res.stdout
    res = subprocess.run([sys.executable, "-m", "icdattn.cli", "synth", "--codes", "3",
                          "--records", "5", "--out", str(tmp_path)],
                         capture_output=True, text=True, env={"ICD_ATTN_THREADS": "1",
                                                              "PATH": "/usr/bin:/bin"})
    assert res.returncode == 0, res.stderr
