import numpy as np
import pytest

from helpers import TINY_CODES, TINY_RECORDS, tiny_model
from icdattn.analysis import (ABLATIONS, AttentionTable, attention_table, format_ablation_table,
                              format_neighbors, nearest_neighbors, run_ablation_suite)
from icdattn.corpus import AdmissionRecord, split_dataset, tokenize
from icdattn.model import ICDCoder, TrainConfig
from icdattn.numerics import Rng
from icdattn.synthetic import (NoiseParams, generate_synthetic_corpus, lexicon_words,
                               synthetic_pretrained_vectors)


def edit_distance(a, b):
    row = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        prev, row[0] = row[0], i
        for j, cb in enumerate(b, 1):
            prev, row[j] = row[j], min(row[j] + 1, row[j - 1] + 1, prev + (ca != cb))
    return row[-1]


# ------------------------------------------------------------ neighbours

def test_neighbors_sorted_and_query_excluded():
    m = tiny_model("soft", "char-lstm")
    cands = ["renal", "failure", "heart", "Acute", "renal", "kidney"]
    nn = nearest_neighbors("renal", cands, m.desc_encoder, k=3)
    assert len(nn) == 3 and "renal" not in [c for c, _ in nn]
    d = [x for _, x in nn]
    assert d == sorted(d)
    everything = nearest_neighbors("renal", cands, m.desc_encoder, k=50)
    assert len(everything) == 4


def test_identical_content_has_zero_distance():
    m = tiny_model("soft", "char-lstm")
    nn = nearest_neighbors("Acute renal failure", ["Acute  renal failure", "Sepsis"],
                           m.desc_encoder, k=2, level="sentence")
    assert nn[0] == ("Acute  renal failure", 0.0)
    assert format_neighbors("q", nn).startswith("q: Acute  renal failure (0.00)")
    assert format_neighbors("q", nn, "tsv").splitlines()[0] == "q\tAcute  renal failure\t0.00"


def test_neighbor_errors():
    m = tiny_model("soft", "char-lstm")
    with pytest.raises(ValueError):
        nearest_neighbors("x", [], m.desc_encoder)
    with pytest.raises(ValueError):
        nearest_neighbors("x", ["y"], m.desc_encoder, k=0)


def test_typo_variants_find_clean_form(ablation_rows, noisy_corpus):
    """Misspellings seen in training sit near their clean word in hidden space."""
    _, codes, splits, _ = noisy_corpus
    soft = next(r for r in ablation_rows if r.label == "Soft-attention Model")
    enc = soft.checkpoint.model.desc_encoder
    title_words = sorted({w for c in codes for w in tokenize(c.long_title) if len(w) >= 4})
    cands = sorted(set(lexicon_words()) | set(title_words))
    seen = sorted({w for r in splits.train for d in r.descriptions for w in tokenize(d)}
                  - set(cands))
    probes = []
    for v in seen:
        clean = min(title_words, key=lambda w: (edit_distance(v, w), w))
        if len(v) >= 4 and edit_distance(v, clean) == 1:
            probes.append((v, clean))
    assert len(probes) >= 100
    hits = sum(clean in [c for c, _ in nearest_neighbors(v, cands, enc, k=3)]
               for v, clean in probes)
    print(f"typo audit: {hits}/{len(probes)} = {hits / len(probes):.3f}")
    assert hits / len(probes) >= 0.60


# ------------------------------------------------------------ attention tables

def test_single_description_rows_are_one():
    m = tiny_model("soft", "char-lstm")
    t = attention_table(m, TINY_RECORDS[0])
    assert t.mode == "soft-weights"
    assert t.rounded().tolist() == [[1.0], [1.0]]


def test_soft_rows_sum_to_one_and_permute():
    m = tiny_model("soft", "char-lstm")
    r = TINY_RECORDS[2]
    t = attention_table(m, r)
    np.testing.assert_allclose(t.values.sum(1), 1.0, atol=1e-12)
    assert np.all(np.abs(t.rounded().sum(1) - 1.0) <= 0.01 + 1e-9)
    perm = [2, 0, 1]
    t2 = attention_table(m, AdmissionRecord(r.hadm_id, [r.descriptions[i] for i in perm], r.codes))
    np.testing.assert_allclose(t2.values, t.values[:, perm], atol=1e-14)


def test_hard_head_reports_scores():
    m = tiny_model("hard", "char-lstm")
    t = attention_table(m, TINY_RECORDS[2])
    assert t.mode == "hard-scores"
    assert "[hard-scores]" in t.render()


def test_fifty_code_layout():
    recs, codes = generate_synthetic_corpus(50, 60, NoiseParams(), seed=1)
    cfg = TrainConfig(hidden_dim=8, char_embed_dim=4)
    m = ICDCoder.build(cfg, recs, codes)
    rec = AdmissionRecord("x", ["Prematurity at 34 and 5/7 weeks gestation", "Twin # 2",
                                "Status post transitional respiratory distress",
                                "Sepsis ruled out", "Hyperbilirubinemia of prematurity"], set())
    t = attention_table(m, rec)
    assert t.values.shape == (50, 5)
    text = t.render("text").splitlines()
    assert text[1] == "Index  Diagnosis description"
    assert text[2].startswith("1      Prematurity")
    header = text[7]
    assert header.startswith("LONG TITLE OF ICD CODE") and header.split()[-5:] == list("12345")
    body = text[8:]
    assert len(body) == 50
    assert all(line.count("*") == 2 for line in body)
    tsv = t.render("tsv").splitlines()
    assert tsv[6] == "long_title\t1\t2\t3\t4\t5" and len(tsv) == 57


def test_render_marks_row_max():
    t = AttentionTable("soft-weights", ["Code A"], ["x", "y"], np.array([[0.43, 0.57]]))
    assert "*0.57*" in t.render() and "*0.43*" not in t.render()
    with pytest.raises(ValueError):
        t.render("html")


# ------------------------------------------------------------ ablations

def tiny_ablation(seed=0):
    recs, codes = generate_synthetic_corpus(3, 20, NoiseParams.realistic(0.05), seed=2)
    splits = split_dataset(recs, (0.6, 0.2, 0.2), seed=2)
    cfg = TrainConfig(hidden_dim=6, char_embed_dim=3, epochs=1, seed=seed)
    return run_ablation_suite(cfg, splits, codes, pretrained=synthetic_pretrained_vectors(5, Rng(0)))


def test_ablation_rows_labels_and_reproducible():
    a, b = tiny_ablation(), tiny_ablation()
    assert [r.label for r in a] == [label for label, _ in ABLATIONS]
    assert format_ablation_table(a) == format_ablation_table(b)
    assert format_ablation_table(a, "tsv") == format_ablation_table(b, "tsv")
    text = format_ablation_table(a).splitlines()
    assert text[0].startswith("Model Architecture") and text[0].endswith("F1  AUC_ROC")
    assert len(text) == 7
    # only the architecture differs between rows
    cfgs = [r.checkpoint.config for r in a]
    assert {(c.seed, c.epochs, c.lr, c.batch_size, c.hidden_dim) for c in cfgs} == {(0, 1, 0.001, 10, 6)}


def test_ablation_skips_pretrained_without_vectors(caplog):
    recs, codes = generate_synthetic_corpus(3, 20, NoiseParams(), seed=2)
    splits = split_dataset(recs, (0.6, 0.2, 0.2), seed=2)
    cfg = TrainConfig(hidden_dim=6, char_embed_dim=3, epochs=0)
    rows = run_ablation_suite(cfg, splits, codes)
    assert len(rows) == 5 and "skipping" in caplog.text


def test_noise_free_soft_row(clean_soft_row):
    row, _, _ = clean_soft_row
    assert row.report.micro_f1 >= 0.95
