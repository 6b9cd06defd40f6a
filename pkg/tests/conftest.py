import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import helpers  # noqa: E402
from icdattn.corpus import split_dataset  # noqa: E402
from icdattn.numerics import Rng  # noqa: E402
from icdattn.synthetic import (NoiseParams, generate_synthetic_corpus,  # noqa: E402
                               synthetic_pretrained_vectors)

# Noisy desk-scale corpus: 10 codes, 500/100/100 records, 5% typos plus
# synonyms, abbreviations, distractors and combination records.
GEN_CODES, GEN_RECORDS, GEN_SEED = 10, 700, 3
GEN_FRACTIONS = (5 / 7, 1 / 7, 1 / 7)
GEN_EPOCHS = 20
TRAIN_SEED = 1


@pytest.fixture(scope="session")
def noisy_corpus():
    recs, codes = generate_synthetic_corpus(GEN_CODES, GEN_RECORDS,
                                            NoiseParams.realistic(0.05), seed=GEN_SEED)
    splits = split_dataset(recs, GEN_FRACTIONS, seed=GEN_SEED)
    vectors = synthetic_pretrained_vectors(200, Rng(GEN_SEED))
    return recs, codes, splits, vectors


@pytest.fixture(scope="session")
def ablation_rows(noisy_corpus):
    """All six architecture rows trained once on the noisy corpus (several minutes)."""
    from icdattn.analysis import ABLATIONS, run_ablation_suite
    from icdattn.model import TrainConfig
    _, codes, splits, vectors = noisy_corpus
    rows = []
    for label, _ in ABLATIONS:
        t0 = time.time()
        row, = run_ablation_suite(TrainConfig(epochs=GEN_EPOCHS, seed=TRAIN_SEED), splits, codes,
                                  pretrained=vectors, rows=[label])
        row.elapsed = time.time() - t0
        rows.append(row)
    return rows


@pytest.fixture(scope="session")
def clean_corpus():
    return generate_synthetic_corpus(5, 50, NoiseParams(), seed=7)


@pytest.fixture(scope="session")
def clean_soft_row():
    """Soft-attention row trained on a noise-free 5-code corpus (~30 s)."""
    from icdattn.analysis import run_ablation_suite
    from icdattn.model import TrainConfig
    recs, codes = generate_synthetic_corpus(5, 200, NoiseParams(), seed=7)
    splits = split_dataset(recs, (0.7, 0.15, 0.15), seed=7)
    row, = run_ablation_suite(TrainConfig(epochs=30, seed=TRAIN_SEED), splits, codes,
                              rows=["Soft-attention Model"])
    return row, splits, codes


def pytest_terminal_summary(terminalreporter):
    if helpers.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in helpers.RESULTS:
            terminalreporter.write_line(line)
