"""Nearest neighbours in hidden space, attention allocation tables and the
ablation harness."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from .corpus import tokenize
from .encoders import encode_sentence, encode_word
from .evaluation import EvalReport, evaluate

log = logging.getLogger(__name__)


# ------------------------------------------------------------ neighbours

def nearest_neighbors(query: str, candidates, encoder, k: int = 5, level: str = "word"):
    """The ``k`` candidates closest to ``query`` in Euclidean distance.

    ``level="word"`` encodes single words, ``level="sentence"`` tokenizes and
    encodes whole phrases. Candidates equal to the query string are skipped.
    Returns ``[(candidate, distance), ...]`` sorted ascending.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidates given")
    if level == "word":
        enc = lambda s: encode_word(encoder, s)  # noqa: E731
    elif level == "sentence":
        enc = lambda s: encode_sentence(encoder, tokenize(s))  # noqa: E731
    else:
        raise ValueError(f"unknown level {level!r}")
    q = enc(query)
    pool = [c for c in dict.fromkeys(candidates) if c != query]
    dists = [(c, float(np.linalg.norm(enc(c) - q))) for c in pool]
    dists.sort(key=lambda cd: cd[1])
    return dists[:k]


def format_neighbors(query: str, neighbors, fmt: str = "text") -> str:
    if fmt == "tsv":
        return "".join(f"{query}\t{c}\t{d:.2f}\n" for c, d in neighbors)
    return f"{query}: " + ", ".join(f"{c} ({d:.2f})" for c, d in neighbors) + "\n"


# ------------------------------------------------------------ attention tables

@dataclass
class AttentionTable:
    mode: str                 # "soft-weights" or "hard-scores"
    row_labels: list          # code long titles
    descriptions: list
    values: np.ndarray        # (n codes, m descriptions), unrounded

    def rounded(self) -> np.ndarray:
        return np.round(self.values, 2)

    def render(self, fmt: str = "text") -> str:
        vals = self.rounded()
        m = len(self.descriptions)
        if fmt == "tsv":
            lines = ["# mode\t" + self.mode]
            lines += [f"# {j + 1}\t{d}" for j, d in enumerate(self.descriptions)]
            lines.append("long_title\t" + "\t".join(str(j + 1) for j in range(m)))
            for label, row in zip(self.row_labels, vals):
                lines.append(label + "\t" + "\t".join(f"{v:.2f}" for v in row))
            return "\n".join(lines) + "\n"
        if fmt != "text":
            raise ValueError(f"unknown format {fmt!r}")
        out = [f"[{self.mode}]", "Index  Diagnosis description"]
        out += [f"{j + 1:<6} {d}" for j, d in enumerate(self.descriptions)]
        width = max(len("LONG TITLE OF ICD CODE"), *(len(r) for r in self.row_labels))
        cell = 8
        out.append("LONG TITLE OF ICD CODE".ljust(width) + "".join(
            str(j + 1).rjust(cell) for j in range(m)))
        for label, raw, row in zip(self.row_labels, self.values, vals):
            best = int(np.argmax(raw))
            cells = [(f"*{v:.2f}*" if j == best else f"{v:.2f}").rjust(cell)
                     for j, v in enumerate(row)]
            out.append(label.ljust(width) + "".join(cells))
        return "\n".join(out) + "\n"


def attention_table(model, record, code_table=None) -> AttentionTable:
    """Per-code allocation over one record's descriptions.

    With the soft head the cells are softmax weights (rows sum to one); with
    any other head the raw match scores are reported instead.
    """
    code_table = code_table or model.code_table
    scores, weights = model.attention(record)
    titles = [c.long_title for c in code_table]
    if model.config.head == "soft":
        return AttentionTable("soft-weights", titles, list(record.descriptions), weights)
    return AttentionTable("hard-scores", titles, list(record.descriptions), scores)


# ------------------------------------------------------------ ablations

ABLATIONS = [
    ("Hard-selection Model", dict(head="hard")),
    ("Soft-attention Model", dict(head="soft")),
    ("Replace character-level LSTM with random initialized and tunable word embedding",
     dict(head="soft", encoder_variant="word-embed-random")),
    ("Replace character-level LSTM with pre-trained and tunable word embedding",
     dict(head="soft", encoder_variant="word-embed-pretrained")),
    ("Replace word-level LSTM encoder with average encoder",
     dict(head="soft", encoder_variant="avg-pool")),
    ("Replace attention mechanism with naïve linear classifier", dict(head="linear")),
]


@dataclass
class AblationRow:
    label: str
    config: dict
    report: EvalReport
    epochs_run: int
    best_epoch: int
    checkpoint: object = field(default=None, repr=False, compare=False)


def fit_and_evaluate(config, splits, code_table, pretrained=None, split: str = "test"):
    """Train, take the validation-tuned threshold, report on ``split``."""
    from .training import train
    ckpt = train(config, splits, code_table, pretrained=pretrained)
    recs = getattr(splits, split)
    P = ckpt.model.predict_proba(recs)
    Y = ckpt.model.labels(recs)
    return ckpt, evaluate(P, Y, ckpt.threshold)


def run_ablation_suite(config_base, splits, code_table, pretrained=None, rows=None):
    """Train and test every ablation configuration under one seed and split.

    Only the architecture fields differ between rows. The pretrained row is
    skipped with a warning when no vectors are available.
    """
    out = []
    for label, overrides in ABLATIONS:
        if rows is not None and label not in rows:
            continue
        cfg = copy.deepcopy(config_base)
        cfg.encoder_variant = "char-lstm"
        cfg.head = "soft"
        for k, v in overrides.items():
            setattr(cfg, k, v)
        if cfg.encoder_variant == "word-embed-pretrained":
            if pretrained is None and not cfg.pretrained_path:
                log.warning("no pretrained vectors; skipping %r", label)
                continue
            cfg.pretrained_path = cfg.pretrained_path or "<in-memory>"
        cfg.validate()
        log.info("ablation: %s", label)
        ckpt, report = fit_and_evaluate(cfg, splits, code_table, pretrained=pretrained)
        out.append(AblationRow(label, overrides, report, len(ckpt.log) - 1, ckpt.epoch, ckpt))
    return out


def format_ablation_table(rows, fmt: str = "text") -> str:
    if fmt == "tsv":
        lines = ["model\tf1\tauc_roc\tthreshold"]
        lines += [f"{r.label}\t{r.report.micro_f1:.3f}\t{r.report.micro_auc:.3f}\t"
                  f"{r.report.threshold:.2f}" for r in rows]
        return "\n".join(lines) + "\n"
    width = max(len("Model Architecture"), *(len(r.label) for r in rows))
    lines = ["Model Architecture".ljust(width) + "      F1  AUC_ROC"]
    for r in rows:
        lines.append(f"{r.label.ljust(width)}  {r.report.micro_f1:6.3f}  {r.report.micro_auc:7.3f}")
    return "\n".join(lines) + "\n"
