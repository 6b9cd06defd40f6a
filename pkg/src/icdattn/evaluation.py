"""Micro-pooled F1 / ROC-AUC over a records x codes grid, and threshold tuning."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

THRESHOLD_GRID = np.round(np.arange(1, 100) / 100.0, 2)


@dataclass
class EvalReport:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    micro_f1: float
    micro_auc: float | None
    threshold: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _check(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"shape mismatch: scores {scores.shape} vs labels {labels.shape}")
    return scores, labels.astype(bool)


def confusion(scores, labels, threshold):
    scores, labels = _check(scores, labels)
    pred = scores >= threshold
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    tn = int(np.sum(~pred & ~labels))
    return tp, fp, fn, tn


def micro_f1(scores, labels, threshold: float = 0.5, with_auc: bool = False) -> EvalReport:
    """Binarize at ``score >= threshold`` and pool tp/fp/fn over every cell.

    ``threshold`` may also be a per-code vector broadcast across records.
    """
    thr = np.asarray(threshold, dtype=np.float64)
    if np.any(thr < 0) or np.any(thr > 1):
        raise ValueError("threshold must lie in [0, 1]")
    tp, fp, fn, tn = confusion(scores, labels, thr)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    auc = None
    if with_auc:
        auc = micro_auc(scores, labels)
    thr_out = float(thr) if thr.ndim == 0 else [float(t) for t in thr]
    return EvalReport(tp, fp, fn, tn, precision, recall, f1, auc, thr_out)


def micro_auc(scores, labels) -> float:
    """Pooled ROC-AUC via the rank-sum statistic; ties count one half."""
    scores, labels = _check(scores, labels)
    s = scores.ravel()
    y = labels.ravel()
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("degenerate labels: need at least one positive and one negative")
    ranks = rankdata(s)  # average ranks give ties half credit
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def tune_threshold(val_scores, val_labels, grid=THRESHOLD_GRID) -> float:
    """Grid threshold with the best validation micro-F1 (lowest wins ties)."""
    scores, labels = _check(val_scores, val_labels)
    best_t, best_f1 = float(grid[0]), -1.0
    for t in grid:
        f1 = micro_f1(scores, labels, float(t)).micro_f1
        if f1 > best_f1:
            best_t, best_f1 = float(t), f1
    return best_t


def tune_per_code_thresholds(val_scores, val_labels, grid=THRESHOLD_GRID) -> np.ndarray:
    """One threshold per code column, each tuned on that column's F1."""
    scores, labels = _check(val_scores, val_labels)
    out = np.empty(scores.shape[1])
    for j in range(scores.shape[1]):
        out[j] = tune_threshold(scores[:, j:j + 1], labels[:, j:j + 1], grid)
    return out


def evaluate(scores, labels, threshold) -> EvalReport:
    return micro_f1(scores, labels, threshold, with_auc=True)


def write_scores_csv(path, scores, codes, ids=None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((["hadm_id"] if ids is not None else []) + list(codes))
        for b, row in enumerate(np.asarray(scores)):
            lead = [ids[b]] if ids is not None else []
            w.writerow(lead + [repr(float(x)) for x in row])


def read_scores_csv(path):
    """Returns ``(codes, scores, ids)``; ``ids`` is None without a hadm_id column."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    has_ids = header and header[0] == "hadm_id"
    codes = header[1:] if has_ids else header
    ids = [r[0] for r in body] if has_ids else None
    vals = np.array([[float(x) for x in (r[1:] if has_ids else r)] for r in body])
    return codes, vals.reshape(len(body), len(codes)), ids
