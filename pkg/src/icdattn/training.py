"""Loss, backward pass, the minibatch Adam loop and checkpoint files."""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import CodeDefinition, Vocab
from .encoders import load_pretrained_vectors
from .evaluation import micro_auc, micro_f1, tune_threshold
from .model import ICDCoder, TrainConfig, dropout_mask
from .numerics import AdamState, Rng, adam_step, sigmoid

log = logging.getLogger(__name__)

P_CLIP = 1e-12
MAGIC = b"ICDATTN\x00"
FORMAT_VERSION = 1

__all__ = ["TrainConfig", "ModelCheckpoint", "bce_loss", "apply_dropout", "backward",
           "loss_and_grads", "train", "save_checkpoint", "load_checkpoint"]


def bce_loss(p, t) -> float:
    """Mean binary cross-entropy over codes, probabilities clipped to [1e-12, 1-1e-12]."""
    p = np.asarray(p, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: p {p.shape} vs t {t.shape}")
    pc = np.clip(p, P_CLIP, 1.0 - P_CLIP)
    return float(-np.mean(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc)))


def apply_dropout(h, p: float, mode: str = "train", rng: Rng | None = None):
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    h = np.asarray(h, dtype=np.float64)
    if mode == "eval" or p == 0.0:
        return h.copy()
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    return h * dropout_mask(rng, h.shape, p)


def _logit_grad(Z, Y):
    """dLoss/dZ for batch-mean BCE; zero where the clip is active."""
    P = sigmoid(Z)
    live = (P > P_CLIP) & (P < 1.0 - P_CLIP)
    return np.where(live, (P - Y), 0.0) / Z.size, P


def loss_and_grads(model: ICDCoder, records, rng: Rng | None = None):
    """Mean loss over the batch and the gradient of every parameter."""
    Z, cache = model.forward(records, rng)
    Y = model.labels(records)
    dZ, P = _logit_grad(Z, Y)
    loss = float(np.mean([bce_loss(P[b], Y[b]) for b in range(len(records))]))
    return loss, model.backward(cache, dZ)


def backward(model: ICDCoder, record, labels=None, rng: Rng | None = None) -> dict:
    """Gradients of one record's loss. ``labels`` defaults to the record's codes."""
    Z, cache = model.forward([record], rng)
    Y = model.labels([record]) if labels is None else np.asarray(labels, dtype=np.float64)[None]
    dZ, _ = _logit_grad(Z, Y)
    return model.backward(cache, dZ)


def mean_loss(model: ICDCoder, records) -> float:
    if not records:
        return float("nan")
    P = model.predict_proba(records)
    Y = model.labels(records)
    return float(np.mean([bce_loss(P[b], Y[b]) for b in range(len(records))]))


def _clip_norm(grads: dict, max_norm: float | None) -> None:
    if not max_norm:
        return
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        for g in grads.values():
            g *= max_norm / total


@dataclass
class ModelCheckpoint:
    model: ICDCoder
    adam: AdamState
    epoch: int = 0
    threshold: float = 0.5
    log: list = field(default_factory=list)

    @property
    def config(self) -> TrainConfig:
        return self.model.config


def _eval_split(model, records, threshold=None):
    if not records:
        return float("nan"), float("nan"), threshold if threshold is not None else 0.5
    P = model.predict_proba(records)
    Y = model.labels(records)
    thr = threshold
    if thr is None:
        thr = tune_threshold(P, Y) if 0 < Y.sum() < Y.size else 0.5
    f1 = micro_f1(P, Y, thr).micro_f1
    auc = micro_auc(P, Y) if 0 < Y.sum() < Y.size else float("nan")
    return f1, auc, thr


def train(config: TrainConfig, splits, code_table, pretrained: dict | None = None,
          on_epoch=None, log_path=None) -> ModelCheckpoint:
    """Minibatch Adam on the training split.

    Each epoch reshuffles (seeded), steps once per batch of ``batch_size``
    records, then tunes a threshold on validation and logs
    ``epoch, train_loss, val_f1, val_auc, threshold``. Row 0 is the untrained
    model. The checkpoint with the best validation F1 is returned (the last
    one when there is no validation split). ``on_epoch(epoch, model, row)``
    may return True to stop early.
    """
    train_recs = list(splits.train)
    if not train_recs:
        raise ValueError("training split is empty")
    if config.encoder_variant == "word-embed-pretrained" and pretrained is None:
        pretrained = load_pretrained_vectors(config.pretrained_path)
    model = ICDCoder.build(config, train_recs, code_table, pretrained)
    adam = AdamState(lr=config.lr)
    root = Rng(config.seed)
    shuffle_rng, drop_rng = root.spawn(1), root.spawn(2)
    val = list(splits.validation)

    rows = []

    def record(epoch, train_loss):
        f1, auc, thr = _eval_split(model, val)
        row = {"epoch": epoch, "train_loss": train_loss, "val_f1": f1, "val_auc": auc,
               "threshold": thr}
        rows.append(row)
        log.info("epoch %d loss %.5f val_f1 %.4f val_auc %.4f thr %.2f",
                 epoch, train_loss, f1, auc, thr)
        return row

    row = record(0, mean_loss(model, train_recs))
    best = ModelCheckpoint(_snapshot(model), copy.deepcopy(adam), 0, row["threshold"])
    best_f1 = row["val_f1"]
    stop = bool(on_epoch and on_epoch(0, model, row))
    epoch = 0
    while not stop and epoch < config.epochs:
        epoch += 1
        order = shuffle_rng.permutation(len(train_recs))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_recs[i] for i in order[start:start + config.batch_size]]
            loss, grads = loss_and_grads(model, batch, drop_rng)
            _clip_norm(grads, config.max_grad_norm)
            adam_step(model.params, grads, adam)
            model.invalidate()
            losses.append(loss)
        row = record(epoch, float(np.mean(losses)))
        improved = not val or (row["val_f1"] > best_f1 or math.isnan(best_f1))
        if improved:
            best_f1 = row["val_f1"]
            best = ModelCheckpoint(_snapshot(model), copy.deepcopy(adam), epoch, row["threshold"])
        if on_epoch and on_epoch(epoch, model, row):
            stop = True
    best.log = rows
    if log_path is not None:
        write_log(rows, log_path)
    return best


def _snapshot(model: ICDCoder) -> ICDCoder:
    params = {k: v.copy() for k, v in model.params.items()}
    return ICDCoder(copy.deepcopy(model.config), model.code_table, model.char_vocab,
                    model.word_vocab, params)


def write_log(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_f1", "val_auc", "threshold"])
        for r in rows:
            w.writerow([r["epoch"], repr(r["train_loss"]), repr(r["val_f1"]),
                        repr(r["val_auc"]), repr(r["threshold"])])


# ------------------------------------------------------------ checkpoint files
#
# Layout (all integers little-endian):
#   8 bytes   magic "ICDATTN\0"
#   4 bytes   uint32 format version
#   8 bytes   uint64 header length L
#   L bytes   UTF-8 JSON header (sorted keys): config, codes, vocabularies,
#             epoch, threshold, adam scalars, sha256 of the payload, and an
#             ordered array table [{name, shape, offset}]
#   payload   every array as float64 little-endian, concatenated in table order

def _arrays(ckpt: ModelCheckpoint):
    out = [(f"param/{k}", v) for k, v in sorted(ckpt.model.params.items())]
    for k in sorted(ckpt.adam.m):
        out.append((f"adam_m/{k}", ckpt.adam.m[k]))
        out.append((f"adam_v/{k}", ckpt.adam.v[k]))
    return out


def checkpoint_bytes(ckpt: ModelCheckpoint) -> bytes:
    table, chunks, offset = [], [], 0
    for name, arr in _arrays(ckpt):
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    m = ckpt.model
    header = {
        "config": m.config.to_dict(),
        "codes": [[c.code, c.long_title] for c in m.code_table],
        "char_vocab": m.char_vocab.to_list(),
        "word_vocab": m.word_vocab.to_list(),
        "epoch": ckpt.epoch,
        "threshold": ckpt.threshold,
        "adam": {"lr": ckpt.adam.lr, "beta1": ckpt.adam.beta1, "beta2": ckpt.adam.beta2,
                 "eps": ckpt.adam.eps, "t": ckpt.adam.t},
        "arrays": table,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    hb = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(hb)) + hb + payload


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    data = checkpoint_bytes(ckpt)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def load_checkpoint(path) -> ModelCheckpoint:
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version} "
                         f"(expected {FORMAT_VERSION})")
    try:
        header = json.loads(data[20:20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: corrupt checkpoint header") from exc
    payload = data[20 + hlen:]
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise ValueError(f"{path}: corrupt checkpoint payload (checksum mismatch)")
    arrays = {}
    for entry in header["arrays"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        arr = np.frombuffer(payload[start:start + 8 * n], dtype="<f8").astype(np.float64)
        arrays[entry["name"]] = arr.reshape(entry["shape"])
    config = TrainConfig.from_dict(header["config"])
    codes = [CodeDefinition(c, t) for c, t in header["codes"]]
    params = {k[6:]: v for k, v in arrays.items() if k.startswith("param/")}
    model = ICDCoder(config, codes, Vocab.from_list(header["char_vocab"]),
                     Vocab.from_list(header["word_vocab"]), params)
    a = header["adam"]
    adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], t=a["t"])
    for k, v in arrays.items():
        if k.startswith("adam_m/"):
            adam.m[k[7:]] = v
        elif k.startswith("adam_v/"):
            adam.v[k[7:]] = v
    return ModelCheckpoint(model, adam, header["epoch"], header["threshold"])
