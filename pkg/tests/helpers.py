"""Shared fixtures data and the finite-difference oracle used by several test modules."""
import numpy as np

from icdattn.corpus import AdmissionRecord, CodeDefinition
from icdattn.model import ICDCoder, TrainConfig
from icdattn.numerics import Rng
from icdattn.synthetic import synthetic_pretrained_vectors
from icdattn.training import loss_and_grads

LD = np.longdouble

TINY_CODES = [CodeDefinition("A1", "Acute kidney failure"),
              CodeDefinition("B2", "Chronic heart disease")]
# one record per description count m = 1, 2, 3
TINY_RECORDS = [
    AdmissionRecord("r1", ["Acute renal failure"], {"A1"}),
    AdmissionRecord("r2", ["Chronic heart dz", "Sepsis ruled out"], {"B2"}),
    AdmissionRecord("r3", ["AKI", "CHF, chronic", "Anxiety"], {"A1", "B2"}),
]

# Table of acceptance outcomes, printed by the terminal-summary hook in conftest.
RESULTS = []


def report(number, name, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {name}" + (f"  ({detail})" if detail else "")
    RESULTS.append(line)
    print(line)
    return ok


def tiny_model(head, variant, seed=5, **overrides):
    kw = dict(hidden_dim=8, char_embed_dim=4, word_embed_dim=6, head=head,
              encoder_variant=variant, seed=seed, dropout_p=0.5)
    pretrained = None
    if variant == "word-embed-pretrained":
        kw["pretrained_path"] = "<in-memory>"
        pretrained = synthetic_pretrained_vectors(6, Rng(3))
    kw.update(overrides)
    return ICDCoder.build(TrainConfig(**kw), TINY_RECORDS, TINY_CODES, pretrained)


def fd_check(model, records, drop_seed=11, h=1e-5, coords=None, sample_seed=0):
    """Worst relative error between analytic gradients and central differences.

    The loss oracle re-runs the forward pass in extended precision so the
    difference quotient is not swamped by float64 round-off. The dropout rng
    is replayed with the same seed on every evaluation, so the masks match the
    ones used for the analytic pass. ``coords`` limits the check to that many
    randomly chosen entries per parameter (all entries when None).
    """
    _, grads = loss_and_grads(model, records, Rng(drop_seed))
    Y = model.labels(records).astype(LD)
    model.params.update({k: v.astype(LD) for k, v in model.params.items()})
    model.invalidate()

    def loss():
        Z, _ = model.forward(records, Rng(drop_seed))
        P = 1 / (1 + np.exp(-Z))
        return np.mean(-(Y * np.log(P) + (1 - Y) * np.log(1 - P)))

    picker = Rng(sample_seed)
    worst, where, checked = 0.0, None, 0
    hh = LD(h)
    for k, p in model.params.items():
        flat = p.reshape(-1)
        g = grads[k].reshape(-1)
        idx = range(flat.size)
        if coords is not None and flat.size > coords:
            idx = picker.gen.choice(flat.size, coords, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + hh
            lp = loss()
            flat[i] = orig - hh
            lm = loss()
            flat[i] = orig
            fd = float((lp - lm) / (2 * hh))
            err = abs(g[i] - fd) / max(abs(fd), 1e-8)
            checked += 1
            if err > worst:
                worst, where = err, (k, int(i), float(g[i]), fd)
    return worst, where, checked
