"""Look inside a trained checkpoint: where the attention goes for one admission,
and which words the character encoder places near a few misspellings.

    python3 demos/inspect_model.py [out_dir]

Run synthetic_pipeline.py first.
"""
import sys
from pathlib import Path

from icdattn.analysis import attention_table, format_neighbors, nearest_neighbors
from icdattn.corpus import AdmissionRecord, tokenize
from icdattn.training import load_checkpoint

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
ckpt = load_checkpoint(out / "soft.ckpt")
model = ckpt.model

# one admission written from two code titles plus an unrelated line
titles = [c.long_title for c in model.code_table]
rec = AdmissionRecord("demo", [titles[0].lower(), "Sepsis ruled out", titles[1]], set())
print(attention_table(model, rec).render())

words = sorted({w for t in titles for w in tokenize(t) if len(w) >= 5})
for w in words[:4]:
    typo = w[:2] + w[3:]          # drop the third letter
    print(format_neighbors(typo, nearest_neighbors(typo, words, model.desc_encoder, k=3)), end="")
