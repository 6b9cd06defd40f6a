"""Generate a small noisy corpus, train the soft-attention model, evaluate it
and print predictions for a few test admissions.

    python3 demos/synthetic_pipeline.py [out_dir]

Runs in well under a minute on one core. The checkpoint it writes is reused by
inspect_model.py.
"""
import sys
from pathlib import Path

from icdattn.corpus import split_dataset
from icdattn.evaluation import evaluate
from icdattn.model import TrainConfig
from icdattn.synthetic import NoiseParams, generate_synthetic_corpus
from icdattn.training import save_checkpoint, train

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)

records, codes = generate_synthetic_corpus(6, 300, NoiseParams.realistic(0.05), seed=11)
splits = split_dataset(records, (0.7, 0.15, 0.15), seed=11)
print(f"{len(splits.train)} train / {len(splits.validation)} val / {len(splits.test)} test")
for c in codes:
    print(f"  {c.code}  {c.long_title}")

# smaller than the reference size so the demo stays quick
cfg = TrainConfig(hidden_dim=64, char_embed_dim=20, epochs=30, seed=1)
ckpt = train(cfg, splits, codes, log_path=out / "train.log.csv",
             on_epoch=lambda e, m, row: print(f"epoch {e:2d}  loss {row['train_loss']:.4f}  "
                                              f"val F1 {row['val_f1']:.3f}") and False)
save_checkpoint(ckpt, out / "soft.ckpt")

model = ckpt.model
P = model.predict_proba(splits.test)
rep = evaluate(P, model.labels(splits.test), ckpt.threshold)
print(f"\nbest epoch {ckpt.epoch}, threshold {ckpt.threshold:.2f}: "
      f"test F1 {rep.micro_f1:.3f}, AUC {rep.micro_auc:.3f}")

for rec, row in list(zip(splits.test, P))[:3]:
    got = sorted(c for c, p in zip(model.codes, row) if p >= ckpt.threshold)
    print(f"\n{rec.hadm_id}: {rec.descriptions}")
    print(f"  predicted {got}  gold {sorted(rec.codes)}")
