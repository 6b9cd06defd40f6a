"""``icd-attn`` command line: extract, synth, split, stats, train, eval,
predict, neighbors, attn-table, ablate.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

from . import corpus, synthetic
from .numerics import Rng

log = logging.getLogger("icdattn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
ENCODER_ALIASES = {"char-lstm": "char-lstm", "word-embed": "word-embed-random",
                   "word-embed-random": "word-embed-random",
                   "word-embed-pretrained": "word-embed-pretrained",
                   "avg": "avg-pool", "avg-pool": "avg-pool"}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fractions(text: str):
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("fractions must be comma-separated numbers") from exc
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("need three fractions: train,validation,test")
    return vals


# ------------------------------------------------------------ data commands

def cmd_extract(args) -> int:
    path = Path(args.notes)
    if not path.is_file():
        raise DataError(f"cannot read notes file {path}")
    kept, discarded = [], 0
    try:
        for _, obj in corpus.read_jsonl(path, strict=args.strict):
            rec = corpus.record_from_json(obj)
            if rec.descriptions:
                kept.append(rec)
            else:
                discarded += 1
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    if args.codes:
        table = corpus.load_code_table(args.codes)
        chosen, kept = corpus.select_top_codes(kept, table, args.top_k,
                                               drop_unlabeled=args.drop_unlabeled)
        if args.codes_out:
            corpus.write_code_table(chosen, args.codes_out)
    corpus.write_records(kept, args.out)
    n_desc = sum(len(r.descriptions) for r in kept)
    print(f"records kept: {len(kept)}  discarded: {discarded}  descriptions: {n_desc}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.realistic:
        noise = synthetic.NoiseParams.realistic(args.typo_rate)
    else:
        noise = synthetic.NoiseParams(
            typo_rate=args.typo_rate, synonym_rate=args.synonym_rate,
            abbrev_rate=args.abbrev_rate, case_rate=args.case_rate,
            combination_rate=args.combination_rate, distractor_rate=args.distractor_rate,
            combo_code_fraction=args.combo_code_fraction)
    try:
        records, table = synthetic.generate_synthetic_corpus(
            args.codes, args.records, noise, rng=Rng(args.seed))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus.write_records(records, out / "records.jsonl")
    corpus.write_code_table(table, out / "codes.tsv")
    split = corpus.split_dataset(records, args.fractions, rng=Rng(args.seed).spawn(7))
    corpus.write_manifest(split, out / "splits.json")
    if args.vectors_dim:
        vecs = synthetic.synthetic_pretrained_vectors(args.vectors_dim, Rng(args.seed).spawn(8))
        synthetic.write_vectors(vecs, out / "vectors.txt")
    print(f"wrote {len(records)} records, {len(table)} codes to {out}")
    return EXIT_OK


def cmd_split(args) -> int:
    records = _load_records(args.records)
    split = corpus.split_dataset(records, args.fractions, rng=Rng(args.seed))
    corpus.write_manifest(split, args.out)
    print(f"train {len(split.train)}  validation {len(split.validation)}  test {len(split.test)}")
    return EXIT_OK


def cmd_stats(args) -> int:
    records = _load_records(args.records)
    try:
        stats = corpus.corpus_stats(records)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    sys.stdout.write(corpus.format_stats_csv(stats))
    return EXIT_OK


def _load_records(path):
    if not Path(path).is_file():
        raise DataError(f"cannot read records file {path}")
    try:
        return corpus.load_records(path)
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def _load_data(path):
    try:
        return corpus.load_data_dir(path)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc


def _load_ckpt(path):
    from .training import load_checkpoint
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint: {exc}") from exc
    except ValueError as exc:
        raise DataError(str(exc)) from exc


# ------------------------------------------------------------ model commands

def _config_from(args):
    from .model import TrainConfig
    encoder = ENCODER_ALIASES[args.encoder]
    pretrained = args.pretrained
    if encoder == "word-embed-pretrained" and not pretrained:
        raise UsageError("--encoder word-embed-pretrained requires --pretrained <path>")
    try:
        return TrainConfig(lr=args.lr, batch_size=args.batch, hidden_dim=args.hidden,
                           char_embed_dim=args.char_embed, dropout_p=args.dropout,
                           epochs=args.epochs, seed=args.seed, head=args.head,
                           encoder_variant=encoder, score=args.score, proj_bias=args.proj_bias,
                           max_grad_norm=args.max_grad_norm, pretrained_path=pretrained)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_train(args) -> int:
    from .training import save_checkpoint, train
    config = _config_from(args)
    splits, table = _load_data(args.data)
    pretrained = None
    if config.encoder_variant == "word-embed-pretrained":
        pretrained = _load_vectors(config.pretrained_path)
    ckpt = train(config, splits, table, pretrained=pretrained,
                 log_path=args.log or f"{args.out}.log.csv")
    save_checkpoint(ckpt, args.out)
    print(f"best epoch {ckpt.epoch}  threshold {ckpt.threshold:.2f}  -> {args.out}")
    return EXIT_OK


def _load_vectors(path):
    from .encoders import load_pretrained_vectors
    try:
        return load_pretrained_vectors(path)
    except OSError as exc:
        raise DataError(f"cannot read pretrained vectors: {exc}") from exc
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def cmd_eval(args) -> int:
    from .evaluation import evaluate, tune_per_code_thresholds, tune_threshold, write_scores_csv
    ckpt = _load_ckpt(args.ckpt)
    splits, _ = _load_data(args.data)
    model = ckpt.model
    threshold = ckpt.threshold if args.threshold is None else args.threshold
    if args.tune_threshold or args.per_code_threshold:
        Pv, Yv = model.predict_proba(splits.validation), model.labels(splits.validation)
        try:
            threshold = (tune_per_code_thresholds(Pv, Yv) if args.per_code_threshold
                         else tune_threshold(Pv, Yv))
        except ValueError as exc:
            raise DataError(str(exc)) from exc
    recs = getattr(splits, args.split)
    if not recs:
        raise DataError(f"split {args.split!r} is empty")
    P, Y = model.predict_proba(recs), model.labels(recs)
    try:
        report = evaluate(P, Y, threshold)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    if args.scores_out:
        write_scores_csv(args.scores_out, P, model.codes, [r.hadm_id for r in recs])
    print(report.to_json())
    return EXIT_OK


def cmd_predict(args) -> int:
    if args.threshold is not None and not 0.0 <= args.threshold <= 1.0:
        raise UsageError("--threshold must lie in [0, 1]")
    ckpt = _load_ckpt(args.ckpt)
    records = _load_records(args.inp)
    thr = ckpt.threshold if args.threshold is None else args.threshold
    P = ckpt.model.predict_proba(records)
    out = open(args.out, "w", encoding="utf-8") if args.out else contextlib.nullcontext(sys.stdout)
    with out as fh:
        for rec, row in zip(records, P):
            probs = {c: float(p) for c, p in zip(ckpt.model.codes, row)}
            fh.write(json.dumps({"hadm_id": rec.hadm_id, "probabilities": probs,
                                 "assigned": [c for c, p in probs.items() if p >= thr]}) + "\n")
    return EXIT_OK


def cmd_neighbors(args) -> int:
    from .analysis import format_neighbors, nearest_neighbors
    ckpt = _load_ckpt(args.ckpt)
    model = ckpt.model
    if args.candidates:
        cands = [ln.strip() for ln in Path(args.candidates).read_text(encoding="utf-8").splitlines()
                 if ln.strip()]
    elif args.level == "word":
        cands = model.word_vocab.to_list()
    elif args.data:
        splits, _ = _load_data(args.data)
        cands = [d for r in splits.train for d in r.descriptions]
    else:
        raise UsageError("sentence-level neighbours need --candidates or --data")
    try:
        nn = nearest_neighbors(args.query, cands, model.desc_encoder, args.k, args.level)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    sys.stdout.write(format_neighbors(args.query, nn, args.format))
    return EXIT_OK


def cmd_attn_table(args) -> int:
    from .analysis import attention_table
    ckpt = _load_ckpt(args.ckpt)
    records = _load_records(args.inp)
    if args.hadm_id:
        records = [r for r in records if r.hadm_id == args.hadm_id]
        if not records:
            raise DataError(f"no record with hadm_id {args.hadm_id}")
    if not records:
        raise DataError("no records in input")
    sys.stdout.write(attention_table(ckpt.model, records[0]).render(args.format))
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .analysis import format_ablation_table, run_ablation_suite
    args.head = "soft"
    args.encoder = "char-lstm"
    config = _config_from(args)
    splits, table = _load_data(args.data)
    vec_path = args.pretrained or (Path(args.data) / "vectors.txt")
    pretrained = _load_vectors(vec_path) if Path(vec_path).is_file() else None
    rows = run_ablation_suite(config, splits, table, pretrained=pretrained)
    sys.stdout.write(format_ablation_table(rows, args.format))
    return EXIT_OK


# ------------------------------------------------------------ parser

def _add_train_flags(p, with_arch: bool = True):
    p.add_argument("--data", required=True, help="directory with records.jsonl, codes.tsv, splits.json")
    if with_arch:
        p.add_argument("--head", choices=["hard", "soft", "linear"], default="soft")
        p.add_argument("--encoder", choices=sorted(ENCODER_ALIASES), default="char-lstm")
    p.add_argument("--pretrained", help="word vectors in text format (word-embed-pretrained)")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch", type=int, default=10)
    p.add_argument("--hidden", type=int, default=200)
    p.add_argument("--char-embed", type=int, default=50)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--score", choices=["dot", "cosine"], default="dot",
                   help="code/description match score (default: raw inner product)")
    p.add_argument("--proj-bias", action="store_true", help="add a per-code bias to the output layer")
    p.add_argument("--max-grad-norm", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="icd-attn", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", help="discharge-summary JSONL -> admission records JSONL")
    p.add_argument("--notes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strict", action="store_true", help="abort on a malformed line")
    p.add_argument("--codes", help="code table TSV; enables top-k code selection")
    p.add_argument("--top-k", type=int, default=50)
    p.add_argument("--codes-out", help="write the selected code table here")
    p.add_argument("--drop-unlabeled", action="store_true",
                   help="drop records left without any selected code")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("synth", help="write a synthetic corpus directory")
    p.add_argument("--codes", type=int, required=True)
    p.add_argument("--records", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--typo-rate", type=float, default=0.0)
    p.add_argument("--synonym-rate", type=float, default=0.0)
    p.add_argument("--abbrev-rate", type=float, default=0.0)
    p.add_argument("--case-rate", type=float, default=0.0)
    p.add_argument("--combination-rate", type=float, default=0.0)
    p.add_argument("--distractor-rate", type=float, default=0.0)
    p.add_argument("--combo-code-fraction", type=float, default=0.0)
    p.add_argument("--realistic", action="store_true",
                   help="preset non-typo noise (synonyms, abbreviations, combinations, distractors)")
    p.add_argument("--fractions", type=_fractions, default=(0.7, 0.15, 0.15))
    p.add_argument("--vectors-dim", type=int, default=200,
                   help="dimension of the companion vectors.txt (0 to skip)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="seeded train/validation/test manifest")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fractions", type=_fractions, default=(0.7, 0.15, 0.15))
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("stats", help="description/code histograms as CSV")
    p.add_argument("--records", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_train_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="per-epoch CSV log (default: <out>.log.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="micro F1 / AUC of a checkpoint on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["validation", "test"], default="test")
    p.add_argument("--tune-threshold", action="store_true",
                   help="tune the threshold on validation before scoring")
    p.add_argument("--per-code-threshold", action="store_true",
                   help="tune one threshold per code on validation")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--scores-out", help="write the score matrix as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="per-record code probabilities as JSONL")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("neighbors", help="nearest words/phrases in hidden space")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--candidates", help="file with one candidate per line")
    p.add_argument("--data", help="data directory (sentence candidates from train split)")
    p.add_argument("--level", choices=["word", "sentence"], default="word")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--format", choices=["text", "tsv"], default="text")
    p.set_defaults(func=cmd_neighbors)

    p = sub.add_parser("attn-table", help="attention allocation for one record")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--hadm-id")
    p.add_argument("--format", choices=["text", "tsv"], default="text")
    p.set_defaults(func=cmd_attn_table)

    p = sub.add_parser("ablate", help="train and compare the six architecture rows")
    _add_train_flags(p, with_arch=False)
    p.add_argument("--format", choices=["text", "tsv"], default="text")
    p.set_defaults(func=cmd_ablate)
    return parser


def _thread_limit():
    n = os.environ.get("ICD_ATTN_THREADS")
    if not n:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return contextlib.nullcontext()
    return threadpool_limits(limits=int(n))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, or a usage error already printed
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except UsageError as exc:
        print(f"icd-attn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"icd-attn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"icd-attn: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
