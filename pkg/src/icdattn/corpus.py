"""Admission records: note extraction, tokenization, vocabularies, code
selection, splitting, file IO and corpus statistics."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .numerics import Rng

log = logging.getLogger(__name__)

UNK = "<unk>"


@dataclass
class RawNote:
    hadm_id: str
    text: str


@dataclass
class AdmissionRecord:
    hadm_id: str
    descriptions: list
    codes: set = field(default_factory=set)

    def to_json(self) -> dict:
        return {"hadm_id": self.hadm_id, "descriptions": list(self.descriptions),
                "codes": sorted(self.codes)}


@dataclass(frozen=True)
class CodeDefinition:
    code: str
    long_title: str


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list

    def manifest(self) -> dict:
        return {name: [r.hadm_id for r in getattr(self, name)]
                for name in ("train", "validation", "test")}


# ---------------------------------------------------------------- extraction

_DIAG_HEADER = re.compile(r"^\s*(?:DISCHARGE|FINAL)\s+DIAGNOS(?:IS|ES)\s*:?\s*(.*)$",
                          re.IGNORECASE)
_ITEM = re.compile(r"^\s*\d+\s*[.)]\s*(.*)$")


def _is_section_header(line: str) -> bool:
    s = line.strip()
    return (len(s) > 1 and s.endswith(":") and any(c.isalpha() for c in s)
            and s == s.upper())


def _section_items(lines: list) -> list:
    enumerated = any(_ITEM.match(ln) for ln in lines)
    items = []
    prev_blank = True
    for ln in lines:
        if not any(c.isalnum() for c in ln):
            # blank or pure punctuation ("...", "----") separates items
            prev_blank = True
            continue
        m = _ITEM.match(ln)
        if m:
            items.append(m.group(1).strip())
        elif not enumerated:
            # un-numbered section: one item per line
            items.append(ln.strip())
        elif items and not prev_blank:
            items[-1] = f"{items[-1]} {ln.strip()}".strip()
        elif items:
            # stray prose after a blank line closes an enumerated list
            break
        else:
            items.append(ln.strip())
        prev_blank = False
    return [" ".join(it.split()) for it in items if it.strip()]


def extract_descriptions(note) -> list:
    """Pull the enumerated items out of every DISCHARGE/FINAL DIAGNOSIS section.

    Continuation lines are joined to the preceding item with one space, and a
    section runs until the next all-caps ``HEADER:`` line. Returns ``[]`` when
    the note has no diagnosis section.
    """
    text = note.text if isinstance(note, RawNote) else str(note)
    lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    out = []
    i = 0
    while i < len(lines):
        m = _DIAG_HEADER.match(lines[i])
        if not m:
            i += 1
            continue
        body = [m.group(1)] if m.group(1).strip() else []
        i += 1
        while i < len(lines) and not _DIAG_HEADER.match(lines[i]) \
                and not _is_section_header(lines[i]):
            body.append(lines[i])
            i += 1
        out.extend(_section_items(body))
    return out


_PUNCT = set(",.;:?!()/")


def tokenize(description: str) -> list:
    """Whitespace split, then peel leading/trailing punctuation into tokens.

    Case is preserved; inner punctuation such as ``4/7`` stays attached.
    """
    tokens = []
    for chunk in description.split():
        lead, trail = [], []
        while chunk and chunk[0] in _PUNCT:
            lead.append(chunk[0])
            chunk = chunk[1:]
        while chunk and chunk[-1] in _PUNCT:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(lead)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(trail))
    return tokens


# ---------------------------------------------------------------- codes

def code_frequencies(records) -> Counter:
    counts = Counter()
    for r in records:
        counts.update(set(r.codes))
    return counts


def select_top_codes(records, code_table, k: int, drop_unlabeled: bool = False):
    """Keep the ``k`` codes assigned to the most visits (ties: lexicographic).

    Returns ``(codes, filtered_records)``; each record's gold set is restricted
    to the chosen codes. Records whose set becomes empty are kept unless
    ``drop_unlabeled``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    counts = code_frequencies(records)
    if len(counts) < k:
        raise ValueError(f"only {len(counts)} distinct codes, fewer than k={k}")
    ranked = sorted(counts, key=lambda c: (-counts[c], c))[:k]
    titles = {c.code: c for c in code_table}
    missing = [c for c in ranked if c not in titles]
    if missing:
        raise ValueError(f"codes missing from code table: {missing[:5]}")
    chosen = set(ranked)
    filtered = []
    for r in records:
        kept = set(r.codes) & chosen
        if kept or not drop_unlabeled:
            filtered.append(AdmissionRecord(r.hadm_id, list(r.descriptions), kept))
    return [titles[c] for c in ranked], filtered


# ---------------------------------------------------------------- splits

def split_dataset(records, fractions=(0.7, 0.15, 0.15), rng: Rng | None = None,
                  seed: int = 0) -> DatasetSplit:
    """Seeded shuffle then contiguous slices.

    Validation and test get ``floor(n * f)`` records, train takes the rest.
    """
    if not records:
        raise ValueError("cannot split an empty record list")
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three values summing to 1, got {fractions}")
    rng = rng or Rng(seed)
    n = len(records)
    order = rng.permutation(n)
    shuffled = [records[i] for i in order]
    # tolerance absorbs float noise such as 700 * (1/7) = 99.999...
    n_val = int(math.floor(n * fractions[1] + 1e-9))
    n_test = int(math.floor(n * fractions[2] + 1e-9))
    n_train = n - n_val - n_test
    return DatasetSplit(shuffled[:n_train], shuffled[n_train:n_train + n_val],
                        shuffled[n_train + n_val:])


def apply_manifest(records, manifest: dict) -> DatasetSplit:
    by_id = {r.hadm_id: r for r in records}
    parts = {}
    for name in ("train", "validation", "test"):
        ids = manifest.get(name, [])
        unknown = [i for i in ids if i not in by_id]
        if unknown:
            raise ValueError(f"manifest {name} lists unknown hadm_ids {unknown[:3]}")
        parts[name] = [by_id[i] for i in ids]
    return DatasetSplit(**parts)


# ---------------------------------------------------------------- vocab

class Vocab:
    """Symbol <-> index map with UNK fixed at index 0."""

    def __init__(self, symbols=()):
        self.itos = [UNK]
        self.stoi = {UNK: 0}
        for s in symbols:
            self.add(s)

    def add(self, symbol) -> int:
        if symbol not in self.stoi:
            self.stoi[symbol] = len(self.itos)
            self.itos.append(symbol)
        return self.stoi[symbol]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, symbol):
        return symbol in self.stoi

    def index(self, symbol) -> int:
        return self.stoi.get(symbol, 0)

    def symbol(self, idx: int):
        return self.itos[idx]

    def to_list(self) -> list:
        return list(self.itos[1:])

    @classmethod
    def from_list(cls, symbols) -> "Vocab":
        return cls(symbols)


CharVocab = Vocab
WordVocab = Vocab


def _texts(records, code_table):
    for r in records:
        yield from r.descriptions
    for c in code_table:
        yield c.long_title


def build_char_vocab(records, code_table=()) -> Vocab:
    """Characters of training descriptions plus all code titles, first-seen order."""
    vocab = Vocab()
    for text in _texts(records, code_table):
        for tok in tokenize(text):
            for ch in tok:
                vocab.add(ch)
    return vocab


def build_word_vocab(records, code_table=(), lowercase: bool = False) -> Vocab:
    vocab = Vocab()
    for text in _texts(records, code_table):
        for tok in tokenize(text):
            vocab.add(tok.lower() if lowercase else tok)
    return vocab


# ---------------------------------------------------------------- stats

def corpus_stats(records) -> dict:
    """The three histograms behind the corpus overview figure.

    ``descriptions_per_record`` and ``codes_per_record`` map count -> number of
    records; ``code_frequency`` maps code -> number of records carrying it.
    """
    if not records:
        raise ValueError("corpus_stats needs at least one record")
    desc = Counter(len(r.descriptions) for r in records)
    per_code = code_frequencies(records)
    n_codes = Counter(len(r.codes) for r in records)
    return {
        "descriptions_per_record": dict(sorted(desc.items())),
        "code_frequency": dict(sorted(per_code.items(), key=lambda kv: (-kv[1], kv[0]))),
        "codes_per_record": dict(sorted(n_codes.items())),
    }


def format_stats_csv(stats: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["histogram", "key", "count"])
    for name, hist in stats.items():
        for key, count in hist.items():
            w.writerow([name, key, count])
    return buf.getvalue()


# ---------------------------------------------------------------- IO

def read_jsonl(path, strict: bool = False):
    """Yield ``(line_number, obj)``; malformed lines raise (strict) or are skipped."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict) or "hadm_id" not in obj:
                    raise ValueError("expected an object with a hadm_id")
            except ValueError as exc:
                if strict:
                    raise ValueError(f"{path}:{lineno}: malformed line ({exc})") from exc
                log.warning("%s:%d: skipping malformed line (%s)", path, lineno, exc)
                continue
            yield lineno, obj


def record_from_json(obj: dict) -> AdmissionRecord:
    """Accept either a pre-extracted record or a raw note (``text`` key)."""
    if "descriptions" in obj:
        descs = [" ".join(str(d).split()) for d in obj["descriptions"]]
        descs = [d for d in descs if d]
    else:
        descs = extract_descriptions(RawNote(str(obj["hadm_id"]), obj.get("text", "")))
    return AdmissionRecord(str(obj["hadm_id"]), descs, set(obj.get("codes", [])))


def load_records(path, strict: bool = False) -> list:
    records = []
    for _, obj in read_jsonl(path, strict=strict):
        rec = record_from_json(obj)
        if rec.descriptions:
            records.append(rec)
    return records


def write_records(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


def load_code_table(path) -> list:
    table, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[1].strip():
                raise ValueError(f"{path}:{lineno}: expected 'code<TAB>long_title'")
            code, title = parts[0].strip(), parts[1].strip()
            if code in seen:
                raise ValueError(f"{path}:{lineno}: duplicate code {code}")
            seen.add(code)
            table.append(CodeDefinition(code, title))
    return table


def write_code_table(code_table, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for c in code_table:
            fh.write(f"{c.code}\t{c.long_title}\n")


def write_manifest(split: DatasetSplit, path) -> None:
    Path(path).write_text(json.dumps(split.manifest(), indent=1) + "\n", encoding="utf-8")


def load_manifest(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def load_data_dir(path):
    """Read ``records.jsonl``, ``codes.tsv`` and ``splits.json`` from a directory."""
    d = Path(path)
    if not d.is_dir():
        raise FileNotFoundError(f"data directory not found: {d}")
    records = load_records(d / "records.jsonl")
    code_table = load_code_table(d / "codes.tsv")
    split = apply_manifest(records, load_manifest(d / "splits.json"))
    return split, code_table
