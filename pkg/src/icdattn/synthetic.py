"""Synthetic admission corpora with physician-style noise.

Code titles are assembled from a small clinical word bank. Descriptions are
rewritten titles: synonym swaps, abbreviations, case flips and character
typos. Some records also carry "combination" structure, where one code is
written as two descriptions or two codes are written as one.
"""
from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

from .corpus import AdmissionRecord, CodeDefinition
from .numerics import Rng

ADJECTIVES = ["Acute", "Chronic", "Congestive", "Malignant", "Benign", "Primary",
              "Secondary", "Recurrent", "Severe", "Essential", "Obstructive", "Diabetic"]
SITES = ["kidney", "heart", "lung", "liver", "coronary artery", "urinary tract", "esophageal",
         "cerebral", "gastric", "thyroid", "pancreatic", "atrial", "venous", "bladder",
         "spinal", "retinal"]
CONDITIONS = ["failure", "disease", "infection", "hemorrhage", "embolism", "ischemia",
              "stenosis", "fibrillation", "edema", "ulcer", "hypertension", "neoplasm",
              "anemia", "thrombosis", "insufficiency", "sclerosis"]

SYNONYMS = {
    "kidney": ["renal"], "heart": ["cardiac"], "lung": ["pulmonary"], "liver": ["hepatic"],
    "failure": ["insufficiency"], "neoplasm": ["tumor", "mass"], "hemorrhage": ["bleed"],
    "acute": ["sudden onset"], "chronic": ["longstanding"], "disease": ["disorder"],
    "infection": ["infxn"], "gastric": ["stomach"], "venous": ["vein"],
    "thrombosis": ["clot"], "malignant": ["cancerous"], "cerebral": ["brain"],
}
ABBREVIATIONS = {
    "congestive heart failure": "CHF", "coronary artery disease": "CAD",
    "urinary tract infection": "UTI", "acute kidney failure": "AKI",
    "chronic kidney disease": "CKD", "atrial fibrillation": "AFib",
    "hypertension": "HTN", "chronic": "chr", "pulmonary": "pulm", "disease": "dz",
    "history": "h/o",
}
DISTRACTORS = ["Sepsis ruled out", "Twin # 2", "Status post transitional respiratory distress",
               "Full code", "Discharged home with services", "Fall without injury",
               "Follow up with primary care", "Anxiety", "Tobacco use"]
_LETTERS = string.ascii_lowercase


@dataclass
class NoiseParams:
    """Per-event probabilities for the description rewriter.

    ``typo_rate`` is per character; ``synonym_rate`` and ``case_rate`` per
    word; ``abbrev_rate`` per matching phrase; ``combination_rate`` and
    ``distractor_rate`` per record.
    """
    typo_rate: float = 0.0
    synonym_rate: float = 0.0
    abbrev_rate: float = 0.0
    case_rate: float = 0.0
    combination_rate: float = 0.0
    distractor_rate: float = 0.0
    combo_code_fraction: float = 0.0
    max_codes_per_record: int = 3

    def validate(self):
        for name in ("typo_rate", "synonym_rate", "abbrev_rate", "case_rate",
                     "combination_rate", "distractor_rate", "combo_code_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.max_codes_per_record < 1:
            raise ValueError("max_codes_per_record must be >= 1")

    @classmethod
    def realistic(cls, typo_rate: float = 0.05) -> "NoiseParams":
        return cls(typo_rate=typo_rate, synonym_rate=0.15, abbrev_rate=0.3, case_rate=0.1,
                   combination_rate=0.3, distractor_rate=0.3, combo_code_fraction=0.2)


def make_code_titles(n_codes: int, rng: Rng, combo_fraction: float = 0.0) -> list:
    pairs = [(s, c) for s in SITES for c in CONDITIONS]
    if n_codes > len(pairs):
        raise ValueError(f"at most {len(pairs)} synthetic codes supported")
    order = rng.permutation(len(pairs))
    n_combo = int(round(combo_fraction * n_codes))
    titles, used = [], 0
    for i in range(n_codes):
        site, cond = pairs[order[used]]
        used += 1
        adj = ADJECTIVES[int(rng.integers(0, len(ADJECTIVES)))]
        title = f"{adj} {site} {cond}"
        if i >= n_codes - n_combo and used < len(pairs):
            site2, cond2 = pairs[order[used]]
            used += 1
            title = f"{title} with {site2} {cond2}"
        titles.append(title)
    return [CodeDefinition(f"S{900 + i:03d}", t) for i, t in enumerate(titles)]


def typo_word(word: str, rate: float, rng: Rng):
    """Mutate each character with probability ``rate``. Returns (word, n_mutations)."""
    out, n_mut = [], 0
    for ch in word:
        if rng.uniform() >= rate:
            out.append(ch)
            continue
        n_mut += 1
        op = int(rng.integers(0, 3))
        if op == 0:  # insert after
            out.append(ch)
            out.append(rng.choice(_LETTERS))
        elif op == 1:  # delete
            pass
        else:  # substitute with a different letter
            sub = rng.choice(_LETTERS)
            while sub == ch.lower():
                sub = rng.choice(_LETTERS)
            out.append(sub.upper() if ch.isupper() else sub)
    res = "".join(out)
    return (res if res else word), n_mut


def _abbreviate(text: str, rate: float, rng: Rng) -> str:
    if rate <= 0:
        return text
    for phrase, abbr in ABBREVIATIONS.items():
        low = text.lower()
        pos = low.find(phrase)
        if pos < 0:
            continue
        end = pos + len(phrase)
        # whole-word matches only
        if (pos > 0 and low[pos - 1].isalpha()) or (end < len(low) and low[end].isalpha()):
            continue
        if rng.uniform() < rate:
            text = text[:pos] + abbr + text[end:]
    return text


def _flip_case(word: str, rng: Rng) -> str:
    mode = int(rng.integers(0, 3))
    if mode == 0:
        return word.lower()
    if mode == 1:
        return word.capitalize()
    return word.upper()


def rewrite(title: str, noise: NoiseParams, rng: Rng, stats: dict | None = None) -> str:
    """Turn a code title into a physician-style description."""
    text = _abbreviate(title, noise.abbrev_rate, rng)
    words = []
    for w in text.split():
        if noise.synonym_rate > 0 and w.lower() in SYNONYMS and rng.uniform() < noise.synonym_rate:
            w = rng.choice(SYNONYMS[w.lower()])
        if noise.case_rate > 0 and rng.uniform() < noise.case_rate:
            w = _flip_case(w, rng)
        words.append(w)
    if noise.typo_rate > 0:
        typed = []
        for w in words:
            new, k = typo_word(w, noise.typo_rate, rng)
            if stats is not None:
                stats["chars"] = stats.get("chars", 0) + len(w)
                stats["mutations"] = stats.get("mutations", 0) + k
            typed.append(new)
        words = typed
    elif stats is not None:
        stats["chars"] = stats.get("chars", 0) + sum(len(w) for w in words)
    out = " ".join(words)
    return out[0].upper() + out[1:] if out else title


def generate_synthetic_corpus(n_codes: int, n_records: int, noise: NoiseParams | None = None,
                              rng: Rng | None = None, seed: int = 0, stats: dict | None = None):
    """Build ``(records, code_table)``.

    Every code appears in at least one record. With all noise rates at zero
    each description is exactly one gold code's title.
    """
    noise = noise or NoiseParams()
    noise.validate()
    if n_codes < 2:
        raise ValueError("n_codes must be >= 2")
    if n_records < n_codes:
        raise ValueError(f"n_records ({n_records}) must be >= n_codes ({n_codes})")
    rng = rng or Rng(seed)
    code_table = make_code_titles(n_codes, rng, noise.combo_code_fraction)
    titles = {c.code: c.long_title for c in code_table}
    codes = [c.code for c in code_table]

    records = []
    for r in range(n_records):
        k = int(rng.integers(1, min(noise.max_codes_per_record, n_codes) + 1))
        gold = [codes[int(i)] for i in rng.permutation(n_codes)[:k]]
        if r < n_codes and codes[r] not in gold:
            gold[0] = codes[r]
        descs = []
        combine = noise.combination_rate > 0 and rng.uniform() < noise.combination_rate
        pending = list(gold)
        if combine and len(pending) >= 2:
            # one description covering two codes
            a, b = pending.pop(0), pending.pop(0)
            joiner = rng.choice([" and ", " with ", ", "])
            descs.append(rewrite(titles[a], noise, rng, stats) + joiner
                         + rewrite(titles[b], noise, rng, stats).lower())
        for c in pending:
            title = titles[c]
            if combine and " with " in title:
                # two descriptions for one combination code
                left, right = title.split(" with ", 1)
                descs.append(rewrite(left, noise, rng, stats))
                descs.append(rewrite(right, noise, rng, stats))
            else:
                descs.append(rewrite(title, noise, rng, stats))
        if noise.distractor_rate > 0 and rng.uniform() < noise.distractor_rate:
            descs.append(rewrite(rng.choice(DISTRACTORS), noise, rng, stats))
        descs = descs[:6]
        order = rng.permutation(len(descs))
        records.append(AdmissionRecord(f"S{r:06d}", [descs[i] for i in order], set(gold)))
    return records, code_table


def lexicon_words() -> list:
    """Lowercased words the generator can emit (before typos)."""
    words = set()
    for phrase in ADJECTIVES + SITES + CONDITIONS + DISTRACTORS + ["with", "and"]:
        words.update(phrase.lower().split())
    for k, vs in SYNONYMS.items():
        words.add(k)
        for v in vs:
            words.update(v.split())
    for k, v in ABBREVIATIONS.items():
        words.update(k.split())
        words.add(v.lower())
    return sorted(words)


def synthetic_pretrained_vectors(dim: int, rng: Rng, spread: float = 0.1) -> dict:
    """Stand-in for corpus-trained word vectors: synonyms and abbreviations
    sit close to the word they replace."""
    words = lexicon_words()
    base = {w: rng.gen.normal(0.0, 1.0 / np.sqrt(dim), dim) for w in words}
    vectors = dict(base)
    for k, vs in SYNONYMS.items():
        for v in vs:
            for part in v.split():
                vectors[part] = base[k] + rng.gen.normal(0.0, spread / np.sqrt(dim), dim)
    for k, v in ABBREVIATIONS.items():
        centroid = np.mean([base[w] for w in k.split()], axis=0)
        vectors[v.lower()] = centroid + rng.gen.normal(0.0, spread / np.sqrt(dim), dim)
    return vectors


def write_vectors(vectors: dict, path) -> None:
    dim = len(next(iter(vectors.values())))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(vectors)} {dim}\n")
        for w in sorted(vectors):
            fh.write(w + " " + " ".join(repr(float(x)) for x in vectors[w]) + "\n")
