"""The full code-assignment network: two untied encoder stacks and a head."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from functools import lru_cache

import numpy as np

from .corpus import Vocab, build_char_vocab, build_word_vocab, tokenize
from .encoders import VARIANTS, EncoderStack
from .matcher import HEADS, SCORES, head_backward, head_forward
from .numerics import Rng, sigmoid


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 10
    hidden_dim: int = 200
    char_embed_dim: int = 50
    word_embed_dim: int = 200
    dropout_p: float = 0.5
    epochs: int = 20
    seed: int = 0
    head: str = "soft"
    encoder_variant: str = "char-lstm"
    score: str = "dot"
    proj_bias: bool = False
    max_grad_norm: float | None = None
    pretrained_path: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        for name in ("hidden_dim", "char_embed_dim", "word_embed_dim", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}")
        if self.encoder_variant not in VARIANTS:
            raise ValueError(f"encoder_variant must be one of {VARIANTS}")
        if self.score not in SCORES:
            raise ValueError(f"score must be one of {SCORES}")
        if self.encoder_variant == "word-embed-pretrained" and not self.pretrained_path:
            raise ValueError("word-embed-pretrained needs pretrained_path")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@lru_cache(maxsize=200_000)
def _tokens(text: str) -> tuple:
    return tuple(tokenize(text))


def dropout_mask(rng: Rng, shape, p: float) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability p, 1/(1-p) otherwise."""
    if p == 0.0:
        return np.ones(shape)
    keep = rng.uniform(0.0, 1.0, shape) >= p
    return keep / (1.0 - p)


class ICDCoder:
    """Descriptions and code titles are encoded by separate stacks, scored
    against each other, and turned into one logit per code by the head."""

    def __init__(self, config: TrainConfig, code_table, char_vocab: Vocab, word_vocab: Vocab,
                 params: dict | None = None):
        self.config = config
        self.code_table = list(code_table)
        self.codes = [c.code for c in self.code_table]
        self.char_vocab = char_vocab
        self.word_vocab = word_vocab
        self.params = {} if params is None else params
        dims = dict(hidden_dim=config.hidden_dim, char_embed_dim=config.char_embed_dim,
                    word_embed_dim=config.word_embed_dim)
        self.desc_encoder = EncoderStack(self.params, "desc", config.encoder_variant,
                                         char_vocab, word_vocab, **dims)
        self.code_encoder = EncoderStack(self.params, "code", config.encoder_variant,
                                         char_vocab, word_vocab, **dims)
        self._title_tokens = [list(_tokens(c.long_title)) for c in self.code_table]
        self._u_cache = None

    @classmethod
    def build(cls, config: TrainConfig, train_records, code_table, pretrained: dict | None = None):
        """Vocabularies from the training split plus all titles; fresh parameters."""
        char_vocab = build_char_vocab(train_records, code_table)
        lower = config.encoder_variant == "word-embed-pretrained"
        word_vocab = build_word_vocab(train_records, code_table, lowercase=lower)
        if lower and pretrained:
            config.word_embed_dim = len(next(iter(pretrained.values())))
        model = cls(config, code_table, char_vocab, word_vocab)
        model.init_params(Rng(config.seed), pretrained)
        return model

    @property
    def n_codes(self) -> int:
        return len(self.code_table)

    def init_params(self, rng: Rng, pretrained: dict | None = None) -> None:
        cfg = self.config
        self.desc_encoder.init_params(rng)
        self.code_encoder.init_params(rng)
        bound = 1.0 / np.sqrt(cfg.hidden_dim)
        n, d = self.n_codes, cfg.hidden_dim
        self.params["proj.w"] = rng.uniform(-bound, bound, (n, d))
        if cfg.proj_bias:
            self.params["proj.b"] = np.zeros(n)
        if cfg.head == "linear":
            self.params["base.w"] = rng.uniform(-bound, bound, (n, 2 * d))
            if cfg.proj_bias:
                self.params["base.b"] = np.zeros(n)
        if pretrained and cfg.encoder_variant == "word-embed-pretrained":
            self.desc_encoder.seed_embeddings(pretrained)
            self.code_encoder.seed_embeddings(pretrained)
        self.invalidate()

    def invalidate(self) -> None:
        """Drop cached code vectors; call after any parameter change."""
        self._u_cache = None

    # ---------------------------------------------------------------- forward

    def code_vectors(self) -> np.ndarray:
        if self._u_cache is None:
            self._u_cache = self.code_encoder.forward(self._title_tokens)[0]
        return self._u_cache

    def description_vectors(self, texts) -> np.ndarray:
        return self.desc_encoder.forward([list(_tokens(t)) for t in texts])[0]

    def forward(self, records, rng: Rng | None = None):
        """Logits (B, n) for a batch. Passing ``rng`` turns on dropout."""
        cfg = self.config
        U, ccache = self.code_encoder.forward(self._title_tokens)
        sents, offsets = [], [0]
        for r in records:
            if not r.descriptions:
                raise ValueError(f"record {r.hadm_id} has no descriptions")
            sents.extend(list(_tokens(d)) for d in r.descriptions)
            offsets.append(len(sents))
        H, dcache = self.desc_encoder.forward(sents)
        mu = mh = None
        if rng is not None and cfg.dropout_p > 0:
            mu = dropout_mask(rng, U.shape, cfg.dropout_p)
            mh = dropout_mask(rng, H.shape, cfg.dropout_p)
            U, H = U * mu, H * mh
        Z = np.empty((len(records), self.n_codes), dtype=U.dtype)
        heads = []
        for b in range(len(records)):
            Hb = H[offsets[b]:offsets[b + 1]]
            Z[b], hc = head_forward(cfg.head, self.params, U, Hb, cfg.score)
            heads.append(hc)
        cache = dict(U=U, H=H, ccache=ccache, dcache=dcache, mu=mu, mh=mh,
                     offsets=offsets, heads=heads)
        return Z, cache

    def backward(self, cache: dict, dZ: np.ndarray) -> dict:
        """Gradients of every parameter given dLoss/dlogits (B, n)."""
        if cache is None or "heads" not in cache:
            raise ValueError("backward needs the cache from a forward pass")
        cfg = self.config
        U, H, offsets = cache["U"], cache["H"], cache["offsets"]
        grads = {}
        dU = np.zeros_like(U)
        dH = np.zeros_like(H)
        for b, hc in enumerate(cache["heads"]):
            sl = slice(offsets[b], offsets[b + 1])
            gu, gh = head_backward(cfg.head, self.params, U, H[sl], hc, dZ[b], grads, cfg.score)
            dU += gu
            dH[sl] += gh
        if cache["mu"] is not None:
            dU *= cache["mu"]
            dH *= cache["mh"]
        grads.update(self.code_encoder.backward(cache["ccache"], dU))
        grads.update(self.desc_encoder.backward(cache["dcache"], dH))
        for k, v in self.params.items():
            if k not in grads:
                grads[k] = np.zeros_like(v)
        return grads

    def predict_logits(self, records, batch: int = 64) -> np.ndarray:
        cfg = self.config
        U = self.code_vectors()
        out = np.empty((len(records), self.n_codes))
        for start in range(0, len(records), batch):
            chunk = records[start:start + batch]
            sents, offsets = [], [0]
            for r in chunk:
                if not r.descriptions:
                    raise ValueError(f"record {r.hadm_id} has no descriptions")
                sents.extend(list(_tokens(d)) for d in r.descriptions)
                offsets.append(len(sents))
            H = self.desc_encoder.forward(sents)[0]
            for b in range(len(chunk)):
                out[start + b] = head_forward(cfg.head, self.params, U,
                                              H[offsets[b]:offsets[b + 1]], cfg.score)[0]
        return out

    def predict_proba(self, records, batch: int = 64) -> np.ndarray:
        if not records:
            return np.zeros((0, self.n_codes))
        return sigmoid(self.predict_logits(records, batch))

    def attention(self, record):
        """Raw scores and (soft head) softmax weights, each (n, m)."""
        from .matcher import attention_scores
        from .numerics import softmax
        H = self.description_vectors(record.descriptions)
        A = attention_scores(self.code_vectors(), H, self.config.score)
        return A, softmax(A, axis=1)

    def labels(self, records) -> np.ndarray:
        idx = {c: i for i, c in enumerate(self.codes)}
        Y = np.zeros((len(records), self.n_codes))
        for b, r in enumerate(records):
            for c in r.codes:
                if c in idx:
                    Y[b, idx[c]] = 1.0
        return Y
