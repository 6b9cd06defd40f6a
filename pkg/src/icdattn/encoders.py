"""LSTM cell and the two-level (character -> word -> sentence) text encoders.

Two code paths compute the same recurrence:

* ``lstm_step`` / ``run_lstm`` follow the gate equations one vector at a time
  with the eight weight matrices kept separate. They are the readable
  reference and are used for single-sequence encoding.
* ``lstm_forward`` / ``lstm_backward`` run a padded batch of sequences with
  the gate matrices fused, and carry the exact backward pass used in
  training.
"""
from __future__ import annotations

import logging
from collections import namedtuple

import numpy as np

from .corpus import tokenize
from .numerics import Rng, sigmoid

log = logging.getLogger(__name__)

VARIANTS = ("char-lstm", "word-embed-random", "word-embed-pretrained", "avg-pool")
GATES = ("i", "f", "g", "o")
# (input matrix, recurrent matrix, input bias, recurrent bias) per gate;
# the cell gate's recurrent matrix is named W_hc, its recurrent bias b_hg.
GATE_NAMES = {
    "i": ("W_ii", "W_hi", "b_ii", "b_hi"),
    "f": ("W_if", "W_hf", "b_if", "b_hf"),
    "g": ("W_ig", "W_hc", "b_ig", "b_hg"),
    "o": ("W_io", "W_ho", "b_io", "b_ho"),
}
LSTM_KEYS = tuple(k for g in GATES for k in GATE_NAMES[g])

LstmState = namedtuple("LstmState", ["h", "c"])


def init_lstm(input_dim: int, hidden_dim: int, rng: Rng) -> dict:
    """Weights ~ U(-1/sqrt(hidden), 1/sqrt(hidden)), biases zero."""
    bound = 1.0 / np.sqrt(hidden_dim)
    p = {}
    for g in GATES:
        wx, wh, bx, bh = GATE_NAMES[g]
        p[wx] = rng.uniform(-bound, bound, (hidden_dim, input_dim))
        p[wh] = rng.uniform(-bound, bound, (hidden_dim, hidden_dim))
        p[bx] = np.zeros(hidden_dim)
        p[bh] = np.zeros(hidden_dim)
    return p


def zero_state(hidden_dim: int) -> LstmState:
    return LstmState(np.zeros(hidden_dim), np.zeros(hidden_dim))


def lstm_step(params: dict, x_t, prev: LstmState) -> LstmState:
    x_t = np.asarray(x_t, dtype=np.float64)
    if params["W_ii"].shape[1] != x_t.shape[-1] or params["W_hi"].shape[1] != prev.h.shape[-1]:
        raise ValueError(f"lstm_step dim mismatch: input {x_t.shape}, hidden {prev.h.shape}, "
                         f"W_ii {params['W_ii'].shape}")
    p, h = params, prev.h
    i = sigmoid(p["W_ii"] @ x_t + p["b_ii"] + p["W_hi"] @ h + p["b_hi"])
    f = sigmoid(p["W_if"] @ x_t + p["b_if"] + p["W_hf"] @ h + p["b_hf"])
    g = np.tanh(p["W_ig"] @ x_t + p["b_ig"] + p["W_hc"] @ h + p["b_hg"])
    o = sigmoid(p["W_io"] @ x_t + p["b_io"] + p["W_ho"] @ h + p["b_ho"])
    c = f * prev.c + i * g
    return LstmState(o * np.tanh(c), c)


def run_lstm(params: dict, inputs):
    """Run from the zero state; returns ``(final_state, per_step_states)``."""
    inputs = list(inputs)
    if not inputs:
        raise ValueError("empty sequence")
    state = zero_state(params["W_hi"].shape[0])
    states = []
    for x in inputs:
        state = lstm_step(params, x, state)
        states.append(state)
    return state, states


# ------------------------------------------------------------ batched path

def _fused(params: dict):
    wx = np.concatenate([params[GATE_NAMES[g][0]] for g in GATES], axis=0)
    wh = np.concatenate([params[GATE_NAMES[g][1]] for g in GATES], axis=0)
    b = np.concatenate([params[GATE_NAMES[g][2]] + params[GATE_NAMES[g][3]] for g in GATES])
    return wx, wh, b


def lstm_forward(params: dict, X: np.ndarray, mask: np.ndarray):
    """Batched LSTM over left-aligned padded sequences.

    X is (T, B, D), mask is (T, B) with 1 on real steps. Rows past their
    length carry their state forward unchanged, so the returned (B, H) hidden
    state is each sequence's last real step.
    """
    T, B, _ = X.shape
    wx, wh, b = _fused(params)
    H = wh.shape[1]
    xz = X @ wx.T + b
    h = np.zeros((B, H), dtype=xz.dtype)
    c = np.zeros((B, H), dtype=xz.dtype)
    # one tanh per step for all four gates: sigmoid(x) = (1 + tanh(x/2)) / 2
    half = np.full(4 * H, 0.5, dtype=xz.dtype)
    half[2 * H:3 * H] = 1.0
    steps = []
    for t in range(T):
        a = np.tanh((xz[t] + h @ wh.T) * half)
        s = 0.5 + 0.5 * a
        i, f, o = s[:, :H], s[:, H:2 * H], s[:, 3 * H:]
        g = a[:, 2 * H:3 * H]
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        m = mask[t][:, None]
        steps.append((h, c, i, f, g, o, tc, m))
        live = m > 0
        h = np.where(live, h_new, h)
        c = np.where(live, c_new, c)
    return h, {"X": X, "steps": steps, "wx": wx, "wh": wh}


def lstm_backward(params: dict, cache: dict, dh: np.ndarray):
    """Gradients of a loss given ``dh`` = dLoss/d(final hidden state).

    Returns ``(dX, grads)`` with grads keyed like ``params``.
    """
    X, steps, wx, wh = cache["X"], cache["steps"], cache["wx"], cache["wh"]
    T, B, _ = X.shape
    H = wh.shape[1]
    dc = np.zeros((B, H))
    dZ = np.zeros((T, B, 4 * H))
    dwh = np.zeros_like(wh)
    for t in range(T - 1, -1, -1):
        h_prev, c_prev, i, f, g, o, tc, m = steps[t]
        dhn = m * dh
        dcn = m * dc + dhn * o * (1.0 - tc * tc)
        dz = dZ[t]
        dz[:, :H] = dcn * g * i * (1.0 - i)
        dz[:, H:2 * H] = dcn * c_prev * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dcn * i * (1.0 - g * g)
        dz[:, 3 * H:] = dhn * tc * o * (1.0 - o)
        dwh += dz.T @ h_prev
        dh = dz @ wh + (1.0 - m) * dh
        dc = dcn * f + (1.0 - m) * dc
    flatZ = dZ.reshape(T * B, 4 * H)
    dwx = flatZ.T @ X.reshape(T * B, -1)
    db = flatZ.sum(axis=0)
    dX = dZ @ wx
    grads = {}
    for k, gname in enumerate(GATES):
        sl = slice(k * H, (k + 1) * H)
        wxn, whn, bxn, bhn = GATE_NAMES[gname]
        grads[wxn] = dwx[sl]
        grads[whn] = dwh[sl]
        grads[bxn] = db[sl].copy()
        grads[bhn] = db[sl].copy()
    return dX, grads


def pad_ids(seqs: list):
    """(T, B) int ids and float mask for a list of id lists."""
    T = max(len(s) for s in seqs)
    ids = np.zeros((T, len(seqs)), dtype=np.int64)
    mask = np.zeros((T, len(seqs)))
    for j, s in enumerate(seqs):
        ids[:len(s), j] = s
        mask[:len(s), j] = 1.0
    return ids, mask


# ------------------------------------------------------------ encoder stack

class EncoderStack:
    """One side's encoder (descriptions or code titles).

    Parameters live in the model's flat parameter dict under ``prefix``; two
    stacks never share entries.
    """

    def __init__(self, params: dict, prefix: str, variant: str, char_vocab, word_vocab,
                 hidden_dim: int, char_embed_dim: int, word_embed_dim: int):
        if variant not in VARIANTS:
            raise ValueError(f"unknown encoder variant {variant!r}")
        self.params = params
        self.prefix = prefix
        self.variant = variant
        self.char_vocab = char_vocab
        self.word_vocab = word_vocab
        self.hidden_dim = hidden_dim
        self.char_embed_dim = char_embed_dim
        self.word_embed_dim = word_embed_dim

    @property
    def uses_chars(self) -> bool:
        return self.variant in ("char-lstm", "avg-pool")

    @property
    def uses_word_lstm(self) -> bool:
        return self.variant != "avg-pool"

    @property
    def lowercase(self) -> bool:
        return self.variant == "word-embed-pretrained"

    def key(self, name: str) -> str:
        return f"{self.prefix}.{name}"

    def sub(self, group: str) -> dict:
        pre = f"{self.prefix}.{group}."
        return {k: self.params[pre + k] for k in LSTM_KEYS}

    def init_params(self, rng: Rng) -> None:
        H = self.hidden_dim
        bound = 1.0 / np.sqrt(H)
        if self.uses_chars:
            self.params[self.key("char_embed")] = rng.uniform(
                -bound, bound, (len(self.char_vocab), self.char_embed_dim))
            for k, v in init_lstm(self.char_embed_dim, H, rng).items():
                self.params[self.key(f"char_lstm.{k}")] = v
            word_in = H
        else:
            self.params[self.key("word_embed")] = rng.uniform(
                -bound, bound, (len(self.word_vocab), self.word_embed_dim))
            word_in = self.word_embed_dim
        if self.uses_word_lstm:
            for k, v in init_lstm(word_in, H, rng).items():
                self.params[self.key(f"word_lstm.{k}")] = v

    def seed_embeddings(self, vectors: dict) -> int:
        """Copy pretrained rows into the word embedding; returns rows filled."""
        E = self.params[self.key("word_embed")]
        hits = 0
        for idx, word in enumerate(self.word_vocab.itos):
            vec = vectors.get(word.lower())
            if vec is not None and idx > 0:
                if len(vec) != E.shape[1]:
                    raise ValueError(f"pretrained dim {len(vec)} != embedding dim {E.shape[1]}")
                E[idx] = vec
                hits += 1
        return hits

    def _norm(self, word: str) -> str:
        return word.lower() if self.lowercase else word

    # -- word vectors

    def _word_vectors(self, words: list):
        if self.uses_chars:
            seqs = [[self.char_vocab.index(ch) for ch in w] for w in words]
            ids, mask = pad_ids(seqs)
            E = self.params[self.key("char_embed")][ids] * mask[:, :, None]
            V, lc = lstm_forward(self.sub("char_lstm"), E, mask)
            return V, ("chars", ids, mask, lc)
        ids = np.array([self.word_vocab.index(self._norm(w)) for w in words], dtype=np.int64)
        return self.params[self.key("word_embed")][ids], ("words", ids)

    def _word_vectors_backward(self, wcache, dV, grads: dict) -> None:
        if wcache[0] == "chars":
            _, ids, mask, lc = wcache
            dE, g = lstm_backward(self.sub("char_lstm"), lc, dV)
            for k, v in g.items():
                grads[self.key(f"char_lstm.{k}")] = v
            dEmb = np.zeros_like(self.params[self.key("char_embed")])
            np.add.at(dEmb, ids.ravel(), (dE * mask[:, :, None]).reshape(-1, dE.shape[-1]))
            grads[self.key("char_embed")] = dEmb
        else:
            _, ids = wcache
            dEmb = np.zeros_like(self.params[self.key("word_embed")])
            np.add.at(dEmb, ids, dV)
            grads[self.key("word_embed")] = dEmb

    # -- sentences

    def forward(self, sentences: list):
        """Encode token lists into an (S, hidden_dim) matrix."""
        if not sentences:
            raise ValueError("no sentences to encode")
        uniq, slot, token_ids = [], {}, []
        for words in sentences:
            if not words:
                raise ValueError("empty word list")
            row = []
            for w in words:
                if not w:
                    raise ValueError("empty word")
                k = self._norm(w)
                if k not in slot:
                    slot[k] = len(uniq)
                    uniq.append(w)
                row.append(slot[k])
            token_ids.append(row)
        V, wcache = self._word_vectors(uniq)
        ids, mask = pad_ids(token_ids)
        X = V[ids] * mask[:, :, None]
        if self.uses_word_lstm:
            S, sc = lstm_forward(self.sub("word_lstm"), X, mask)
        else:
            counts = mask.sum(axis=0)
            S, sc = X.sum(axis=0) / counts[:, None], counts
        return S, (wcache, ids, mask, len(uniq), sc)

    def backward(self, cache, dS: np.ndarray) -> dict:
        wcache, ids, mask, n_uniq, sc = cache
        grads = {}
        if self.uses_word_lstm:
            dX, g = lstm_backward(self.sub("word_lstm"), sc, dS)
            for k, v in g.items():
                grads[self.key(f"word_lstm.{k}")] = v
        else:
            dX = np.broadcast_to(dS / sc[:, None], (ids.shape[0],) + dS.shape)
        dX = dX * mask[:, :, None]
        dV = np.zeros((n_uniq, dX.shape[-1]))
        np.add.at(dV, ids.ravel(), dX.reshape(-1, dX.shape[-1]))
        self._word_vectors_backward(wcache, dV, grads)
        return grads

    def encode_texts(self, texts: list) -> np.ndarray:
        return self.forward([tokenize(t) for t in texts])[0]


def encode_word(stack: EncoderStack, word: str) -> np.ndarray:
    """Hidden vector of a single word (char LSTM or embedding row)."""
    if not word:
        raise ValueError("empty word")
    if stack.uses_chars:
        E = stack.params[stack.key("char_embed")]
        seq = [E[stack.char_vocab.index(ch)] for ch in word]
        return run_lstm(stack.sub("char_lstm"), seq)[0].h
    return stack.params[stack.key("word_embed")][stack.word_vocab.index(stack._norm(word))].copy()


def encode_sentence(stack: EncoderStack, words: list) -> np.ndarray:
    """Word LSTM over per-word vectors; last hidden state."""
    if not words:
        raise ValueError("empty word list")
    if not stack.uses_word_lstm:
        return average_encode(stack, words)
    vecs = [encode_word(stack, w) for w in words]
    return run_lstm(stack.sub("word_lstm"), vecs)[0].h


def average_encode(stack: EncoderStack, words: list) -> np.ndarray:
    if not words:
        raise ValueError("empty word list")
    return np.mean([encode_word(stack, w) for w in words], axis=0)


def encode_code_titles(code_stack: EncoderStack, code_table) -> np.ndarray:
    """Matrix whose row i encodes code i's long title."""
    if not code_table:
        raise ValueError("need at least one code")
    return code_stack.forward([tokenize(c.long_title) for c in code_table])[0]


def load_pretrained_vectors(path) -> dict:
    """Read word2vec text format: ``<count> <dim>`` header then ``word v1 .. vdim``.

    Keys are lowercased; a repeated word keeps its last vector (with a warning).
    """
    vectors = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}:1: header must be '<count> <dim>'")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError as exc:
            raise ValueError(f"{path}:1: header must be '<count> <dim>'") from exc
        for lineno, line in enumerate(fh, 2):
            parts = line.rstrip("\n").split(" ")
            if not line.strip():
                continue
            if len(parts) != dim + 1:
                raise ValueError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            try:
                vec = np.array([float(x) for x in parts[1:]])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-numeric value") from exc
            word = parts[0].lower()
            if word in vectors:
                log.warning("%s:%d: duplicate word %r, keeping the later vector",
                            path, lineno, word)
            vectors[word] = vec
    if len(vectors) != count:
        log.warning("%s: header announces %d vectors, read %d", path, count, len(vectors))
    return vectors
