"""Code/description matching heads.

For one record with description vectors ``H`` (m x d) and code vectors
``U`` (n x d), every head produces per-code logits ``z`` (n,); the assignment
probability is ``sigmoid(z)``.

* hard:   z_i = max_j a_ij
* soft:   z_i = w_i . sum_j softmax(a_i)_j h_j   (+ optional bias)
* linear: z_i = v_i . [u_i ; mean_j h_j]        (+ optional bias), no attention
"""
from __future__ import annotations

import numpy as np

from .numerics import as_float, sigmoid, softmax

HEADS = ("hard", "soft", "linear")
SCORES = ("dot", "cosine")
NORM_EPS = 1e-12


def attention_scores(U, H, score: str = "dot") -> np.ndarray:
    """a[i, j] = <u_i, h_j>; ``score="cosine"`` length-normalizes both sides."""
    U = np.atleast_2d(as_float(U))
    H = np.atleast_2d(as_float(H))
    if U.shape[1] != H.shape[1]:
        raise ValueError(f"dimension mismatch: codes {U.shape[1]} vs descriptions {H.shape[1]}")
    if score == "dot":
        return U @ H.T
    if score == "cosine":
        nu = np.sqrt((U * U).sum(1) + NORM_EPS)
        nh = np.sqrt((H * H).sum(1) + NORM_EPS)
        return (U @ H.T) / nu[:, None] / nh[None, :]
    raise ValueError(f"unknown score {score!r}")


def hard_select(score_row) -> float:
    row = as_float(score_row)
    if row.size == 0:
        raise ValueError("empty score row")
    return sigmoid(row.max())


def soft_attend(score_row, H) -> np.ndarray:
    """Softmax-weighted average of the rows of ``H``."""
    row = as_float(score_row)
    H = np.atleast_2d(as_float(H))
    if row.size == 0 or H.shape[0] == 0:
        raise ValueError("empty attention inputs")
    if row.size != H.shape[0]:
        raise ValueError("score row and description matrix disagree on m")
    return softmax(row) @ H


def project(proj_w, attended, i: int, bias=None) -> float:
    proj_w = np.atleast_2d(proj_w)
    if not 0 <= i < proj_w.shape[0]:
        raise IndexError(f"code index {i} out of range for {proj_w.shape[0]} codes")
    s = float(proj_w[i] @ np.asarray(attended, dtype=np.float64))
    if bias is not None:
        s += float(bias[i])
    return sigmoid(s)


def linear_baseline_predict(base_w, U, H, bias=None) -> np.ndarray:
    """sigmoid(v_i . [u_i ; mean_j h_j]) for every code i."""
    H = np.atleast_2d(H)
    if H.shape[0] == 0:
        raise ValueError("record has no descriptions")
    d = U.shape[1]
    z = (base_w[:, :d] * U).sum(1) + base_w[:, d:] @ H.mean(axis=0)
    if bias is not None:
        z = z + bias
    return sigmoid(z)


# ------------------------------------------------------------ head forward/backward

def head_forward(head: str, params: dict, U: np.ndarray, H: np.ndarray, score: str = "dot"):
    """Logits (n,) for one record plus a cache for :func:`head_backward`."""
    if H.shape[0] == 0:
        raise ValueError("record has no descriptions")
    if head == "linear":
        hbar = H.mean(axis=0)
        w = params["base.w"]
        d = U.shape[1]
        z = (w[:, :d] * U).sum(1) + w[:, d:] @ hbar
        if "base.b" in params:
            z = z + params["base.b"]
        return z, {"hbar": hbar}
    A = attention_scores(U, H, score)
    if head == "hard":
        arg = A.argmax(axis=1)  # first index on ties
        return A[np.arange(A.shape[0]), arg], {"A": A, "arg": arg}
    if head == "soft":
        W = softmax(A, axis=1)
        Ut = W @ H
        z = (params["proj.w"] * Ut).sum(1)
        if "proj.b" in params:
            z = z + params["proj.b"]
        return z, {"A": A, "W": W, "Ut": Ut}
    raise ValueError(f"unknown head {head!r}")


def _scores_backward(dA, U, H, score, grads_U, grads_H):
    if score == "dot":
        grads_U += dA @ H
        grads_H += dA.T @ U
        return
    nu = np.sqrt((U * U).sum(1) + NORM_EPS)
    nh = np.sqrt((H * H).sum(1) + NORM_EPS)
    Un, Hn = U / nu[:, None], H / nh[:, None]
    dUn = dA @ Hn
    dHn = dA.T @ Un
    grads_U += dUn / nu[:, None] - U * ((dUn * U).sum(1) / nu**3)[:, None]
    grads_H += dHn / nh[:, None] - H * ((dHn * H).sum(1) / nh**3)[:, None]


def head_backward(head: str, params: dict, U, H, cache, dz, grads: dict, score: str = "dot"):
    """Accumulate parameter grads into ``grads``; return (dU, dH)."""
    dU = np.zeros_like(U)
    dH = np.zeros_like(H)
    if head == "linear":
        w = params["base.w"]
        d = U.shape[1]
        gw = grads.setdefault("base.w", np.zeros_like(w))
        gw[:, :d] += dz[:, None] * U
        gw[:, d:] += dz[:, None] * cache["hbar"]
        if "base.b" in params:
            grads.setdefault("base.b", np.zeros_like(params["base.b"]))
            grads["base.b"] += dz
        dU += dz[:, None] * w[:, :d]
        dH += (dz @ w[:, d:]) / H.shape[0]
        return dU, dH
    A = cache["A"]
    if head == "hard":
        dA = np.zeros_like(A)
        dA[np.arange(A.shape[0]), cache["arg"]] = dz
    else:
        W, Ut = cache["W"], cache["Ut"]
        w = params["proj.w"]
        gw = grads.setdefault("proj.w", np.zeros_like(w))
        gw += dz[:, None] * Ut
        if "proj.b" in params:
            grads.setdefault("proj.b", np.zeros_like(params["proj.b"]))
            grads["proj.b"] += dz
        dUt = dz[:, None] * w
        dW = dUt @ H.T
        dH += W.T @ dUt
        dA = W * (dW - (W * dW).sum(1, keepdims=True))
    _scores_backward(dA, U, H, score, dU, dH)
    return dU, dH


def predict(model, record) -> np.ndarray:
    """Assignment probabilities (n,) of ``model`` for one record."""
    return model.predict_proba([record])[0]
