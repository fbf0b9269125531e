"""Float64 reference implementations of the connector, pooling, auxiliary
classification head and the weighted training objective.

Intended as a golden-value source for checking a training stack; inputs are
plain arrays and every function checks shapes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf


class ShapeMismatch(ValueError):
    pass


class EmptySequence(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.3  # auxiliary loss weight
    gamma: float = 5.0  # boost on the leading tokens
    m: int = 15  # number of boosted tokens

    def __post_init__(self):
        if self.lam < 0 or self.gamma < 0:
            raise ValueError("lam and gamma must be non-negative")
        if self.m < 1:
            raise ValueError("m must be positive")


def _arr(x, ndim: int, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != ndim:
        raise ShapeMismatch(f"{name}: expected {ndim}-d, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: non-finite entries")
    return a


def gelu(x) -> np.ndarray:
    """Exact GELU, 0.5 x (1 + erf(x / sqrt 2))."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def connector_forward(T, W1, b1, W2, b2) -> np.ndarray:
    """Two-layer MLP applied per row: ``W2 @ gelu(W1 @ t + b1) + b2``.

    ``T`` is (L, d_in); ``W1`` is (d_hidden, d_in); ``W2`` is (d_out, d_hidden).
    """
    T = _arr(T, 2, "T")
    W1, W2 = _arr(W1, 2, "W1"), _arr(W2, 2, "W2")
    b1, b2 = _arr(b1, 1, "b1"), _arr(b2, 1, "b2")
    if W1.shape[1] != T.shape[1]:
        raise ShapeMismatch(f"W1 {W1.shape} does not accept rows of width {T.shape[1]}")
    if b1.shape[0] != W1.shape[0] or W2.shape[1] != W1.shape[0] or b2.shape[0] != W2.shape[0]:
        raise ShapeMismatch("connector weights are not conformable")
    hidden = gelu(T @ W1.T + b1)
    return hidden @ W2.T + b2


def gap(H) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2:
        raise ShapeMismatch(f"expected (L, d), got {H.shape}")
    if H.shape[0] == 0:
        raise EmptySequence("cannot pool an empty sequence")
    return H.mean(axis=0)


def softmax(z) -> np.ndarray:
    z = _arr(z, 1, "logits")
    e = np.exp(z - z.max())
    return e / e.sum()


def log_softmax(z) -> np.ndarray:
    z = _arr(z, 1, "logits")
    shifted = z - z.max()
    return shifted - np.log(np.exp(shifted).sum())


def aux_logits(h, W_cls, b_cls) -> np.ndarray:
    h = _arr(h, 1, "h")
    W = _arr(W_cls, 2, "W_cls")
    b = _arr(b_cls, 1, "b_cls")
    if W.shape[1] != h.shape[0] or W.shape[0] != b.shape[0]:
        raise ShapeMismatch(f"W_cls {W.shape}, b_cls {b.shape} vs h {h.shape}")
    return W @ h + b


def aux_head(h, W_cls, b_cls) -> np.ndarray:
    """Class probabilities ``softmax(W_cls h + b_cls)``."""
    return softmax(aux_logits(h, W_cls, b_cls))


def _one_hot(y, c: int) -> np.ndarray:
    if np.ndim(y) == 0:
        idx = int(y)
        if not 0 <= idx < c:
            raise ShapeMismatch(f"class index {idx} out of range for {c} classes")
        out = np.zeros(c)
        out[idx] = 1.0
        return out
    y = _arr(y, 1, "y")
    if y.shape[0] != c:
        raise ShapeMismatch(f"y has {y.shape[0]} entries, expected {c}")
    if not (np.all((y == 0) | (y == 1)) and y.sum() == 1):
        raise ValueError("y must be one-hot")
    return y


def aux_loss(p, y) -> float:
    """Cross-entropy ``-log p_y`` for a probability vector and one-hot (or index) target."""
    p = _arr(p, 1, "p")
    y = _one_hot(y, p.shape[0])
    py = float(p[y.argmax()])
    return float("inf") if py == 0.0 else float(-np.log(py))


def aux_loss_from_logits(z, y) -> tuple[float, np.ndarray]:
    """Cross-entropy and its gradient with respect to the logits (``p - y``)."""
    z = _arr(z, 1, "logits")
    y = _one_hot(y, z.shape[0])
    loss = -float(log_softmax(z) @ y)
    return loss, softmax(z) - y


def positional_weights(length: int, cfg: LossConfig = LossConfig()) -> np.ndarray:
    """``1 + gamma`` for 1-indexed positions ``t <= m``, else 1."""
    t = np.arange(1, length + 1)
    return np.where(t <= cfg.m, 1.0 + cfg.gamma, 1.0)


def weighted_gen_loss(logprobs, cfg: LossConfig = LossConfig(), weights=None) -> float:
    """``-(1/T) * sum_t w_t * logprob_t`` over target-token log-probabilities."""
    lp = _arr(logprobs, 1, "logprobs")
    if lp.size == 0:
        raise EmptySequence("no target tokens")
    if np.any(lp > 0):
        raise ValueError("log-probabilities must be <= 0")
    w = positional_weights(lp.size, cfg) if weights is None else _arr(weights, 1, "weights")
    if w.shape != lp.shape:
        raise ShapeMismatch(f"weights {w.shape} vs logprobs {lp.shape}")
    return float(-(w * lp).sum() / lp.size)


def total_loss(l_gen: float, l_aux: float, cfg: LossConfig = LossConfig()) -> float:
    return float(l_gen) + cfg.lam * float(l_aux)


def evaluate_case(case: dict) -> dict:
    """Compute every quantity a JSON case supplies inputs for.

    ``case = {"config": {"lambda", "gamma", "m"}, "inputs": {...}}``. Inputs may
    include ``T, W1, b1, W2, b2`` (connector), ``H`` or ``h`` (pooling / pooled
    vector), ``W_cls, b_cls`` with ``label`` (auxiliary head), ``logits`` and
    ``logprobs``.
    """
    conf = case.get("config", {})
    cfg = LossConfig(lam=float(conf.get("lambda", 0.3)), gamma=float(conf.get("gamma", 5.0)), m=int(conf.get("m", 15)))
    inp = case.get("inputs", {})
    out: dict = {}
    H = inp.get("H")
    if all(k in inp for k in ("T", "W1", "b1", "W2", "b2")):
        H = connector_forward(inp["T"], inp["W1"], inp["b1"], inp["W2"], inp["b2"])
        out["H_align"] = H.tolist()
    h = inp.get("h")
    if H is not None:
        h = gap(H)
        out["H_pool"] = h.tolist()
    logits = inp.get("logits")
    if h is not None and "W_cls" in inp and "b_cls" in inp:
        logits = aux_logits(h, inp["W_cls"], inp["b_cls"])
        out["p_cls"] = softmax(logits).tolist()
    if logits is not None:
        out.setdefault("p_cls", softmax(logits).tolist())
        out["predicted_class"] = int(np.argmax(logits))
        if "label" in inp:
            l_aux, grad = aux_loss_from_logits(logits, inp["label"])
            out["l_aux"] = l_aux
            out["grad_logits"] = grad.tolist()
    if "logprobs" in inp:
        lp = np.asarray(inp["logprobs"], dtype=np.float64)
        out["weights"] = positional_weights(lp.size, cfg).tolist()
        out["l_gen"] = weighted_gen_loss(lp, cfg)
    if "l_gen" in out and "l_aux" in out:
        out["l_total"] = total_loss(out["l_gen"], out["l_aux"], cfg)
    out["config"] = {"lambda": cfg.lam, "gamma": cfg.gamma, "m": cfg.m}
    return out
