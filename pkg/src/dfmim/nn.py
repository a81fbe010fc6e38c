"""Neural building blocks on top of the autograd engine."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import InvalidArgument, ShapeError

ACTIVATIONS = {
    "tanh": ag.tanh,
    "relu": ag.relu,
    "identity": lambda x: x,
}


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def dense(x, W, b, activation: str = "identity") -> Tensor:
    """``activation(x @ W + b)``."""
    if activation not in ACTIVATIONS:
        raise InvalidArgument(f"unknown activation {activation!r}")
    x, W = ag.as_tensor(x), ag.as_tensor(W)
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"dense: input width {x.shape[-1]} vs weight rows {W.shape[0]}")
    if x.ndim == 1:
        out = ag.reshape(ag.matmul(ag.reshape(x, (1, -1)), W), (W.shape[1],))
    else:
        out = ag.matmul(x, W)
    return ACTIVATIONS[activation](ag.add(out, b))


def dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    return (rng.random(shape) >= rate).astype(np.float64)


def apply_dropout(x: Tensor, rate: float, rng) -> Tensor:
    """Inverted dropout; a no-op when ``rng`` is None or ``rate`` is 0."""
    if rng is None or rate <= 0.0:
        return x
    return ag.dropout(x, dropout_mask(rng, x.shape, rate), 1.0 - rate)


def _split_heads(t: Tensor, heads: int) -> Tensor:
    b, n, d = t.shape
    return ag.transpose(ag.reshape(t, (b, n, heads, d // heads)), (0, 2, 1, 3))


def self_attention(x, Wq, Wk, Wv, Wo, heads: int, return_weights: bool = False):
    """Multi-head scaled dot-product self-attention.

    ``x`` is ``(seq_len, d)`` or ``(batch, seq_len, d)``; projections are
    ``d x d`` without biases.
    """
    x = ag.as_tensor(x)
    d = x.shape[-1]
    if heads < 1 or d % heads:
        raise InvalidArgument(f"model dimension {d} is not divisible by {heads} heads")
    squeeze = x.ndim == 2
    if squeeze:
        x = ag.reshape(x, (1,) + x.shape)
    if x.ndim != 3:
        raise ShapeError(f"self_attention expects 2-D or 3-D input, got {x.shape}")
    b, n, _ = x.shape
    dh = d // heads
    q = _split_heads(ag.matmul(x, Wq), heads)
    k = _split_heads(ag.matmul(x, Wk), heads)
    v = _split_heads(ag.matmul(x, Wv), heads)
    scores = ag.scale(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    weights = ag.softmax(scores)
    ctx = ag.matmul(weights, v)
    ctx = ag.reshape(ag.transpose(ctx, (0, 2, 1, 3)), (b, n, d))
    out = ag.matmul(ctx, Wo)
    if squeeze:
        out = ag.reshape(out, (n, d))
    if return_weights:
        return out, weights.data
    return out


ENCODER_LAYOUTS = ("post", "pre", "plain")
ENCODER_KEYS = (
    "Wq", "Wk", "Wv", "Wo", "ln1_g", "ln1_b", "W1", "b1", "W2", "b2", "ln2_g", "ln2_b",
)


def init_encoder(rng: np.random.Generator, d: int, ff_dim: int) -> dict:
    p = {}
    for key in ("Wq", "Wk", "Wv", "Wo"):
        p[key] = uniform_fan_in(rng, (d, d), d)
    p["ln1_g"], p["ln1_b"] = np.ones(d), np.zeros(d)
    p["W1"], p["b1"] = uniform_fan_in(rng, (d, ff_dim), d), np.zeros(ff_dim)
    p["W2"], p["b2"] = uniform_fan_in(rng, (ff_dim, d), ff_dim), np.zeros(d)
    p["ln2_g"], p["ln2_b"] = np.ones(d), np.zeros(d)
    return p


def transformer_encoder(
    x, params: dict, heads: int, dropout: float = 0.0, rng=None, layout: str = "post"
) -> Tensor:
    """Encoder block with self-attention and a ReLU feed-forward network.

    ``post``: ``y = LN(x + drop(SA(x)))``, ``out = LN(y + drop(FF(y)))``.
    ``pre``: ``y = x + drop(SA(LN(x)))``, ``out = y + drop(FF(LN(y)))``;
    the residual stream is never normalized, so per-token mean and scale
    survive the block.
    ``plain``: ``y = x + drop(SA(x))``, ``out = y + drop(FF(y))``; the layer
    norm parameters are ignored, so sublayers also see absolute magnitudes.
    Dropout is active only when ``rng`` is given.
    """
    x = ag.as_tensor(x)
    if layout not in ENCODER_LAYOUTS:
        raise InvalidArgument(f"unknown encoder layout {layout!r}")

    def attend(t):
        return apply_dropout(
            self_attention(t, params["Wq"], params["Wk"], params["Wv"], params["Wo"], heads),
            dropout, rng,
        )

    def feed_forward(t):
        h = dense(t, params["W1"], params["b1"], "relu")
        return apply_dropout(dense(h, params["W2"], params["b2"], "identity"), dropout, rng)

    if layout == "post":
        y = ag.layer_norm(ag.add(x, attend(x)), params["ln1_g"], params["ln1_b"])
        return ag.layer_norm(ag.add(y, feed_forward(y)), params["ln2_g"], params["ln2_b"])
    if layout == "plain":
        y = ag.add(x, attend(x))
        return ag.add(y, feed_forward(y))
    y = ag.add(x, attend(ag.layer_norm(x, params["ln1_g"], params["ln1_b"])))
    return ag.add(y, feed_forward(ag.layer_norm(y, params["ln2_g"], params["ln2_b"])))


@lru_cache(maxsize=32)
def positional_encoding(length: int, d: int) -> np.ndarray:
    """Sinusoidal encoding: sin on even, cos on odd embedding indices (read-only, cached)."""
    pos = np.arange(length)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    pe.setflags(write=False)
    return pe


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict | None = None) -> None:
    """One bias-corrected Adam update, in place on ``params[name].data``.

    ``grads`` defaults to each parameter's ``.grad``; a missing gradient
    counts as zero.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = p.grad if grads is None else grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {p.data.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass(frozen=True)
class FocalLossParams:
    gamma: float = 2.0
    class_weights: tuple | None = None

    def __post_init__(self):
        if self.gamma < 0:
            raise InvalidArgument(f"focal gamma must be >= 0, got {self.gamma}")
        if self.class_weights is not None and any(w <= 0 for w in self.class_weights):
            raise InvalidArgument("class weights must be positive")


def focal_loss(logits, labels, params: FocalLossParams = FocalLossParams()) -> Tensor:
    """Mean of ``-w_y (1 - p_y)^gamma log p_y`` with ``p = softmax(logits)``.

    ``logits`` is ``(C,)`` with an integer label, or ``(B, C)`` with ``B`` labels.
    """
    logits = ag.as_tensor(logits)
    single = logits.ndim == 1
    if single:
        logits = ag.reshape(logits, (1, -1))
    labels = np.atleast_1d(np.asarray(labels))
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"{n} logit rows but {labels.size} labels")
    if np.any(labels < 0) or np.any(labels >= c) or not np.issubdtype(labels.dtype, np.integer):
        raise InvalidArgument(f"labels must be integers in [0, {c})")
    logp = ag.getitem(ag.log_softmax(logits), (np.arange(n), labels))
    term = logp
    if params.gamma != 0.0:
        modulator = ag.power(ag.sub(1.0, ag.exp(logp)), params.gamma)
        term = ag.mul(modulator, logp)
    if params.class_weights is not None:
        if len(params.class_weights) != c:
            raise ShapeError(f"{len(params.class_weights)} class weights for {c} classes")
        term = ag.mul(term, np.asarray(params.class_weights, dtype=np.float64)[labels])
    return ag.neg(ag.mean(term))


def mse_loss(pred, target) -> Tensor:
    pred, target = ag.as_tensor(pred), ag.as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: {pred.shape} vs {target.shape}")
    diff = ag.sub(pred, target)
    return ag.mean(ag.mul(diff, diff))
