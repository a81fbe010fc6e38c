"""Finite-difference checks for every layer type and a tiny end-to-end model."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import grad_check_params, parameter
from .model import (
    BasisNode,
    DfmimConfig,
    DfmimModel,
    basis_score,
    head_forward,
    total_loss,
)
from .nn import (
    FocalLossParams,
    dense,
    focal_loss,
    init_encoder,
    mse_loss,
    self_attention,
    transformer_encoder,
)
from .funcore import make_grid

TOLERANCE = 1e-4
STEP = 1e-5


def _project(out, rng):
    """Scalar ``sum(out * R)`` with a fixed random ``R``."""
    return ag.tsum(ag.mul(out, rng.standard_normal(out.shape)))


def tiny_config(task: str = "regression", layout: str = "pre") -> DfmimConfig:
    return DfmimConfig(
        p=2, K=2, C=1 if task == "regression" else 3, n_grid=8, n_enc=1, heads=1, ff_dim=6,
        basis_width=4, head_dim=5, dropout=0.0, task=task, encoder_layout=layout,
    )


def _case_dense(activation):
    def case(rng):
        x = parameter(rng.standard_normal((3, 4)))
        W = parameter(rng.standard_normal((4, 5)))
        b = parameter(rng.standard_normal(5))
        R = rng.standard_normal((3, 5))
        return lambda: ag.tsum(ag.mul(dense(x, W, b, activation), R)), [x, W, b]
    return case


def _case_layer_norm(rng):
    x = parameter(rng.standard_normal((3, 6)))
    g = parameter(rng.standard_normal(6))
    b = parameter(rng.standard_normal(6))
    R = rng.standard_normal((3, 6))
    return lambda: ag.tsum(ag.mul(ag.layer_norm(x, g, b), R)), [x, g, b]


def _case_softmax(rng):
    x = parameter(rng.standard_normal((3, 5)))
    R = rng.standard_normal((3, 5))
    return lambda: ag.tsum(ag.mul(ag.softmax(x), R)), [x]


def _case_attention(rng):
    d, n = 8, 4
    x = parameter(rng.standard_normal((n, d)))
    Ws = [parameter(rng.standard_normal((d, d)) / np.sqrt(d)) for _ in range(4)]
    R = rng.standard_normal((n, d))
    return lambda: ag.tsum(ag.mul(self_attention(x, *Ws, heads=2), R)), [x, *Ws]


def _case_encoder(layout):
    def case(rng):
        d, n = 8, 4
        x = parameter(rng.standard_normal((n, d)))
        params = {k: parameter(v) for k, v in init_encoder(rng, d, 12).items()}
        for k in ("ln1_b", "b1", "b2", "ln2_b"):
            params[k].data[:] = 0.1 * rng.standard_normal(params[k].shape)
        R = rng.standard_normal((n, d))
        fn = lambda: ag.tsum(ag.mul(transformer_encoder(x, params, 2, layout=layout), R))
        return fn, [x, *params.values()]
    return case


def _case_focal(gamma):
    def case(rng):
        logits = parameter(rng.standard_normal((4, 3)))
        labels = rng.integers(0, 3, size=4)
        return lambda: focal_loss(logits, labels, FocalLossParams(gamma)), [logits]
    return case


def _case_mse(rng):
    pred = parameter(rng.standard_normal(6))
    target = rng.standard_normal(6)
    return lambda: mse_loss(pred, target), [pred]


def _case_basis_score(rng):
    node = BasisNode.init(rng, width=8, depth=3)
    grid = make_grid(12)
    channel = rng.standard_normal(grid.n)
    return lambda: basis_score(node, channel, grid), node.parameters()


def _case_head(rng):
    cfg = tiny_config("classification")
    model = DfmimModel.init(cfg, rng)
    scores = parameter(rng.standard_normal((3, cfg.p * cfg.K)))
    R = rng.standard_normal((3, cfg.C))
    head = [v for k, v in model.params.items() if k.startswith("head.")]
    return lambda: ag.tsum(ag.mul(head_forward(model, scores), R)), [scores, *head]


def _case_model(task):
    def case(rng):
        cfg = tiny_config(task)
        model = DfmimModel.init(cfg, rng)
        X = rng.standard_normal((3, cfg.n_grid, cfg.p))
        if task == "regression":
            y = rng.standard_normal(3)
        else:
            y = rng.integers(0, cfg.C, size=3)
        return lambda: total_loss(model, X, y), list(model.params.values())
    return case


CASES = {
    "dense[tanh]": _case_dense("tanh"),
    "dense[relu]": _case_dense("relu"),
    "dense[identity]": _case_dense("identity"),
    "layer_norm": _case_layer_norm,
    "softmax": _case_softmax,
    "self_attention": _case_attention,
    "encoder[post]": _case_encoder("post"),
    "encoder[pre]": _case_encoder("pre"),
    "encoder[plain]": _case_encoder("plain"),
    "focal_loss[gamma=0]": _case_focal(0.0),
    "focal_loss[gamma=2]": _case_focal(2.0),
    "mse_loss": _case_mse,
    "basis_score": _case_basis_score,
    "head": _case_head,
    "model[regression]": _case_model("regression"),
    "model[classification]": _case_model("classification"),
}


def run_gradchecks(seeds=range(5), cases=None, eps: float = STEP):
    """Yield ``(case, seed, max_relative_error)`` for every case and seed."""
    for name in cases or CASES:
        for seed in seeds:
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), 5]))
            fn, params = CASES[name](rng)
            yield name, seed, grad_check_params(fn, params, eps)
