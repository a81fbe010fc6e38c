"""Deep functional multiple-index model.

Three stages map a multivariate curve ``x`` (``n_grid x p`` samples) to an
output:

1. transformation: sinusoidal positions plus a stack of transformer
   encoders, with grid points as tokens and channels as the embedding;
2. deep functional network: ``p * K`` adaptive basis nodes, each a
   micro-network ``t -> theta(t)``, scored against its channel by
   trapezoid quadrature;
3. head: two tanh dense layers with dropout and a linear projection.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import InvalidArgument, ShapeError
from .funcore import Curve, Grid, make_grid, trapezoid_weights
from .nn import (
    ENCODER_KEYS,
    ENCODER_LAYOUTS,
    FocalLossParams,
    apply_dropout,
    dense,
    focal_loss,
    init_encoder,
    mse_loss,
    positional_encoding,
    transformer_encoder,
    uniform_fan_in,
)

TASKS = ("regression", "classification")


@dataclass(frozen=True)
class DfmimConfig:
    p: int = 40
    K: int = 4
    C: int = 4
    n_grid: int = 64
    n_enc: int = 2
    heads: int = 4
    ff_dim: int = 160
    dropout: float = 0.2
    lr: float = 3e-4
    batch_size: int = 32
    epochs: int = 15
    focal_gamma: float = 2.0
    basis_l2: float = 1e-4
    basis_width: int = 128
    basis_depth: int = 3
    head_dim: int = 64
    positional_encoding: bool = True
    encoder_layout: str = "pre"
    transform: bool = True
    standardize: bool = True
    seed: int = 0
    task: str = "classification"

    def __post_init__(self):
        for name in ("p", "K", "C", "n_grid", "basis_width", "basis_depth", "head_dim", "batch_size"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be >= 1")
        if self.n_grid < 2:
            raise InvalidArgument("n_grid must be >= 2")
        if self.n_enc < 0 or self.epochs < 0 or self.ff_dim < 1:
            raise InvalidArgument("n_enc and epochs must be >= 0, ff_dim >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidArgument("dropout must lie in [0, 1)")
        if self.heads < 1 or self.p % self.heads:
            raise InvalidArgument(f"model dimension p={self.p} not divisible by heads={self.heads}")
        if self.lr < 0 or self.basis_l2 < 0 or self.focal_gamma < 0:
            raise InvalidArgument("lr, basis_l2 and focal_gamma must be non-negative")
        if self.encoder_layout not in ENCODER_LAYOUTS:
            raise InvalidArgument(f"encoder_layout must be one of {ENCODER_LAYOUTS}")
        if self.task not in TASKS:
            raise InvalidArgument(f"task must be one of {TASKS}")
        if self.task == "regression" and self.C != 1:
            raise InvalidArgument("regression configs need C = 1")

    @classmethod
    def ser(cls, **overrides) -> "DfmimConfig":
        return cls(**overrides)

    @classmethod
    def simulation(cls, **overrides) -> "DfmimConfig":
        """Preset for the four-channel, 30-point simulation study.

        One residual encoder layer without layer norm or positional encoding
        keeps each time point's raw magnitudes, which the quadratic links need.
        Large batches smooth the heavy-tailed targets.
        """
        base = dict(
            p=4, K=4, C=1, n_grid=30, task="regression", heads=1, n_enc=1, ff_dim=64,
            encoder_layout="plain", positional_encoding=False, basis_width=32,
            basis_l2=1e-4, dropout=0.0, lr=1e-3, batch_size=200, epochs=1200,
        )
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "DfmimConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DfmimConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise InvalidArgument(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @property
    def n_out(self) -> int:
        return self.C if self.task == "classification" else 1


@dataclass
class BasisNode:
    """Micro-network ``t -> theta(t)``: ``depth`` ReLU layers then a linear output."""

    weights: list
    biases: list

    @classmethod
    def init(cls, rng: np.random.Generator, width: int = 128, depth: int = 3) -> "BasisNode":
        dims = [1] + [width] * depth + [1]
        ws, bs = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            ws.append(ag.parameter(uniform_fan_in(rng, (fan_in, fan_out), fan_in)))
            bs.append(ag.parameter(uniform_fan_in(rng, (fan_out,), fan_in)))
        return cls(ws, bs)

    @classmethod
    def constant(cls, value: float, width: int = 4, depth: int = 1) -> "BasisNode":
        """A node whose output is identically ``value`` (zero final weights)."""
        rng = np.random.default_rng(0)
        node = cls.init(rng, width, depth)
        node.weights[-1].data[:] = 0.0
        node.biases[-1].data[:] = value
        return node

    def parameters(self) -> list:
        return [*self.weights, *self.biases]


def basis_forward(node: BasisNode, t) -> Tensor:
    """Differentiable ``theta`` at the abscissae ``t``, shape ``(len(t),)``."""
    h = Tensor(np.asarray(t, dtype=np.float64).reshape(-1, 1))
    last = len(node.weights) - 1
    for i, (W, b) in enumerate(zip(node.weights, node.biases)):
        h = dense(h, W, b, "identity" if i == last else "relu")
    return ag.reshape(h, (-1,))


def basis_evaluate(node: BasisNode, grid: Grid) -> Curve:
    return Curve(grid, basis_forward(node, grid.points).data)


def basis_score(node: BasisNode, channel, grid: Grid | None = None) -> Tensor:
    """Quadrature inner product of ``theta`` with one channel.

    ``channel`` is a Curve, or a 1-D array/Tensor on ``grid``. Gradients
    flow to the node weights and, for Tensors, to the channel.
    """
    if isinstance(channel, Curve):
        if grid is not None and grid != channel.grid:
            raise InvalidArgument("channel and basis grids differ")
        grid, values = channel.grid, Tensor(channel.values)
    else:
        values = ag.as_tensor(channel)
        if grid is None:
            grid = make_grid(values.shape[-1])
        if values.shape != (grid.n,):
            raise InvalidArgument(f"channel of shape {values.shape} is not on a {grid.n}-point grid")
    theta = basis_forward(node, grid.points)
    weighted = ag.mul(theta, trapezoid_weights(grid))
    return ag.tsum(ag.mul(weighted, values))


class DfmimModel:
    """Parameters and buffers of the network.

    Parameters live in ``params`` (name -> Tensor) in a fixed order. Basis
    nodes are stored stacked: layer ``l`` has ``basis.W{l}`` of shape
    ``(p*K, fan_in, fan_out)`` and ``basis.b{l}`` of shape
    ``(p*K, 1, fan_out)``; node ``j*K + k`` is basis ``k`` of channel ``j``.
    """

    def __init__(self, config: DfmimConfig, params: dict, buffers: dict | None = None):
        self.config = config
        self.params = params
        self.buffers = buffers if buffers is not None else default_buffers(config)
        self.grid = make_grid(config.n_grid)
        self.rng = None

    @classmethod
    def init(cls, config: DfmimConfig, rng: np.random.Generator) -> "DfmimModel":
        return cls(config, {k: ag.parameter(v, k) for k, v in init_params(config, rng).items()})

    def parameter_shapes(self) -> dict:
        return {k: v.shape for k, v in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state(self) -> dict:
        """Copies of every parameter and buffer array."""
        out = {k: v.data.copy() for k, v in self.params.items()}
        out.update({f"buffer.{k}": v.copy() for k, v in self.buffers.items()})
        return out

    def load_state(self, state: dict) -> None:
        for k, p in self.params.items():
            p.data = np.array(state[k], dtype=np.float64)
        for k in self.buffers:
            self.buffers[k] = np.array(state[f"buffer.{k}"], dtype=np.float64)

    @property
    def n_nodes(self) -> int:
        return self.config.p * self.config.K

    def basis_node(self, index: int) -> BasisNode:
        """Detached copy of one basis node."""
        depth = self.config.basis_depth + 1
        ws = [ag.parameter(self.params[f"basis.W{l}"].data[index]) for l in range(depth)]
        bs = [ag.parameter(self.params[f"basis.b{l}"].data[index, 0]) for l in range(depth)]
        return BasisNode(ws, bs)

    def set_basis_node(self, index: int, node: BasisNode) -> None:
        for l, (W, b) in enumerate(zip(node.weights, node.biases)):
            self.params[f"basis.W{l}"].data[index] = ag.as_tensor(W).data
            self.params[f"basis.b{l}"].data[index, 0] = ag.as_tensor(b).data

    def encoder_params(self, layer: int) -> dict:
        return {k: self.params[f"enc{layer}.{k}"] for k in ENCODER_KEYS}

    def basis_weight_tensors(self) -> list:
        return [self.params[f"basis.W{l}"] for l in range(self.config.basis_depth + 1)]


def default_buffers(config: DfmimConfig) -> dict:
    return {
        "input_mean": np.zeros(config.p),
        "input_std": np.ones(config.p),
        "target_mean": np.zeros(1),
        "target_std": np.ones(1),
    }


def init_params(config: DfmimConfig, rng: np.random.Generator) -> dict:
    """Seeded initial values; weights uniform in +-1/sqrt(fan_in).

    Encoder and head biases start at zero. Basis micro-net biases are drawn
    like the weights: with zero biases every ReLU unit would vanish at
    t = 0 and theta would start out proportional to t.
    """
    c = config
    out = {}
    if c.transform:
        for i in range(c.n_enc):
            for k, v in init_encoder(rng, c.p, c.ff_dim).items():
                out[f"enc{i}.{k}"] = v
    dims = [1] + [c.basis_width] * c.basis_depth + [1]
    n = c.p * c.K
    for l, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        out[f"basis.W{l}"] = uniform_fan_in(rng, (n, fan_in, fan_out), fan_in)
        out[f"basis.b{l}"] = uniform_fan_in(rng, (n, 1, fan_out), fan_in)
    _normalize_basis_init(out, c)
    head_dims = [n, c.head_dim, c.head_dim, c.n_out]
    for l, (fan_in, fan_out) in enumerate(zip(head_dims[:-1], head_dims[1:]), start=1):
        out[f"head.W{l}"] = uniform_fan_in(rng, (fan_in, fan_out), fan_in)
        out[f"head.b{l}"] = np.zeros(fan_out)
    return out


def _normalize_basis_init(params: dict, config: DfmimConfig) -> None:
    """Rescale each node's output layer so theta starts with unit L2 norm.

    Fan-in initialization alone gives |theta| ~ 0.1 and scores too small
    for the tanh head to resolve.
    """
    depth = config.basis_depth + 1
    grid = make_grid(config.n_grid)
    h = grid.points.reshape(1, -1, 1)
    for l in range(depth):
        h = h @ params[f"basis.W{l}"] + params[f"basis.b{l}"]
        if l < depth - 1:
            h = np.maximum(h, 0.0)
    norms = np.sqrt(np.einsum("nij,i->n", h * h, trapezoid_weights(grid)))
    factor = 1.0 / np.maximum(norms, 1e-12)
    params[f"basis.W{depth - 1}"] *= factor[:, None, None]
    params[f"basis.b{depth - 1}"] *= factor[:, None, None]


def _as_batch(model: DfmimModel, x) -> tuple[Tensor, bool]:
    x = ag.as_tensor(x)
    single = x.ndim == 2
    if single:
        x = ag.reshape(x, (1,) + x.shape)
    c = model.config
    if x.ndim != 3 or x.shape[1:] != (c.n_grid, c.p):
        raise ShapeError(f"expected input (.., {c.n_grid}, {c.p}), got {x.shape}")
    return x, single


def _dropout_rng(model: DfmimModel, train_mode: bool):
    if not train_mode:
        return None
    if model.rng is None:
        model.rng = np.random.default_rng(np.random.SeedSequence([model.config.seed, 3]))
    return model.rng


def transform_module(model: DfmimModel, x, train_mode: bool = False) -> Tensor:
    """Encoder stack over grid-point tokens; output has the input's shape."""
    x, single = _as_batch(model, x)
    c = model.config
    if c.positional_encoding:
        x = ag.add(x, positional_encoding(c.n_grid, c.p))
    if c.transform:
        rng = _dropout_rng(model, train_mode)
        for i in range(c.n_enc):
            x = transformer_encoder(
                x, model.encoder_params(i), c.heads, c.dropout, rng, c.encoder_layout
            )
    if single:
        x = ag.reshape(x, x.shape[1:])
    return x


def basis_values(model: DfmimModel) -> Tensor:
    """All basis functions on the model grid, shape ``(p, K, n_grid)``."""
    c = model.config
    h = Tensor(model.grid.points.reshape(1, -1, 1))
    depth = c.basis_depth + 1
    for l in range(depth):
        h = ag.add(ag.matmul(h, model.params[f"basis.W{l}"]), model.params[f"basis.b{l}"])
        if l < depth - 1:
            h = ag.relu(h)
    return ag.reshape(h, (c.p, c.K, c.n_grid))


def dfn_scores(model: DfmimModel, z) -> Tensor:
    """``score[j*K + k] = <theta_{j,k}, z[:, j]>`` for every node (channel-major)."""
    z, single = _as_batch(model, z)
    c = model.config
    weighted = ag.mul(basis_values(model), trapezoid_weights(model.grid))
    scores = ag.reshape(ag.einsum("bij,jki->bjk", z, weighted), (z.shape[0], c.p * c.K))
    if single:
        scores = ag.reshape(scores, (c.p * c.K,))
    return scores


def head_forward(model: DfmimModel, scores, train_mode: bool = False) -> Tensor:
    """Raw head output: ``(B, C)`` logits or ``(B,)`` standardized regression values."""
    scores = ag.as_tensor(scores)
    c = model.config
    if scores.shape[-1] != c.p * c.K:
        raise ShapeError(f"head expects {c.p * c.K} scores, got {scores.shape[-1]}")
    rng = _dropout_rng(model, train_mode)
    P = model.params
    h = apply_dropout(dense(scores, P["head.W1"], P["head.b1"], "tanh"), c.dropout, rng)
    h = apply_dropout(dense(h, P["head.W2"], P["head.b2"], "tanh"), c.dropout, rng)
    out = dense(h, P["head.W3"], P["head.b3"], "identity")
    if c.task == "regression":
        out = ag.reshape(out, out.shape[:-1])
    return out


def _standardize(model: DfmimModel, x: Tensor) -> Tensor:
    if not model.config.standardize:
        return x
    b = model.buffers
    return ag.div(ag.sub(x, b["input_mean"]), b["input_std"])


def model_raw(model: DfmimModel, x, train_mode: bool = False) -> Tensor:
    x, single = _as_batch(model, x)
    z = transform_module(model, _standardize(model, x), train_mode)
    out = head_forward(model, dfn_scores(model, z), train_mode)
    if single:
        out = ag.reshape(out, out.shape[1:])
    return out


def model_forward(model: DfmimModel, x, train_mode: bool = False) -> Tensor:
    """Logits (classification) or predictions in target units (regression)."""
    out = model_raw(model, x, train_mode)
    if model.config.task == "regression" and model.config.standardize:
        b = model.buffers
        out = ag.add(ag.mul(out, b["target_std"][0]), b["target_mean"][0])
    return out


def basis_penalty(model: DfmimModel) -> Tensor:
    """Sum of squared basis micro-net weights (biases excluded)."""
    total = Tensor(0.0)
    for W in model.basis_weight_tensors():
        total = ag.add(total, ag.tsum(ag.mul(W, W)))
    return total


def task_loss(model: DfmimModel, raw: Tensor, y) -> Tensor:
    c = model.config
    if c.task == "classification":
        return focal_loss(raw, np.asarray(y, dtype=np.int64), FocalLossParams(c.focal_gamma))
    y = np.asarray(y, dtype=np.float64)
    if c.standardize:
        b = model.buffers
        y = (y - b["target_mean"][0]) / b["target_std"][0]
    return mse_loss(raw, y.reshape(raw.shape))


def total_loss(model: DfmimModel, X, y, train_mode: bool = False) -> Tensor:
    """Mean task loss over the batch plus ``basis_l2 * basis_penalty``.

    Regression losses are taken on the standardized target scale.
    """
    X = np.asarray(X) if not isinstance(X, Tensor) else X
    if len(y) == 0:
        raise InvalidArgument("empty batch")
    raw = model_raw(model, X, train_mode)
    if raw.ndim == 0 or (model.config.task == "classification" and raw.ndim == 1):
        raw = ag.reshape(raw, (1,) + raw.shape)
    loss = task_loss(model, raw, y)
    lam = model.config.basis_l2
    if lam > 0:
        loss = ag.add(loss, ag.scale(basis_penalty(model), lam))
    return loss
