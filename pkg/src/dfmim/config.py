"""TOML run configuration: model hyperparameters plus pipeline settings.

Every key is optional; missing keys take their defaults. Unknown keys and
constraint violations raise ``ConfigError`` naming the offending key.

Model keys (top level): p, K, C, n_grid, n_enc, heads, ff_dim, dropout,
lr, batch_size, epochs, focal_gamma, basis_l2, basis_width, basis_depth,
head_dim, positional_encoding, encoder_layout, transform, standardize, seed,
task.

Pipeline keys (top level): sample_rate, window_width, fft_size, hop,
n_mels, f_min, f_max, mfcc_variant, chunk, overlap, labels.

``[label_map]`` maps raw corpus labels to class labels (for example
``excited = "happy"``); the default merges excited into happy.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field, fields

from .dsp import FeatureConfig, StftConfig
from .errors import ConfigError, InvalidArgument
from .model import DfmimConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_LABELS = ("angry", "happy", "neutral", "sad")
DEFAULT_LABEL_MAP = {"excited": "happy"}

_PIPELINE_KEYS = {
    "sample_rate": int,
    "window_width": int,
    "fft_size": int,
    "hop": int,
    "n_mels": int,
    "f_min": float,
    "f_max": float,
    "mfcc_variant": str,
    "chunk": int,
    "overlap": float,
}


@dataclass(frozen=True)
class PipelineSettings:
    features: FeatureConfig = FeatureConfig()
    labels: tuple = DEFAULT_LABELS
    label_map: dict = field(default_factory=lambda: dict(DEFAULT_LABEL_MAP))

    def map_label(self, raw: str) -> str:
        label = self.label_map.get(raw, raw)
        if label not in self.labels:
            raise InvalidArgument(f"label {raw!r} is not in the label set {list(self.labels)}")
        return label

    def label_index(self, raw: str) -> int:
        return self.labels.index(self.map_label(raw))


@dataclass(frozen=True)
class RunConfig:
    model: DfmimConfig
    pipeline: PipelineSettings

    def echo(self) -> str:
        """Fully resolved configuration as sorted ``key = value`` lines."""
        flat = dict(self.model.to_dict())
        f = self.pipeline.features
        flat.update(
            sample_rate=f.sample_rate, window_width=f.window_width, fft_size=f.fft_size,
            hop=f.hop, n_mels=f.n_mels, f_min=f.f_min, f_max=f.f_max,
            mfcc_variant=f.mfcc_variant, chunk=f.chunk_len, overlap=f.overlap,
            labels=list(self.pipeline.labels),
        )
        lines = [f"{k} = {json.dumps(v)}" for k, v in sorted(flat.items())]
        lines.append("[label_map]")
        lines += [f"{k} = {json.dumps(v)}" for k, v in sorted(self.pipeline.label_map.items())]
        return "\n".join(lines) + "\n"


def _coerce(key, value, kind):
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(key, f"expected a string, got {value!r}")
    return value


_MODEL_FIELDS = {f.name: f.type for f in fields(DfmimConfig)}
_TYPE_NAMES = {"int": int, "float": float, "bool": bool, "str": str}


def _check_model_value(key, value, cfg: DfmimConfig):
    try:
        cfg.replace(**{key: value})
    except InvalidArgument as exc:
        raise ConfigError(key, str(exc)) from None


def resolve_config(data: dict, base: DfmimConfig | None = None) -> RunConfig:
    base = base or DfmimConfig.ser()
    data = dict(data)
    label_map = data.pop("label_map", None)
    if label_map is not None and not isinstance(label_map, dict):
        raise ConfigError("label_map", "expected a table")
    labels = data.pop("labels", None)
    model_values, pipe_values = {}, {}
    for key, value in data.items():
        if key in _MODEL_FIELDS:
            kind = _TYPE_NAMES[str(_MODEL_FIELDS[key])]
            model_values[key] = _coerce(key, value, kind)
        elif key in _PIPELINE_KEYS:
            pipe_values[key] = _coerce(key, value, _PIPELINE_KEYS[key])
        else:
            raise ConfigError(key, "unknown configuration key")

    # report the first offending key, not the first failing constraint
    for key, value in model_values.items():
        _check_model_value(key, value, base)
    try:
        model = base.replace(**model_values)
    except InvalidArgument as exc:
        raise ConfigError(next(iter(model_values), "config"), str(exc)) from None

    feat = {
        ("chunk_len" if k == "chunk" else k): v for k, v in pipe_values.items()
    }
    for key in ("sample_rate", "window_width", "fft_size", "hop", "n_mels", "chunk"):
        if pipe_values.get(key, 1) < 1:
            raise ConfigError(key, "must be >= 1")
    if not 0.0 <= pipe_values.get("overlap", 0.25) < 1.0:
        raise ConfigError("overlap", "must lie in [0, 1)")
    if pipe_values.get("mfcc_variant", "dct2") not in ("dct2", "paper_complex"):
        raise ConfigError("mfcc_variant", "must be dct2 or paper_complex")
    features = FeatureConfig(**feat)
    try:
        StftConfig(features.window_width, features.fft_size, features.hop)
    except InvalidArgument as exc:
        raise ConfigError("fft_size", str(exc)) from None

    if labels is None:
        labels = DEFAULT_LABELS
    elif not isinstance(labels, list) or not labels or not all(isinstance(l, str) for l in labels):
        raise ConfigError("labels", "expected a non-empty list of strings")
    labels = tuple(labels)
    if len(set(labels)) != len(labels):
        raise ConfigError("labels", "duplicate label")
    if label_map is None:
        label_map = {k: v for k, v in DEFAULT_LABEL_MAP.items() if v in labels}
    for raw, target in label_map.items():
        if target not in labels:
            raise ConfigError("label_map", f"{raw!r} maps to unknown label {target!r}")
    if model.task == "classification" and "C" not in model_values and model.C != len(labels):
        model = model.replace(C=len(labels))
    if model.task == "classification" and model.C != len(labels):
        raise ConfigError("C", f"C={model.C} but {len(labels)} labels are declared")
    if model.n_grid != features.chunk_len and model.task == "classification":
        model = model.replace(n_grid=features.chunk_len)
    if model.p != features.n_mfcc and model.task == "classification":
        if model.p > features.n_mels:
            raise ConfigError("p", f"p={model.p} exceeds n_mels={features.n_mels}")
        features = FeatureConfig(**{**feat, "n_mfcc": model.p})
    return RunConfig(model, PipelineSettings(features, labels, dict(label_map)))


def parse_config_text(text: str, base: DfmimConfig | None = None) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("parse", str(exc)) from None
    return resolve_config(data, base)


def load_config(path=None, base: DfmimConfig | None = None) -> RunConfig:
    """Read a TOML config file; ``None`` gives the defaults."""
    if path is None:
        return resolve_config({}, base)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("path", f"cannot read {path}: {exc}") from None
    return parse_config_text(text, base)
