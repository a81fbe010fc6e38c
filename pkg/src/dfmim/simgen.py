"""Gaussian-process covariate simulators and the three regression scenarios.

Each sample carries four channels drawn, in order, from an exponential
variogram process, Brownian motion, fractional Brownian motion and a
Matern(3/2) process, all on a 30-point grid.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidArgument, NumericalFailure, CorruptFile
from .funcore import (
    Curve,
    Grid,
    MultiCurve,
    beta_curve,
    inner_product,
    make_grid,
    pointwise_transform,
)

SCENARIOS = ("S1", "S2", "S3")
NOISE_VARIANCE = 0.04
N_GRID = 30

JITTER_START = 1e-12
JITTER_FACTOR = 10.0
JITTER_ESCALATIONS = 5


@dataclass(frozen=True)
class GpSpec:
    kind: str
    hurst: float | None = None
    range: float | None = None
    sill: float | None = None
    nu: float | None = None
    lengthscale: float | None = None
    variance: float | None = None

    _PARAMS = {
        "brownian": (),
        "fbm": ("hurst",),
        "exp_variogram": ("range", "sill"),
        "matern": ("nu", "lengthscale", "variance"),
    }

    def __post_init__(self):
        if self.kind not in self._PARAMS:
            raise InvalidArgument(f"unknown process kind {self.kind!r}")
        wanted = self._PARAMS[self.kind]
        for name in ("hurst", "range", "sill", "nu", "lengthscale", "variance"):
            value = getattr(self, name)
            if name in wanted and value is None:
                raise InvalidArgument(f"{self.kind} requires {name}")
            if name not in wanted and value is not None:
                raise InvalidArgument(f"{self.kind} does not take {name}")
        if self.kind == "fbm" and not 0.0 < self.hurst < 1.0:
            raise InvalidArgument(f"hurst must lie in (0, 1), got {self.hurst}")
        if self.kind == "exp_variogram" and (self.range <= 0 or self.sill <= 0):
            raise InvalidArgument("range and sill must be positive")
        if self.kind == "matern":
            if self.nu != 1.5:
                raise InvalidArgument(f"only nu = 1.5 is supported, got {self.nu}")
            if self.lengthscale <= 0 or self.variance <= 0:
                raise InvalidArgument("lengthscale and variance must be positive")

    @classmethod
    def brownian(cls):
        return cls("brownian")

    @classmethod
    def fbm(cls, hurst=0.7):
        return cls("fbm", hurst=hurst)

    @classmethod
    def exp_variogram(cls, range=0.3, sill=1.0):
        return cls("exp_variogram", range=range, sill=sill)

    @classmethod
    def matern(cls, lengthscale=0.2, variance=1.0, nu=1.5):
        return cls("matern", nu=nu, lengthscale=lengthscale, variance=variance)


def default_processes() -> tuple[GpSpec, ...]:
    """The four covariate processes in channel order."""
    return (
        GpSpec.exp_variogram(),
        GpSpec.brownian(),
        GpSpec.fbm(),
        GpSpec.matern(),
    )


def covariance_matrix(spec: GpSpec, grid: Grid) -> np.ndarray:
    if not isinstance(spec, GpSpec):
        raise InvalidArgument("covariance_matrix needs a GpSpec")
    s = grid.points[:, None]
    t = grid.points[None, :]
    d = np.abs(s - t)
    if spec.kind == "brownian":
        return np.minimum(s, t)
    if spec.kind == "fbm":
        h2 = 2.0 * spec.hurst
        return 0.5 * (s**h2 + t**h2 - d**h2)
    if spec.kind == "exp_variogram":
        return spec.sill * np.exp(-d / spec.range)
    r = np.sqrt(3.0) * d / spec.lengthscale
    return spec.variance * (1.0 + r) * np.exp(-r)


def stable_cholesky(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a PSD matrix.

    Coordinates with exactly zero variance (the origin of Brownian and fBm
    paths) are pinned to zero. The remaining block is factorized as is, then
    with a diagonal jitter starting at ``1e-12 * trace / n`` and growing
    tenfold, at most five times.
    """
    n = cov.shape[0]
    live = np.diag(cov) > 0.0
    sub = cov[np.ix_(live, live)]
    factor = np.zeros_like(cov)
    if sub.size == 0:
        return factor
    scale = np.trace(sub) / sub.shape[0]
    jitters = [0.0] + [
        JITTER_START * JITTER_FACTOR**k * scale for k in range(JITTER_ESCALATIONS + 1)
    ]
    for jitter in jitters:
        try:
            chol = np.linalg.cholesky(sub + jitter * np.eye(sub.shape[0]))
        except np.linalg.LinAlgError:
            continue
        factor[np.ix_(live, live)] = chol
        return factor
    raise NumericalFailure(
        f"Cholesky failed on a {n}x{n} covariance after jitter {jitters[-1]:.1e}"
    )


@lru_cache(maxsize=32)
def _factor(spec: GpSpec, n: int) -> np.ndarray:
    factor = stable_cholesky(covariance_matrix(spec, make_grid(n)))
    factor.setflags(write=False)
    return factor


def sample_gp(spec: GpSpec, grid: Grid, rng: np.random.Generator) -> Curve:
    """Draw one path ``L @ z`` with ``z`` standard normal from ``rng``."""
    factor = _factor(spec, grid.n)
    z = rng.standard_normal(grid.n)
    return Curve(grid, factor @ z)


def _index_sums(x: MultiCurve, betas) -> list[float]:
    return [sum(inner_product(b, ch) for ch in x.channels) for b in betas]


def scenario_response(scenario: str, x: MultiCurve) -> float:
    """Noiseless link value of a scenario for one four-channel sample."""
    if scenario not in SCENARIOS:
        raise InvalidArgument(f"unknown scenario {scenario!r}")
    if x.p != 4:
        raise InvalidArgument(f"scenarios need 4 channels, got {x.p}")
    grid = x.grid
    betas = [beta_curve(j, grid) for j in (1, 2, 3, 4)]
    if scenario == "S1":
        a, b = _index_sums(x, betas[:2])
        return a * a + b * b
    if scenario == "S2":
        return float(sum(v * v for v in _index_sums(x, betas)))
    x1 = pointwise_transform(x.channels[0], "square")
    x2 = pointwise_transform(x.channels[1], "abs")
    u1 = inner_product(betas[0], x1)
    u2 = inner_product(betas[1], x2)
    u3 = inner_product(betas[2], x.channels[2])
    u4 = inner_product(betas[3], x.channels[3])
    return (u1 + u2 + u3 * u4) ** 2 + (u1 * u2 + u3 + u4) ** 2


@dataclass
class SimDataset:
    scenario: str
    X: np.ndarray  # (n, n_grid, p)
    y: np.ndarray
    y_clean: np.ndarray
    seed: int
    grid: Grid = field(default_factory=lambda: make_grid(N_GRID))

    def __post_init__(self):
        n = len(self.X)
        if len(self.y) != n or len(self.y_clean) != n:
            raise InvalidArgument("X, y and y_clean lengths differ")

    def __len__(self):
        return len(self.y)

    def sample(self, i: int) -> MultiCurve:
        return MultiCurve.from_matrix(self.grid, self.X[i])

    def subset(self, index) -> "SimDataset":
        index = np.asarray(index)
        return SimDataset(
            self.scenario, self.X[index], self.y[index], self.y_clean[index],
            self.seed, self.grid,
        )


def sample_streams(seed: int, i: int, n_channels: int = 4):
    """Independent generators for sample ``i``: one per channel, then noise."""
    children = np.random.SeedSequence([int(seed), int(i)]).spawn(n_channels + 1)
    return [np.random.default_rng(c) for c in children]


def make_scenario_dataset(
    scenario: str, n: int, seed: int, processes=None, start: int = 0
) -> SimDataset:
    """Draw ``n`` i.i.d. samples; sample ``i`` uses streams derived from ``(seed, start + i)``.

    The noise draw for each sample comes from its own stream, so ``y_clean``
    is exact and identical whatever the split layout.
    """
    if scenario not in SCENARIOS:
        raise InvalidArgument(f"unknown scenario {scenario!r}")
    if n < 1:
        raise InvalidArgument(f"dataset size must be >= 1, got {n}")
    processes = tuple(processes or default_processes())
    grid = make_grid(N_GRID)
    sd = np.sqrt(NOISE_VARIANCE)
    X = np.empty((n, grid.n, len(processes)))
    y = np.empty(n)
    y_clean = np.empty(n)
    for i in range(n):
        streams = sample_streams(seed, start + i, len(processes))
        channels = tuple(
            sample_gp(spec, grid, rng) for spec, rng in zip(processes, streams)
        )
        x = MultiCurve(channels)
        X[i] = x.as_matrix()
        y_clean[i] = scenario_response(scenario, x)
        y[i] = y_clean[i] + sd * streams[-1].standard_normal()
    return SimDataset(scenario, X, y, y_clean, int(seed), grid)


def make_splits(scenario: str, sizes, seed: int):
    """Consecutive, non-overlapping train/val/test datasets from one seed."""
    out = []
    start = 0
    for size in sizes:
        out.append(make_scenario_dataset(scenario, size, seed, start=start))
        start += size
    return out


_DS_MAGIC = b"DFMS"
_DS_HEADER = struct.Struct("<4sII4sIIIq")
_DS_VERSION = 1


def save_dataset(ds: SimDataset, path) -> None:
    """Write a dataset as a flat little-endian binary table.

    Layout: header, then float64 X in (sample, channel, grid index) order,
    then y, then y_clean. Paths ending in ``.csv`` get the long textual
    table ``sample,channel,grid_index,value`` plus a ``y``/``y_clean`` block.
    """
    n, g, p = ds.X.shape
    if str(path).endswith(".csv"):
        _save_csv(ds, path)
        return
    header = _DS_HEADER.pack(
        _DS_MAGIC, _DS_VERSION, 0, ds.scenario.encode().ljust(4, b"\0"),
        n, p, g, ds.seed,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(ds.X.transpose(0, 2, 1), dtype="<f8").tobytes())
        fh.write(np.asarray(ds.y, dtype="<f8").tobytes())
        fh.write(np.asarray(ds.y_clean, dtype="<f8").tobytes())


def _save_csv(ds: SimDataset, path) -> None:
    n, g, p = ds.X.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# scenario={ds.scenario} seed={ds.seed}\n")
        fh.write("sample,channel,grid_index,value\n")
        for i in range(n):
            for j in range(p):
                for k in range(g):
                    fh.write(f"{i},{j},{k},{float(ds.X[i, k, j])!r}\n")
        fh.write("sample,y,y_clean\n")
        for i in range(n):
            fh.write(f"{i},{float(ds.y[i])!r},{float(ds.y_clean[i])!r}\n")


def load_dataset(path) -> SimDataset:
    if str(path).endswith(".csv"):
        return _load_csv(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _DS_HEADER.size:
        raise CorruptFile(f"{path}: truncated dataset header")
    magic, version, _, scen, n, p, g, seed = _DS_HEADER.unpack_from(raw)
    if magic != _DS_MAGIC:
        raise CorruptFile(f"{path}: not a dataset file")
    if version != _DS_VERSION:
        raise CorruptFile(f"{path}: unsupported dataset version {version}")
    body = np.frombuffer(raw, dtype="<f8", offset=_DS_HEADER.size)
    if body.size != n * p * g + 2 * n:
        raise CorruptFile(f"{path}: expected {n * p * g + 2 * n} values, found {body.size}")
    X = body[: n * p * g].reshape(n, p, g).transpose(0, 2, 1).astype(np.float64)
    y = body[n * p * g : n * p * g + n].astype(np.float64)
    y_clean = body[n * p * g + n :].astype(np.float64)
    return SimDataset(scen.rstrip(b"\0").decode(), X, y, y_clean, seed, make_grid(g))


def _load_csv(path) -> SimDataset:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    meta = dict(kv.split("=") for kv in lines[0].lstrip("# ").split())
    split = lines.index("sample,y,y_clean")
    values = np.array([line.split(",") for line in lines[2:split]], dtype=float)
    targets = np.array([line.split(",") for line in lines[split + 1 :]], dtype=float)
    n = len(targets)
    p = int(values[:, 1].max()) + 1
    g = int(values[:, 2].max()) + 1
    X = np.empty((n, g, p))
    X[values[:, 0].astype(int), values[:, 2].astype(int), values[:, 1].astype(int)] = values[:, 3]
    return SimDataset(
        meta["scenario"], X, targets[:, 1], targets[:, 2], int(meta["seed"]), make_grid(g)
    )
