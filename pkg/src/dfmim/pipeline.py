"""End-to-end runs: the simulation study and chunk-level SER over speaker folds."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .config import RunConfig
from .dsp import FeatureExtractor, write_chunk_record
from .errors import InvalidArgument
from .folds import Fold, Manifest, build_folds
from .model import DfmimConfig
from .simgen import make_splits
from .training import ArrayDataset, TrainReport, mean_predictor_rmse, train

log = logging.getLogger(__name__)

# Published reference RMSEs, printed next to results for comparison only
REFERENCE_RMSE = {"S1": 0.085, "S2": 0.074, "S3": 0.031}
DEFAULT_SIZES = (2000, 500, 500)


@dataclass
class SimResult:
    scenario: str
    report: TrainReport
    baseline_noisy: float
    baseline_clean: float
    sizes: tuple

    @property
    def reduction_vs_clean(self) -> float:
        return 1.0 - self.report.test["rmse_vs_clean"] / self.baseline_clean

    def to_text(self) -> str:
        t = self.report.test
        lines = [
            f"scenario={self.scenario}",
            f"sizes={','.join(map(str, self.sizes))}",
            f"rmse_vs_noisy={t['rmse_vs_noisy']!r}",
            f"rmse_vs_clean={t['rmse_vs_clean']!r}",
            f"baseline_mean_rmse_vs_noisy={self.baseline_noisy!r}",
            f"baseline_mean_rmse_vs_clean={self.baseline_clean!r}",
            f"reduction_vs_clean={self.reduction_vs_clean!r}",
            f"reference_rmse={REFERENCE_RMSE[self.scenario]}",
        ]
        return "\n".join(lines) + "\n" + self.report.to_text()


def run_simulation(scenario: str, config: DfmimConfig, seed: int,
                   sizes=DEFAULT_SIZES, progress=None):
    """Generate the three splits from ``seed``, train, and compare to the mean predictor."""
    train_ds, val_ds, test_ds = make_splits(scenario, sizes, seed)
    model, report = train(config, train_ds, val_ds, test_ds, progress=progress)
    noisy, clean = mean_predictor_rmse(train_ds, test_ds)
    return model, SimResult(scenario, report, noisy, clean, tuple(sizes))


@dataclass
class UtteranceFeatures:
    path: str
    speaker: str
    label: int
    chunks: np.ndarray  # (n_chunks, chunk_len, n_mfcc)


def extract_corpus(manifest: Manifest, run: RunConfig, out_dir=None) -> list[UtteranceFeatures]:
    """MFCC chunks for every manifest row, in manifest order.

    With ``out_dir``, each utterance's chunks are also written as a chunk
    record (``NNNNN.chunks``) and every chunk gets a line in
    ``chunks.csv`` (``record,source,chunk_index,label,speaker``).
    """
    extractor = FeatureExtractor(run.pipeline.features)
    out = []
    lines = ["record,source,chunk_index,label,speaker"]
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    for i, row in enumerate(manifest.rows):
        label = run.pipeline.label_index(row.label)
        chunks = extractor.chunks_from_file(manifest.resolve(row))
        out.append(UtteranceFeatures(row.path, row.speaker, label, chunks.chunks))
        if out_dir is not None:
            name = f"{i:05d}.chunks"
            write_chunk_record(out_dir / name, chunks)
            mapped = run.pipeline.labels[label]
            lines += [f"{name},{row.path},{k},{mapped},{row.speaker}" for k in range(len(chunks))]
    if out_dir is not None:
        (out_dir / "chunks.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


def chunk_dataset(features: list[UtteranceFeatures], speakers) -> ArrayDataset:
    """Chunk-level dataset; every chunk inherits its utterance's label."""
    speakers = set(speakers)
    picked = [f for f in features if f.speaker in speakers]
    if not picked:
        raise InvalidArgument(f"no utterances for speakers {sorted(speakers)}")
    X = np.concatenate([f.chunks for f in picked], axis=0)
    y = np.concatenate([np.full(len(f.chunks), f.label, dtype=np.int64) for f in picked])
    groups = np.concatenate([np.full(len(f.chunks), f.speaker, dtype=object) for f in picked])
    return ArrayDataset(X, y, groups=groups)


def fold_seed(seed: int, fold_index: int) -> int:
    return int(np.random.SeedSequence([int(seed), 7, int(fold_index)]).generate_state(1)[0])


@dataclass
class FoldResult:
    index: int
    fold: Fold
    report: TrainReport
    model: object = field(repr=False, default=None)


@dataclass
class SerResult:
    folds: list
    labels: tuple

    @property
    def mean_wa(self) -> float:
        return float(np.mean([f.report.test["WA"] for f in self.folds]))

    @property
    def mean_ua(self) -> float:
        return float(np.mean([f.report.test["UA"] for f in self.folds]))

    def to_text(self) -> str:
        lines = []
        for f in self.folds:
            t = f.report.test
            lines.append(
                f"fold={f.index} test={f.fold.test} val={f.fold.validation} "
                f"WA={t['WA']!r} UA={t['UA']!r} best_epoch={f.report.best_epoch}"
            )
        lines.append(f"mean_WA={self.mean_wa!r}")
        lines.append(f"mean_UA={self.mean_ua!r}")
        lines.append("--- json")
        lines.append(json.dumps({
            "labels": list(self.labels),
            "folds": [
                {"index": f.index, "test": f.fold.test, "validation": f.fold.validation,
                 "train": list(f.fold.train), "report": f.report.as_dict()}
                for f in self.folds
            ],
            "mean_WA": self.mean_wa,
            "mean_UA": self.mean_ua,
        }, sort_keys=True))
        return "\n".join(lines) + "\n"


def run_ser(manifest: Manifest, run: RunConfig, seed: int, n_folds: int | None = None,
            out_dir=None, features=None, progress=None) -> SerResult:
    """Train and test one model per speaker fold (the first ``n_folds`` folds)."""
    folds = build_folds(manifest)
    if n_folds is not None:
        if n_folds < 1:
            raise InvalidArgument("n_folds must be >= 1")
        folds = folds[:n_folds]
    if features is None:
        features = extract_corpus(manifest, run)
    results = []
    for i, fold in enumerate(folds):
        config = run.model.replace(seed=fold_seed(seed, i))
        train_ds = chunk_dataset(features, fold.train)
        val_ds = chunk_dataset(features, [fold.validation])
        test_ds = chunk_dataset(features, [fold.test])
        cb = None if progress is None else (lambda e, l, v, i=i: progress(i, e, l, v))
        model, report = train(config, train_ds, val_ds, test_ds, labels=run.pipeline.labels, progress=cb)
        log.info("fold %d (test %s): WA=%.4f UA=%.4f", i, fold.test, report.test["WA"], report.test["UA"])
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            save_checkpoint(model, out / f"fold{i:02d}.dfmx", extra=_ser_extra(run, fold))
            (out / f"fold{i:02d}.report").write_text(report.to_text(), encoding="utf-8")
        results.append(FoldResult(i, fold, report, model))
    return SerResult(results, run.pipeline.labels)


def _ser_extra(run: RunConfig, fold: Fold) -> dict:
    f = run.pipeline.features
    return {
        "labels": list(run.pipeline.labels),
        "label_map": dict(run.pipeline.label_map),
        "features": {k: getattr(f, k) for k in f.__dataclass_fields__},
        "fold": {"test": fold.test, "validation": fold.validation, "train": list(fold.train)},
    }
