"""Training loop, model selection and evaluation metrics."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, TrainingDiverged
from .model import DfmimConfig, DfmimModel, model_forward, total_loss
from .nn import AdamState, adam_step

log = logging.getLogger(__name__)

EVAL_BATCH = 256


@dataclass
class ArrayDataset:
    """Stacked samples ``X`` of shape ``(N, n_grid, p)`` with targets ``y``.

    ``y_clean`` holds noiseless targets when known (simulations); ``groups``
    optionally tags each sample (speaker id, source utterance).
    """

    X: np.ndarray
    y: np.ndarray
    y_clean: np.ndarray | None = None
    groups: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y)
        if len(self.X) != len(self.y):
            raise InvalidArgument(f"{len(self.X)} samples but {len(self.y)} targets")

    def __len__(self):
        return len(self.y)


@dataclass
class TrainReport:
    task: str
    seed: int
    epochs: int
    train_loss: list = field(default_factory=list)
    val_metric: list = field(default_factory=list)
    val_metric_name: str = ""
    selection: str = ""
    best_epoch: int | None = None
    test: dict = field(default_factory=dict)
    confusion: list | None = None
    labels: list | None = None
    wall_clock: float = 0.0

    def as_dict(self, timing: bool = False) -> dict:
        out = {
            "task": self.task,
            "seed": self.seed,
            "epochs": self.epochs,
            "train_loss": self.train_loss,
            "val_metric_name": self.val_metric_name,
            "val_metric": self.val_metric,
            "selection": self.selection,
            "best_epoch": self.best_epoch,
            "test": self.test,
        }
        if self.confusion is not None:
            out["confusion"] = self.confusion
            out["labels"] = self.labels
        if timing:
            out["wall_clock"] = self.wall_clock
        return out

    def to_text(self, timing: bool = False) -> str:
        """``key=value`` lines followed by a JSON block.

        Wall-clock time is left out unless ``timing`` is set, so reports of
        identical runs compare equal byte for byte.
        """
        lines = [
            f"task={self.task}",
            f"seed={self.seed}",
            f"epochs={self.epochs}",
            f"best_epoch={self.best_epoch}",
            f"selection={self.selection}",
        ]
        for k, v in self.test.items():
            lines.append(f"test.{k}={v!r}")
        if self.confusion is not None:
            lines.append(format_confusion(np.asarray(self.confusion), self.labels))
        if timing:
            lines.append(f"wall_clock={self.wall_clock:.3f}")
        lines.append("--- json")
        lines.append(json.dumps(self.as_dict(timing), sort_keys=True))
        return "\n".join(lines) + "\n"


def format_confusion(confusion: np.ndarray, labels=None) -> str:
    """Labeled grid; rows are true classes, columns predictions."""
    n = confusion.shape[0]
    labels = [str(l) for l in (labels or range(n))]
    width = max(max(len(l) for l in labels), len(str(int(confusion.max(initial=0)))), 4)
    head = " " * width + " | " + " ".join(l.rjust(width) for l in labels)
    rows = [head, "-" * len(head)]
    for label, row in zip(labels, confusion):
        rows.append(label.rjust(width) + " | " + " ".join(str(int(v)).rjust(width) for v in row))
    return "confusion (rows=true, cols=pred)\n" + "\n".join(rows)


def predict(model: DfmimModel, X: np.ndarray) -> np.ndarray:
    """Eval-mode outputs for a stack of samples, computed in batches."""
    outs = [
        model_forward(model, X[i : i + EVAL_BATCH]).data
        for i in range(0, len(X), EVAL_BATCH)
    ]
    return np.concatenate(outs, axis=0)


def rmse(pred, target) -> float:
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.sqrt(np.mean(diff * diff)))


def regression_rmse(pred, y, y_clean) -> tuple[float, float]:
    return rmse(pred, y), rmse(pred, y_clean)


def evaluate_regression(model: DfmimModel, dataset) -> tuple[float, float]:
    """RMSE against the noisy targets and against the noiseless ones."""
    if model.config.task != "regression":
        raise InvalidArgument("evaluate_regression needs a regression model")
    if len(dataset) == 0:
        raise InvalidArgument("empty dataset")
    pred = predict(model, dataset.X)
    y_clean = getattr(dataset, "y_clean", None)
    if y_clean is None:
        return rmse(pred, dataset.y), float("nan")
    return regression_rmse(pred, dataset.y, y_clean)


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def classification_metrics(confusion) -> tuple[float, float]:
    """Weighted accuracy (overall) and unweighted accuracy (mean recall).

    Classes with no true samples are left out of the recall mean.
    """
    cm = np.asarray(confusion, dtype=np.float64)
    total = cm.sum()
    if total == 0:
        raise InvalidArgument("empty confusion matrix")
    support = cm.sum(axis=1)
    present = support > 0
    recall = np.diag(cm)[present] / support[present]
    return float(np.trace(cm) / total), float(recall.mean())


def evaluate_classification(model: DfmimModel, dataset):
    if model.config.task != "classification":
        raise InvalidArgument("evaluate_classification needs a classification model")
    if len(dataset) == 0:
        raise InvalidArgument("empty dataset")
    logits = predict(model, dataset.X)
    cm = confusion_matrix(dataset.y, logits.argmax(axis=1), model.config.C)
    wa, ua = classification_metrics(cm)
    return wa, ua, cm


def fit_buffers(model: DfmimModel, train_ds) -> None:
    """Per-channel input statistics and target statistics from the training set."""
    if not model.config.standardize:
        return
    X = train_ds.X
    mean = X.mean(axis=(0, 1))
    std = X.std(axis=(0, 1))
    model.buffers["input_mean"] = mean
    model.buffers["input_std"] = np.where(std > 1e-12, std, 1.0)
    if model.config.task == "regression":
        y = np.asarray(train_ds.y, dtype=np.float64)
        sd = y.std()
        model.buffers["target_mean"] = np.array([y.mean()])
        model.buffers["target_std"] = np.array([sd if sd > 1e-12 else 1.0])


def _seed_streams(seed: int):
    init, shuffle, dropout = np.random.SeedSequence([int(seed), 1]).spawn(3)
    return (
        np.random.default_rng(init),
        np.random.default_rng(shuffle),
        np.random.default_rng(dropout),
    )


def _val_metric(model: DfmimModel, val_ds) -> float:
    if model.config.task == "regression":
        pred = predict(model, val_ds.X)
        return float(np.mean((pred - np.asarray(val_ds.y, dtype=np.float64)) ** 2))
    return evaluate_classification(model, val_ds)[1]


def _test_metrics(model: DfmimModel, test_ds, report: TrainReport) -> None:
    if model.config.task == "regression":
        noisy, clean = evaluate_regression(model, test_ds)
        report.test = {"rmse_vs_noisy": noisy, "rmse_vs_clean": clean}
    else:
        wa, ua, cm = evaluate_classification(model, test_ds)
        report.test = {"WA": wa, "UA": ua}
        report.confusion = cm.tolist()


def train(config: DfmimConfig, train_ds, val_ds, test_ds, labels=None, progress=None):
    """Fit a model and return ``(model, report)``.

    Mini-batches are reshuffled every epoch. After each epoch the model is
    scored on the validation set (MSE for regression, UA for
    classification) and the best epoch's parameters are kept for the final
    test evaluation. Every random draw derives from ``config.seed``.
    """
    for name, ds in (("train", train_ds), ("validation", val_ds), ("test", test_ds)):
        if len(ds) == 0:
            raise InvalidArgument(f"{name} dataset is empty")
    started = time.perf_counter()
    init_rng, shuffle_rng, dropout_rng = _seed_streams(config.seed)
    model = DfmimModel.init(config, init_rng)
    model.rng = dropout_rng
    fit_buffers(model, train_ds)
    regression = config.task == "regression"
    report = TrainReport(
        task=config.task,
        seed=config.seed,
        epochs=config.epochs,
        val_metric_name="val_mse" if regression else "val_UA",
        selection="min val_mse" if regression else "max val_UA (earliest on ties)",
        labels=list(labels) if labels is not None else None,
    )
    state = AdamState(lr=config.lr)
    best_state, best_value = None, None
    n = len(train_ds)
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            model.zero_grad()
            loss = total_loss(model, train_ds.X[idx], train_ds.y[idx], train_mode=True)
            value = loss.item()
            if not np.isfinite(value):
                report.wall_clock = time.perf_counter() - started
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch starting {start}", report
                )
            loss.backward()
            adam_step(state, model.params)
            total += value * len(idx)
            seen += len(idx)
        report.train_loss.append(total / seen)
        metric = _val_metric(model, val_ds)
        report.val_metric.append(metric)
        better = best_value is None or (metric < best_value if regression else metric > best_value)
        if better:
            best_value, best_state = metric, model.state()
            report.best_epoch = epoch
        if progress is not None:
            progress(epoch, report.train_loss[-1], metric)
        log.debug("epoch %d loss %.6g %s %.6g", epoch, report.train_loss[-1], report.val_metric_name, metric)
    if best_state is not None:
        model.load_state(best_state)
    model.rng = None
    _test_metrics(model, test_ds, report)
    report.wall_clock = time.perf_counter() - started
    return model, report


def mean_predictor_rmse(train_ds, test_ds) -> tuple[float, float]:
    """RMSE of always predicting the training-target mean."""
    pred = np.full(len(test_ds), float(np.mean(train_ds.y)))
    y_clean = getattr(test_ds, "y_clean", None)
    return rmse(pred, test_ds.y), rmse(pred, test_ds.y_clean if y_clean is not None else test_ds.y)
