import numpy as np
import pytest

from dfmim.errors import InvalidArgument, TrainingDiverged
from dfmim.model import DfmimConfig, DfmimModel
from dfmim.training import (
    ArrayDataset,
    classification_metrics,
    confusion_matrix,
    evaluate_classification,
    evaluate_regression,
    mean_predictor_rmse,
    predict,
    regression_rmse,
    rmse,
    train,
)


def _constant_model(value, task="regression", C=1):
    cfg = DfmimConfig(p=2, K=2, C=C, n_grid=8, heads=1, ff_dim=4, basis_width=4,
                      head_dim=3, task=task, standardize=False, dropout=0.0)
    model = DfmimModel.init(cfg, np.random.default_rng(0))
    model.params["head.W3"].data[:] = 0.0
    model.params["head.b3"].data[:] = value
    return model


def _data(n, seed=0, task="regression", C=3):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 8, 2))
    if task == "regression":
        y_clean = X[:, :, 0].mean(axis=1) ** 2
        return ArrayDataset(X, y_clean + 0.2 * rng.standard_normal(n), y_clean)
    y = (X[:, :, 0].mean(axis=1) > 0).astype(int) + (X[:, :, 1].mean(axis=1) > 0.5)
    return ArrayDataset(X, np.minimum(y, C - 1))


def _tiny(**kw):
    base = dict(p=2, K=2, C=1, n_grid=8, heads=1, ff_dim=4, basis_width=8, head_dim=6,
                task="regression", dropout=0.1, lr=1e-3, batch_size=16, epochs=3, seed=5)
    return DfmimConfig(**{**base, **kw})


def test_oracle_predictor_rmse():
    rng = np.random.default_rng(1)
    y_clean = rng.standard_normal(200_000)
    y = y_clean + rng.normal(0.0, 0.2, y_clean.shape)
    noisy, clean = regression_rmse(y_clean, y, y_clean)
    assert clean == 0.0 and noisy == pytest.approx(0.2, rel=0.01)


def test_constant_zero_predictor_on_zero_signal():
    rng = np.random.default_rng(2)
    n = 20_000
    ds = ArrayDataset(rng.standard_normal((n, 8, 2)), rng.normal(0.0, 0.2, n), np.zeros(n))
    noisy, clean = evaluate_regression(_constant_model(0.0), ds)
    assert clean == 0.0 and noisy == pytest.approx(0.2, rel=0.02)


def test_constant_offset_rmse_is_exact():
    y_clean = np.linspace(-3, 3, 11)
    assert regression_rmse(y_clean + 0.1, y_clean, y_clean)[1] == pytest.approx(0.1, abs=1e-15)
    ds = ArrayDataset(np.zeros((5, 8, 2)), np.zeros(5), np.full(5, 1.4))
    assert evaluate_regression(_constant_model(1.5), ds)[1] == pytest.approx(0.1, abs=1e-14)


def test_evaluate_task_mismatch_and_empty():
    ds = _data(4)
    with pytest.raises(InvalidArgument):
        evaluate_regression(_constant_model(0.0, "classification", 3), ds)
    with pytest.raises(InvalidArgument):
        evaluate_classification(_constant_model(0.0), ds)
    with pytest.raises(InvalidArgument):
        evaluate_classification(_constant_model(0.0, "classification", 3), ArrayDataset(np.zeros((0, 8, 2)), []))
    with pytest.raises(InvalidArgument):
        classification_metrics(np.zeros((3, 3)))


@pytest.mark.parametrize("cm,wa,ua", [
    (np.diag([10, 10, 10, 10]), 1.0, 1.0),
    ([[90, 10], [90, 10]], 0.5, 0.5),
    ([[9, 1], [50, 50]], 59 / 110, 0.7),
])
def test_wa_ua_hand_values(cm, wa, ua):
    got_wa, got_ua = classification_metrics(cm)
    assert abs(got_wa - wa) < 1e-12 and abs(got_ua - ua) < 1e-12


def test_absent_class_left_out_of_ua():
    cm = [[3, 1, 0], [0, 0, 0], [1, 0, 1]]
    assert classification_metrics(cm)[1] == pytest.approx((0.75 + 0.5) / 2, abs=1e-15)


def test_confusion_counts():
    cm = confusion_matrix([0, 0, 1, 2, 2, 2], [0, 1, 1, 2, 0, 2], 3)
    assert cm.tolist() == [[1, 1, 0], [0, 1, 0], [1, 0, 2]]


def test_constant_classifier_metrics():
    ds = ArrayDataset(np.zeros((6, 8, 2)), [0, 1, 2, 2, 1, 2])
    model = _constant_model(0.0, "classification", 3)
    model.params["head.b3"].data[:] = [0.0, 0.0, 1.0]
    wa, ua, cm = evaluate_classification(model, ds)
    assert wa == 0.5 and ua == pytest.approx(1 / 3) and cm[:, 2].sum() == 6


def test_mean_predictor_rmse():
    tr = ArrayDataset(np.zeros((3, 8, 2)), [1.0, 2.0, 3.0])
    te = ArrayDataset(np.zeros((2, 8, 2)), [2.0, 4.0], [2.0, 5.0])
    noisy, clean = mean_predictor_rmse(tr, te)
    assert noisy == pytest.approx(np.sqrt(2.0)) and clean == pytest.approx(np.sqrt(4.5))


def test_rmse_simple():
    assert rmse([1.0, 3.0], [1.0, 1.0]) == pytest.approx(np.sqrt(2.0))


def test_predict_batches_match_single_pass():
    model = DfmimModel.init(_tiny(), np.random.default_rng(3))
    X = np.random.default_rng(4).standard_normal((300, 8, 2))
    whole = predict(model, X)
    assert np.allclose(whole[:7], predict(model, X[:7]), atol=1e-13)


def test_zero_epochs_returns_initial_model():
    cfg = _tiny(epochs=0)
    tr, va, te = _data(40, 0), _data(20, 1), _data(20, 2)
    model, report = train(cfg, tr, va, te)
    assert report.best_epoch is None and report.train_loss == []
    assert report.test["rmse_vs_clean"] == pytest.approx(evaluate_regression(model, te)[1], rel=0, abs=0)


def test_training_reduces_training_loss():
    cfg = _tiny(epochs=8, dropout=0.0, lr=3e-3)
    model, report = train(cfg, _data(200, 0), _data(50, 1), _data(50, 2))
    assert report.train_loss[-1] < report.train_loss[0]
    assert report.best_epoch == int(np.argmin(report.val_metric))


@pytest.mark.parametrize("task", ["regression", "classification"])
def test_same_seed_gives_identical_report(task):
    kw = {"task": task, "C": 3} if task == "classification" else {}
    cfg = _tiny(**kw)
    data = [_data(60, s, task) for s in range(3)]
    _, a = train(cfg, *data, labels=["x", "y", "z"] if kw else None)
    _, b = train(cfg, *data, labels=["x", "y", "z"] if kw else None)
    assert a.to_text() == b.to_text()
    _, c = train(cfg.replace(seed=6), *data, labels=["x", "y", "z"] if kw else None)
    assert c.to_text() != a.to_text()


def test_classification_selection_and_report_text():
    cfg = _tiny(task="classification", C=3, epochs=4)
    _, report = train(cfg, _data(60, 0, "classification"), _data(30, 1, "classification"),
                      _data(30, 2, "classification"), labels=["lo", "mid", "hi"])
    ua = report.val_metric
    assert report.best_epoch == ua.index(max(ua))
    text = report.to_text()
    assert "confusion (rows=true, cols=pred)" in text and "--- json" in text
    assert "wall_clock" not in text and "wall_clock" in report.to_text(timing=True)


def test_non_finite_loss_aborts():
    tr = _data(40, 0)
    tr.y = tr.y.copy()
    tr.y[:] = np.nan
    with pytest.raises(TrainingDiverged) as exc:
        train(_tiny(standardize=False), tr, _data(10, 1), _data(10, 2))
    assert exc.value.report is not None and exc.value.report.train_loss == []


def test_empty_split_rejected():
    empty = ArrayDataset(np.zeros((0, 8, 2)), np.zeros(0), np.zeros(0))
    with pytest.raises(InvalidArgument):
        train(_tiny(), _data(10), empty, _data(10))
    with pytest.raises(InvalidArgument):
        ArrayDataset(np.zeros((3, 8, 2)), np.zeros(2))
