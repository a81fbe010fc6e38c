"""Acceptance criteria 1-8, each checked at its stated tolerance and time budget.

Every criterion records one PASS/FAIL line; the lines are printed as they
happen and again in the terminal summary.
"""

import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from dfmim.config import parse_config_text
from dfmim.dsp import chunk_count, inverse_dct2, mfcc, write_wav
from dfmim.folds import build_folds, read_manifest
from dfmim.funcore import beta_curve, inner_product, make_grid
from dfmim.gradcheck import CASES, TOLERANCE, run_gradchecks
from dfmim.model import DfmimConfig
from dfmim.pipeline import DEFAULT_SIZES, REFERENCE_RMSE, extract_corpus, run_ser, run_simulation
from dfmim.simgen import GpSpec, covariance_matrix, sample_gp
from dfmim.synth import make_synthetic_corpus
from dfmim.training import classification_metrics

SIM_SEED = 7
SER_SEED = 0


def verdict(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def test_criterion_1_gradient_integrity():
    start = time.perf_counter()
    worst = {}
    for name, _, err in run_gradchecks(range(5)):
        worst[name] = max(worst.get(name, 0.0), err)
    elapsed = time.perf_counter() - start
    top = max(worst.values())
    assert set(worst) == set(CASES) and "model[regression]" in worst
    ok = top < TOLERANCE and elapsed < 30.0
    assert verdict(1, ok, f"max rel err {top:.2e} over {len(worst)} cases x 5 seeds in {elapsed:.1f}s")


def _relmix_close(got, want, tol=1e-2):
    return abs(got - want) <= tol * max(1.0, abs(want))


def test_criterion_2_quadrature():
    start = time.perf_counter()
    grid = make_grid(30)
    betas = [beta_curve(j, grid) for j in (1, 2, 3, 4)]
    gram = np.array([[inner_product(a, b) for b in betas] for a in betas])
    elapsed = time.perf_counter() - start
    # the criterion's stated targets, taken literally
    stated = np.diag([12.5, 12.5, 4.5, 4.5])
    bad = [(i, j) for i in range(4) for j in range(4) if not _relmix_close(gram[i, j], stated[i, j])]
    ok = not bad and elapsed < 1.0
    detail = f"{len(bad)} of 16 entries off target" + (
        f", e.g. <b{bad[0][0] + 1},b{bad[0][1] + 1}> = {gram[bad[0]]:.4f} vs 0" if bad else "")
    assert verdict(2, ok, detail + f" ({elapsed * 1e3:.0f} ms)")


def test_criterion_3_gp_fidelity():
    start = time.perf_counter()
    grid = make_grid(30)
    rng = np.random.default_rng(2024)
    paths = np.array([sample_gp(GpSpec.brownian(), grid, rng).values for _ in range(20000)])
    emp = paths.T @ paths / len(paths)
    s, t = np.meshgrid(grid.points, grid.points, indexing="ij")
    cov_err = np.abs(emp - np.minimum(s, t)).max()
    fbm_err = np.abs(covariance_matrix(GpSpec.fbm(0.5), grid) - covariance_matrix(GpSpec.brownian(), grid)).max()
    elapsed = time.perf_counter() - start
    ok = cov_err <= 0.05 and fbm_err <= 1e-12 and elapsed < 60.0
    assert verdict(3, ok, f"max |emp - min(s,t)| {cov_err:.4f}, fbm(0.5) gap {fbm_err:.1e}, {elapsed:.1f}s")


_SIM_CACHE = {}


def _simulate(scenario):
    start = time.perf_counter()
    _, result = run_simulation(scenario, DfmimConfig.simulation(seed=SIM_SEED), SIM_SEED, DEFAULT_SIZES)
    return result, time.perf_counter() - start


@pytest.mark.slow
@pytest.mark.parametrize("scenario", ["S1", "S2", "S3"])
def test_criterion_4_simulation(scenario):
    result, elapsed = _simulate(scenario)
    _SIM_CACHE[scenario] = result.to_text()
    t = result.report.test
    ok = result.reduction_vs_clean >= 0.70 and elapsed < 1800
    detail = (
        f"{scenario} rmse_vs_clean {t['rmse_vs_clean']:.4f} rmse_vs_noisy {t['rmse_vs_noisy']:.4f} "
        f"mean-predictor {result.baseline_clean:.4f} reduction {result.reduction_vs_clean:.1%} "
        f"(reference {REFERENCE_RMSE[scenario]}) {elapsed:.0f}s"
    )
    assert verdict(4, ok, detail)


def test_criterion_5_mfcc_pipeline(tmp_path):
    start = time.perf_counter()
    counts_ok = all(chunk_count(n) == max(1, (n - 64) // 48 + 1) for n in range(1, 501))
    rng = np.random.default_rng(5)
    melspec = np.exp(rng.standard_normal((80, 64)))
    roundtrip = np.abs(inverse_dct2(mfcc(melspec, n_mfcc=64).values) - np.log(melspec + 1e-10)).max()
    t = np.arange(16000) / 16000
    wav = tmp_path / "a440.wav"
    write_wav(wav, 0.5 * np.sin(2 * np.pi * 440 * t), 16000)
    script = (
        "import sys; from dfmim.dsp import FeatureExtractor, FeatureConfig, write_chunk_record; "
        "write_chunk_record(sys.argv[2], FeatureExtractor(FeatureConfig()).chunks_from_file(sys.argv[1]))"
    )
    outputs = []
    for k in range(2):
        dest = tmp_path / f"run{k}.chunks"
        subprocess.run([sys.executable, "-c", script, str(wav), str(dest)], check=True)
        outputs.append(dest.read_bytes())
    stable = outputs[0] == outputs[1] and len(outputs[0]) > 0
    elapsed = time.perf_counter() - start
    ok = counts_ok and roundtrip < 1e-8 and stable and elapsed < 30.0
    assert verdict(5, ok, f"chunk sweep {'ok' if counts_ok else 'wrong'}, DCT round trip {roundtrip:.1e}, "
                          f"feature file {'byte-stable' if stable else 'differs'}, {elapsed:.1f}s")


def test_criterion_6_metrics_oracle():
    cases = [
        (np.diag([10, 10, 10, 10]), 1.0, 1.0),
        ([[90, 10], [90, 10]], 0.5, 0.5),
        ([[9, 1], [50, 50]], 59 / 110, (0.9 + 0.5) / 2),
    ]
    worst = 0.0
    for cm, wa, ua in cases:
        got_wa, got_ua = classification_metrics(cm)
        worst = max(worst, abs(got_wa - wa), abs(got_ua - ua))
    assert verdict(6, worst <= 1e-12, f"max deviation {worst:.1e} over 3 matrices")


def _fold_ok(fold, speakers):
    roles = [fold.test, fold.validation, *fold.train]
    return len(set(roles)) == len(roles) and set(roles) == set(speakers)


def _fold_plan_ok(folds, speakers):
    tests_once = sorted(f.test for f in folds) == sorted(speakers)
    return tests_once and all(_fold_ok(f, speakers) for f in folds)


_SER_CACHE = {}


def _ser_run(root):
    start = time.perf_counter()
    manifest = read_manifest(make_synthetic_corpus(root, 20, 400, SER_SEED))
    run = parse_config_text("")
    features = extract_corpus(manifest, run)
    result = run_ser(manifest, run, SER_SEED, n_folds=3, features=features)
    return manifest, result, time.perf_counter() - start


@pytest.mark.slow
def test_criterion_7_ser_smoke(tmp_path):
    manifest, result, elapsed = _ser_run(tmp_path / "corpus")
    _SER_CACHE["text"] = result.to_text()
    plan_ok = _fold_plan_ok(build_folds(manifest), manifest.speakers())
    plan_ok &= all(_fold_ok(f.fold, manifest.speakers()) for f in result.folds)
    was = ", ".join(f"{f.report.test['WA']:.3f}" for f in result.folds)
    ok = result.mean_wa >= 0.90 and plan_ok and elapsed < 900
    assert verdict(7, ok, f"chunk WA per fold [{was}] mean {result.mean_wa:.3f}, "
                          f"fold plan {'valid' if plan_ok else 'invalid'}, {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_8_determinism(tmp_path):
    for scenario in ("S1", "S2", "S3"):
        if scenario not in _SIM_CACHE:
            _SIM_CACHE[scenario] = _simulate(scenario)[0].to_text()
    if "text" not in _SER_CACHE:
        _SER_CACHE["text"] = _ser_run(tmp_path / "first")[1].to_text()
    same_sim = all(_simulate(s)[0].to_text() == _SIM_CACHE[s] for s in ("S1", "S2", "S3"))
    same_ser = _ser_run(tmp_path / "again")[1].to_text() == _SER_CACHE["text"]
    assert verdict(8, same_sim and same_ser, f"simulation reports {'identical' if same_sim else 'differ'}, "
                                             f"SER report {'identical' if same_ser else 'differs'}")
