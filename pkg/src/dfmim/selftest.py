"""Fast numerical self-checks behind ``dfmim selftest``."""

from __future__ import annotations

import numpy as np

from .dsp import inverse_dct2, mfcc
from .funcore import beta_curve, inner_product, make_grid
from .gradcheck import TOLERANCE, run_gradchecks
from .simgen import GpSpec, covariance_matrix
from .training import classification_metrics

# closed forms of <beta_i, beta_j> over [0, 1]
_ANALYTIC_GRAM = np.array([
    [12.5, 0.0, 0.0, -12.0 / np.pi],
    [0.0, 12.5, 18.0 / np.pi, 0.0],
    [0.0, 18.0 / np.pi, 4.5, 0.0],
    [-12.0 / np.pi, 0.0, 0.0, 4.5],
])


def run_selftest():
    """Yield ``(name, passed, detail)`` for each check."""
    grid = make_grid(30)
    betas = [beta_curve(j, grid) for j in (1, 2, 3, 4)]
    gram = np.array([[inner_product(a, b) for b in betas] for a in betas])
    err = np.max(np.abs(gram - _ANALYTIC_GRAM) / np.maximum(1.0, np.abs(_ANALYTIC_GRAM)))
    yield "quadrature", err < 1e-2, f"max mixed error {err:.2e}"

    diff = np.max(np.abs(covariance_matrix(GpSpec.fbm(0.5), grid)
                         - covariance_matrix(GpSpec.brownian(), grid)))
    yield "fbm(H=0.5) == brownian", diff < 1e-12, f"max diff {diff:.1e}"

    rng = np.random.default_rng(0)
    melspec = np.exp(rng.standard_normal((8, 16)))
    coeffs = mfcc(melspec, n_mfcc=16).values
    rt = np.max(np.abs(inverse_dct2(coeffs) - np.log(melspec + 1e-10)))
    yield "dct round trip", rt < 1e-8, f"max error {rt:.1e}"

    wa, ua = classification_metrics([[9, 1], [50, 50]])
    ok = abs(wa - 59 / 110) < 1e-12 and abs(ua - 0.7) < 1e-12
    yield "WA/UA oracle", ok, f"WA={wa:.6f} UA={ua:.6f}"

    worst = max(err for _, _, err in run_gradchecks(range(1), ["model[regression]", "encoder[pre]"]))
    yield "gradcheck (tiny)", worst < TOLERANCE, f"max rel error {worst:.1e}"
