import os
import subprocess
import sys

import numpy as np
import pytest

from rulefuse import backends
from rulefuse.rules import canonical_condition_matrix, decision_from_number

needs_numba = pytest.mark.skipif(
    not backends._HAVE_NUMBA, reason="numba backend not available"
)


def design(rule_number):
    R = canonical_condition_matrix()
    return R.design_matrix(), decision_from_number(rule_number).as_float()


@needs_numba
@pytest.mark.parametrize("rule_number", [63, 31, 119, 1, 254, 150])
def test_fit_logistic_backends_agree(rule_number):
    X, d = design(rule_number)
    beta_np, used_np, ok_np = backends.fit_logistic_numpy(X, d, 1.0, 2000)
    beta_nb, used_nb, ok_nb = backends.fit_logistic_numba(X, d, 1.0, 2000)
    assert ok_np and ok_nb
    assert used_np == used_nb == 2000
    # same arithmetic, different summation order
    np.testing.assert_allclose(beta_nb, beta_np, rtol=1e-9, atol=1e-9)


@needs_numba
def test_fit_logistic_backends_agree_on_divergence():
    X, d = design(63)
    _, used_np, ok_np = backends.fit_logistic_numpy(X, d, 1e6, 500)
    _, used_nb, ok_nb = backends.fit_logistic_numba(X, d, 1e6, 500)
    assert not ok_np and not ok_nb
    assert used_np == used_nb


@needs_numba
@pytest.mark.parametrize("connectivity", [6, 18, 26])
def test_label_components_backends_agree(connectivity):
    rng = np.random.default_rng(0)
    for _ in range(5):
        mask = rng.random((12, 11, 10)) < 0.3
        labels_np, n_np = backends.label_components_numpy(mask, connectivity)
        labels_nb, n_nb = backends.label_components_numba(mask, connectivity)
        assert n_np == n_nb
        # both label in scan order, so the arrays match exactly
        np.testing.assert_array_equal(labels_nb, labels_np)


@needs_numba
def test_label_components_edge_cases():
    empty = np.zeros((4, 4, 4), dtype=bool)
    full = np.ones((4, 4, 4), dtype=bool)
    for backend in (backends.label_components_numpy, backends.label_components_numba):
        labels, n = backend(empty)
        assert n == 0 and not labels.any()
        labels, n = backend(full)
        assert n == 1 and (labels == 1).all()


def test_numpy_fallback_selected_by_env_flag():
    code = "from rulefuse.backends import BACKEND; print(BACKEND)"
    env = dict(os.environ, **{backends.NO_NUMBA_ENV: "1"})
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True
    )
    assert out.stdout.strip() == "numpy"


@needs_numba
def test_numba_selected_by_default():
    code = "from rulefuse.backends import BACKEND; print(BACKEND)"
    env = {k: v for k, v in os.environ.items() if k != backends.NO_NUMBA_ENV}
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True
    )
    assert out.stdout.strip() == "numba"


def test_full_suite_works_without_numba(tmp_path):
    """Fitting through the public API under the numpy fallback matches Table-style values."""
    code = (
        "from rulefuse.fitting import fit_stacking\n"
        "from rulefuse.rules import canonical_condition_matrix, pirads_decisions, Zone\n"
        "rep = fit_stacking(canonical_condition_matrix(), pirads_decisions(Zone.WG))\n"
        "assert rep.residual < 1e-5, rep.residual\n"
        "print('ok')\n"
    )
    env = dict(os.environ, **{backends.NO_NUMBA_ENV: "1"})
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True
    )
    assert out.stdout.strip() == "ok"
