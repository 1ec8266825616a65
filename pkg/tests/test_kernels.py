import json
import os
import subprocess
import sys

import numpy as np
import pytest

from cyclestudy import _kernels


@pytest.fixture
def data():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(500, 3))
    codes = rng.integers(0, 17, 500).astype(np.int64)
    w = rng.uniform(0.1, 3.0, 500)
    return X, codes, w


def test_numpy_demean_matches_groupwise_definition(data):
    X, codes, w = data
    out = X.copy()
    means = _kernels.demean_sweep_numpy(out, codes, 17, w)
    for g in range(17):
        m = codes == g
        expect = np.average(X[m], axis=0, weights=w[m])
        assert np.allclose(means[g], expect, atol=1e-13)
        assert np.allclose(np.average(out[m], axis=0, weights=w[m]), 0.0, atol=1e-13)


def test_empty_group_has_zero_mean(data):
    X, codes, w = data
    means = _kernels.demean_sweep_numpy(X.copy(), codes, 20, w)
    assert np.all(means[17:] == 0.0)


@pytest.mark.skipif(not _kernels.NUMBA_AVAILABLE, reason="numba not installed")
def test_numba_and_numpy_agree(data):
    X, codes, w = data
    a, b = X.copy(), X.copy()
    ma = _kernels.demean_sweep_numpy(a, codes, 17, w)
    mb = _kernels.demean_sweep_numba(b, codes, 17, w)
    assert np.allclose(a, b, atol=1e-13) and np.allclose(ma, mb, atol=1e-13)
    assert np.allclose(_kernels.cluster_sums_numpy(X, codes, 17),
                       _kernels.cluster_sums_numba(X, codes, 17), atol=1e-12)


@pytest.mark.parametrize("flag,expect", [("0", "numpy"), ("off", "numpy")])
def test_env_flag_selects_numpy(flag, expect):
    env = dict(os.environ, CYCLESTUDY_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "from cyclestudy import _kernels; print(_kernels.backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expect


def test_fit_identical_across_backends(tmp_path):
    code = ("import numpy as np\n"
            "from cyclestudy.regress import RegressionProblem, fit\n"
            "rng = np.random.default_rng(0)\n"
            "n = 300; X = rng.normal(size=(n, 2)); y = X @ [1.0, -2.0] + rng.normal(size=n)\n"
            "fe = [rng.integers(0, 12, n), rng.integers(0, 7, n)]\n"
            "r = fit(RegressionProblem(y, X, ['a', 'b'], rng.integers(0, 20, n), fe=fe))\n"
            "import json; print(json.dumps([r.coef.tolist(), r.se.tolist()]))\n")
    outs = []
    for flag in ("1", "0"):
        env = dict(os.environ, CYCLESTUDY_NUMBA=flag)
        outs.append(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                                   text=True, check=True).stdout)
    a, b = (np.array(json.loads(o)) for o in outs)
    assert np.allclose(a, b, rtol=1e-10)
