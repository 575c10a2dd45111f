import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sacdrop import kernels
from sacdrop.kernels import get_backend

PY = get_backend("python")
try:
    CY = get_backend("cython")
except ImportError:  # pragma: no cover - extension not built
    CY = None

needs_cython = pytest.mark.skipif(CY is None, reason="compiled extension not built")


@needs_cython
@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 500), eps=st.floats(0.01, 0.2),
       rho=st.floats(0.5, 1.5))
def test_droplet_profile_backends_agree(seed, n, eps, rho):
    rng = np.random.default_rng(seed)
    px, py = rng.uniform(-2, 2, (2, n))
    w = rng.uniform(0, 1, n)
    hcut = 2 * eps * np.log(eps) ** 2
    a, b = np.empty(n), np.empty(n)
    sa = PY.droplet_profile(px, py, w, 0.1, -0.2, rho, eps, hcut, a)
    sb = CY.droplet_profile(px, py, w, 0.1, -0.2, rho, eps, hcut, b)
    # libm and numpy tanh may differ in the last few ulps
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-13)
    np.testing.assert_allclose(sa, sb, rtol=1e-12, atol=1e-10)
    assert np.all(np.abs(a) <= 1.0)


@needs_cython
@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 500), dt=st.floats(1e-4, 1.0))
def test_imex_and_potential_backends_agree(seed, n, dt):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=n)
    wt = rng.uniform(0.1, 1, n)
    nz = rng.normal(size=n)
    a, b = np.empty(n), np.empty(n)
    PY.imex_rhs(w, wt, dt, nz, a)
    out = CY.imex_rhs(w, wt, dt, nz, b)
    assert out is b
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
    assert CY.potential_sum(w, wt) == pytest.approx(PY.potential_sum(w, wt), rel=1e-12, abs=1e-14)


def test_imex_rhs_oracle():
    w = np.array([0.5, -1.0, 2.0])
    wt = np.array([1.0, 2.0, 1.0])
    f = w**3 - w
    fbar = np.dot(wt, f) / wt.sum()
    expected = wt * (w + 0.1 * (fbar - f) + 0.01)
    out = kernels.imex_rhs(w, wt, 0.1, np.full(3, 0.01), np.empty(3))
    np.testing.assert_allclose(out, expected, rtol=1e-15)


def test_pure_python_switch():
    code = "import sacdrop.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, SACDROP_PURE_PYTHON="1")
    res = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env)
    assert res.stdout.strip() == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        get_backend("fortran")
