import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fctl import _backend
from fctl.loss import EansdlParams, eansdl, eansdl_backward

compiled = pytest.mark.skipif(_backend.compiled_kernels is None, reason="extension not built")
shapes = st.tuples(st.integers(1, 3), st.integers(1, 9), st.integers(1, 9))


def test_get():
    assert _backend.get("python") is _backend.python_kernels
    assert _backend.get(None) is _backend.kernels
    with pytest.raises(ValueError):
        _backend.get("fortran")


def test_env_forces_python():
    code = "import fctl; print(fctl.BACKEND)"
    env = dict(os.environ, FCTL_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env)
    assert out.stdout.strip() == "python"


@compiled
@settings(max_examples=40, deadline=None)
@given(shape=shapes, seed=st.integers(0, 2**32), r=st.integers(0, 5))
def test_forward_kernels_bitwise(shape, seed, r):
    f = np.random.default_rng(seed).normal(size=shape)
    py, cy = _backend.python_kernels, _backend.compiled_kernels
    for a, b in zip(py.sobel(f), cy.sobel(f)):
        assert a.tobytes() == b.tobytes()
    assert py.consistency(f, r).tobytes() == cy.consistency(f, r).tobytes()


@compiled
@settings(max_examples=40, deadline=None)
@given(shape=shapes, seed=st.integers(0, 2**32), r=st.integers(0, 5))
def test_adjoint_kernels_agree(shape, seed, r):
    g = np.random.default_rng(seed)
    f, u, v = g.normal(size=(3,) + shape)
    py, cy = _backend.python_kernels, _backend.compiled_kernels
    np.testing.assert_allclose(cy.sobel_adjoint(u, v), py.sobel_adjoint(u, v), rtol=0, atol=1e-12)
    np.testing.assert_allclose(cy.consistency_adjoint(f, r, u), py.consistency_adjoint(f, r, u), rtol=0, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(shape=shapes, seed=st.integers(0, 2**32), r=st.integers(0, 3))
def test_consistency_adjoint_identity(shape, seed, r):
    # <J^T g, e> equals the directional derivative along e (away from kinks,
    # which random data avoids almost surely)
    g = np.random.default_rng(seed)
    d, u, e = g.normal(size=(3,) + shape)
    k = _backend.python_kernels
    h = 1e-7
    lhs = float(np.sum(k.consistency_adjoint(d, r, u) * e))
    rhs = float(np.sum(u * (k.consistency(d + h * e, r) - k.consistency(d - h * e, r)))) / (2 * h)
    assert lhs == pytest.approx(rhs, rel=1e-5, abs=1e-7)


@compiled
def test_loss_and_gradient_agree_across_backends(rng):
    a, b = rng.normal(size=(2, 2, 3, 12, 10))
    p = EansdlParams(r0=3, delta=0.4)
    for level in range(3):
        lp, lc = eansdl(a, b, p, level, "python"), eansdl(a, b, p, level, "cython")
        assert lp == lc
        gp = eansdl_backward(a, b, p, level, "python").data
        gc = eansdl_backward(a, b, p, level, "cython").data
        np.testing.assert_allclose(gc, gp, rtol=1e-12, atol=1e-15)
