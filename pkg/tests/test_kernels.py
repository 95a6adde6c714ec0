"""Backend parity: the compiled kernels must match the NumPy reference."""

import numpy as np
import pytest

from clusterdl.kernels import _numpy_impl

try:
    from clusterdl.kernels import _mlp_c
except ImportError:
    _mlp_c = None

needs_ext = pytest.mark.skipif(_mlp_c is None, reason="compiled kernels not built")

CASES = [
    ((4, 8, 3), 6, 0),
    ((16, 32, 4), 8, 1),
    ((5, 7, 11, 3), 4, 2),  # two hidden layers
    ((2, 3, 2), 1, 3),  # batch of one
]


def make_case(dims, batch, seed):
    rng = np.random.default_rng(seed)
    vals = rng.normal(scale=0.5, size=_numpy_impl.param_count(dims))
    X = rng.normal(size=(batch, dims[0]))
    y = rng.integers(0, dims[-1], size=batch)
    return vals, X, y


@needs_ext
@pytest.mark.parametrize("dims,batch,seed", CASES)
def test_loss_parity(dims, batch, seed):
    vals, X, y = make_case(dims, batch, seed)
    a = _mlp_c.loss_value(vals, dims, X, y)
    b = _numpy_impl.loss_value(vals, dims, X, y)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-14)


@needs_ext
@pytest.mark.parametrize("dims,batch,seed", CASES)
def test_grad_parity(dims, batch, seed):
    vals, X, y = make_case(dims, batch, seed)
    la, ga = _mlp_c.loss_grad(vals, dims, X, y)
    lb, gb = _numpy_impl.loss_grad(vals, dims, X, y)
    assert la == pytest.approx(lb, rel=1e-12, abs=1e-14)
    np.testing.assert_allclose(ga, gb, rtol=1e-10, atol=1e-13)


@needs_ext
@pytest.mark.parametrize("dims,batch,seed", CASES)
def test_sgd_parity(dims, batch, seed):
    vals, X, y = make_case(dims, batch, seed)
    va, vb = vals.copy(), vals.copy()
    fa = _mlp_c.sgd_steps_inplace(va, dims, X, y, 0.05, 7)
    fb = _numpy_impl.sgd_steps_inplace(vb, dims, X, y, 0.05, 7)
    assert fa == pytest.approx(fb, rel=1e-12, abs=1e-14)
    np.testing.assert_allclose(va, vb, rtol=1e-10, atol=1e-13)


def test_backend_reports_name():
    import os

    from clusterdl import kernels

    assert kernels.BACKEND in ("compiled", "numpy")
    forced = os.environ.get("CLUSTERDL_KERNEL", "auto")
    if forced in ("compiled", "numpy"):
        assert kernels.BACKEND == forced
    elif _mlp_c is not None:  # auto prefers the extension when built
        assert kernels.BACKEND == "compiled"
