import numpy as np
import pytest
from hypothesis import given, strategies as st

from subsurr import _pykernels, kernels
from subsurr.mesh import build_box
from subsurr.surrogates import init_theta, n_params


def _unit_hex():
    return build_box(3, 1.5).nodes[build_box(3, 1.5).elements[0]]


def test_hex_stiffness_properties(backend):
    X = _unit_hex()
    K = kernels.hex_stiffness_batch(X[None], 2e5, 0.3)[0]
    assert K.shape == (24, 24)
    np.testing.assert_allclose(K, K.T, atol=1e-9 * np.abs(K).max())
    w = np.linalg.eigvalsh(K)
    # six rigid body modes, everything else positive
    assert np.sum(np.abs(w) < 1e-8 * w.max()) == 6
    assert w.min() > -1e-8 * w.max()
    rigid = np.tile([1.0, -2.0, 0.5], 8)
    np.testing.assert_allclose(K @ rigid, 0.0, atol=1e-8 * np.abs(K).max())


def test_hex_uniaxial_patch(backend):
    # uniform strain eps_11 on a unit cube with nu = 0: nodal forces sum to E * area
    X = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
                  [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], dtype=float)
    K = kernels.hex_stiffness_batch(X[None], 7.0, 0.0)[0]
    u = np.zeros(24)
    u[0::3] = 1e-3 * X[:, 0]
    f = K @ u
    right = X[:, 0] == 1.0
    assert f[0::3][right].sum() == pytest.approx(7.0 * 1e-3, rel=1e-12)


@pytest.mark.skipif("compiled" not in kernels.BACKENDS, reason="extension not built")
def test_backends_agree():
    rng = np.random.default_rng(0)
    X = _unit_hex()[None] + 0.05 * rng.standard_normal((5, 8, 3))
    E, nu = rng.uniform(1, 2, 5), rng.uniform(0, 0.4, 5)
    a = kernels.BACKENDS["python"].hex_stiffness_batch(X, E, nu)
    b = kernels.BACKENDS["compiled"].hex_stiffness_batch(X, E, nu)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12 * np.abs(a).max())
    dims = (3, 4, 4, 6)
    th = init_theta(dims, rng)
    Xin = rng.standard_normal((7, 3))
    np.testing.assert_allclose(kernels.BACKENDS["python"].mlp_forward(th, dims, Xin),
                               kernels.BACKENDS["compiled"].mlp_forward(th, dims, Xin),
                               rtol=1e-13, atol=1e-14)
    for head, T in ((0, rng.standard_normal((7, 6))), (1, rng.standard_normal((7, 3)))):
        la, ga = kernels.BACKENDS["python"].mlp_loss_grad(th, dims, Xin, T, head)
        lb, gb = kernels.BACKENDS["compiled"].mlp_loss_grad(th, dims, Xin, T, head)
        assert la == pytest.approx(lb, rel=1e-12)
        np.testing.assert_allclose(ga, gb, rtol=1e-10, atol=1e-12)


def test_forward_shapes_and_relu_transparency(backend):
    # nonnegative weights, biases and inputs keep every pre-activation >= 0,
    # so the network collapses to the product of its affine maps
    rng = np.random.default_rng(3)
    dims = (3, 5, 5, 2)
    Ws = [rng.uniform(0, 1, (dims[i + 1], dims[i])) for i in range(3)]
    bs = [rng.uniform(0, 1, dims[i + 1]) for i in range(3)]
    theta = np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(Ws, bs)])
    assert theta.size == n_params(dims)
    X = rng.uniform(0, 1, (4, 3))
    out = kernels.mlp_forward(theta, dims, X)
    ref = X
    for W, b in zip(Ws, bs):
        ref = ref @ W.T + b
    np.testing.assert_allclose(out, ref, rtol=1e-13)


@given(step=st.integers(1, 50), lr=st.floats(1e-5, 1e-1))
def test_adam_step_matches_formula(step, lr):
    rng = np.random.default_rng(step)
    th, g = rng.standard_normal(6), rng.standard_normal(6)
    m, v = rng.standard_normal(6), rng.uniform(0, 1, 6)
    m1, v1 = 0.9 * m + 0.1 * g, 0.999 * v + 0.001 * g * g
    want = th - lr * (m1 / (1 - 0.9 ** step)) / (np.sqrt(v1 / (1 - 0.999 ** step)) + 1e-8)
    for name in kernels.BACKENDS:
        t2, m2, v2 = th.copy(), m.copy(), v.copy()
        kernels.BACKENDS[name].adam_step(t2, g, m2, v2, lr, 0.9, 0.999, 1e-8, step)
        np.testing.assert_allclose(t2, want, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(m2, m1, rtol=1e-12, atol=1e-15)


def test_pure_python_module_is_importable():
    assert hasattr(_pykernels, "mlp_loss_grad")
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")
