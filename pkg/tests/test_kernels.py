import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kernel_robust.kernels import (Kernel, KernelError, check_derivatives, fd_grad2, fd_hess12,
                                   random_pairs)

KERNELS = [Kernel.gaussian(3, 0.7), Kernel.quadratic(3, 1.3, 0.6), Kernel.linear(3)]


def test_gaussian_values_by_hand():
    k = Kernel.gaussian(2, 0.5)
    x, y = np.array([1.0, 0.0]), np.array([0.0, 2.0])
    assert k.eval(x, y) == pytest.approx(np.exp(-0.5 * 5.0), rel=1e-15)
    # d/dy exp(-g|x-y|^2) = 2 g (x - y) k
    assert np.allclose(k.grad2(x, y), 2 * 0.5 * (x - y) * np.exp(-2.5), rtol=1e-14)
    H = 2 * 0.5 * (np.eye(2) - 2 * 0.5 * np.outer(x - y, x - y)) * np.exp(-2.5)
    assert np.allclose(k.hess12(x, y), H, rtol=1e-13)


def test_quadratic_and_linear_by_hand():
    x, y = np.array([1.0, 2.0]), np.array([-1.0, 0.5])
    s = x @ y
    assert Kernel.quadratic(2, 2.0, 3.0).eval(x, y) == pytest.approx(4 * s + 9 * s * s)
    assert Kernel.linear(2).eval(x, y) == pytest.approx(s)


@pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: k.variant)
def test_derivatives_match_finite_differences(kernel):
    rep = check_derivatives(kernel, random_pairs(3, 40, np.random.default_rng(1), 0.7))
    assert rep.passed, rep
    assert rep.n_pairs == 40


@pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: k.variant)
def test_matrix_agrees_with_pointwise_eval(kernel, rng):
    X, Y = rng.standard_normal((4, 3)), rng.standard_normal((5, 3))
    K = kernel.matrix(X, Y)
    assert K.shape == (4, 5)
    assert K[2, 3] == pytest.approx(kernel.eval(X[2], Y[3]), rel=1e-13)


@pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: k.variant)
def test_gram_is_psd(kernel, rng):
    X = rng.standard_normal((12, 3))
    G = kernel.matrix(X, X)
    assert np.allclose(G, G.T, atol=1e-13)
    assert np.linalg.eigvalsh(G)[0] >= -1e-10 * np.trace(G)


@pytest.mark.parametrize("kernel", KERNELS[1:], ids=lambda k: k.variant)
def test_feature_map_reproduces_kernel(kernel, rng):
    X = rng.standard_normal((6, 3))
    Phi = kernel.feature_map(X)
    assert np.allclose(Phi @ Phi.T, kernel.matrix(X, X), atol=1e-12)


def test_tangent_feature_map_is_directional_derivative(rng):
    k = Kernel.quadratic(3, 1.1, 0.9)
    X, U = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    h = 1e-6
    fd = (k.feature_map(X + h * U) - k.feature_map(X - h * U)) / (2 * h)
    assert np.allclose(k.tangent_feature_map(X, U), fd, atol=1e-7)


def test_config_round_trip_and_rejections():
    k = Kernel.gaussian(4, 2.5)
    assert Kernel.from_config(k.to_config(), 4) == k
    with pytest.raises(KernelError):
        Kernel.from_config({"type": "gaussian", "gamma": 1.0, "sigma": 2.0}, 4)
    with pytest.raises(KernelError):
        Kernel.from_config({"type": "laplace"}, 4)
    with pytest.raises(KernelError):
        Kernel.gaussian(2, -1.0)


@given(st.integers(1, 4), st.floats(0.05, 3.0), st.integers(0, 2 ** 32 - 1))
def test_gaussian_derivative_property(p, gamma, seed):
    k = Kernel.gaussian(p, gamma)
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(p) * 0.5, rng.standard_normal(p) * 0.5
    assert np.abs(k.grad2(x, y) - fd_grad2(k, x, y, 1e-5)).max() < 1e-6
    assert np.abs(k.hess12(x, y) - fd_hess12(k, x, y, 1e-5)).max() < 1e-6
    # symmetry k(x,y) = k(y,x) and the mixed derivative is symmetric in the swap
    assert k.eval(x, y) == pytest.approx(k.eval(y, x), rel=1e-14)
    assert np.allclose(k.hess12(x, y), k.hess12(y, x).T, atol=1e-13)
