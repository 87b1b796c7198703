import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kernel_robust.perturbation import (PerturbationError, PerturbationInstance, block_inverse,
                                        correction_formula, first_order_deviation,
                                        measure_bound_scaling, random_instance, ridge_solve,
                                        second_order_residual, solve_ridge_pair)


def test_random_instance_shapes_and_orthogonality(rng):
    inst = random_instance(10, 6, 3, rng, orthogonal=True)
    assert inst.A.shape == inst.B.shape == (10, 6)
    assert np.linalg.matrix_rank(inst.A) == 3
    assert np.abs(inst.A.T @ inst.B).max() < 1e-12
    assert np.linalg.norm(inst.B, 2) == pytest.approx(1.0)
    # y lies in the column space of A
    x = np.linalg.lstsq(inst.A, inst.y, rcond=None)[0]
    assert np.allclose(inst.A @ x, inst.y)


def test_instance_validation():
    with pytest.raises(PerturbationError):
        PerturbationInstance(np.eye(2), np.eye(3), np.zeros(2), 0.1, 0.1, 2)
    with pytest.raises(PerturbationError):
        PerturbationInstance(np.eye(2), np.eye(2), np.zeros(2), -0.1, 0.1, 2)


def test_ridge_solve_against_normal_equations(rng):
    M, y = rng.standard_normal((6, 4)), rng.standard_normal(6)
    x = ridge_solve(M, y, 0.3)
    assert np.allclose((M.T @ M + 0.3 * np.eye(4)) @ x, M.T @ y)


def test_correction_requires_orthogonal_columns(rng):
    inst = random_instance(10, 6, 3, rng, eps=0.1, lam=0.01)
    with pytest.raises(PerturbationError):
        correction_formula(inst)


def test_zero_eps_has_no_deviation(rng):
    inst = random_instance(8, 5, 3, rng, eps=0.0, lam=1e-2)
    x_t, x_h = solve_ridge_pair(inst)
    assert np.allclose(x_t, x_h)


def test_second_order_scaling(rng):
    inst = random_instance(12, 8, 4, rng, orthogonal=True)
    rep = measure_bound_scaling(inst, [0.1, 0.05, 0.025, 0.0125], lambda e: e * e, second_order_residual)
    assert rep.slope >= 1.8
    rows = list(rep.rows())
    assert len(rows) == 4 and rows[0][3] == rep.slope


def test_first_order_scaling(rng):
    inst = random_instance(12, 8, 4, rng)
    rep = measure_bound_scaling(inst, [1e-2, 5e-3, 2.5e-3], lambda e: 1e-2, first_order_deviation)
    assert 0.8 <= rep.slope <= 1.3


def test_scaling_input_checks(rng):
    inst = random_instance(6, 4, 2, rng)
    with pytest.raises(PerturbationError):
        measure_bound_scaling(inst, [0.1, 0.05], lambda e: e)
    with pytest.raises(PerturbationError):
        measure_bound_scaling(inst, [0.1, 0.05, 0.04], lambda e: e)


def test_exact_deviation_reported_as_exact(rng):
    inst = random_instance(6, 4, 2, rng)
    rep = measure_bound_scaling(inst, [0.1, 0.05, 0.025], lambda e: 0.01, lambda i: 0.0)
    assert rep.exact and rep.slope == float("inf")


def test_block_inverse_singular_block():
    with pytest.raises(PerturbationError):
        block_inverse(np.eye(2), np.zeros((2, 1)), np.zeros((1, 2)), np.zeros((1, 1)))


@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 32 - 1))
def test_block_inverse_property(k, l, seed):
    rng = np.random.default_rng(seed)
    A11 = rng.standard_normal((k, k)) + 4 * np.eye(k)
    C22 = rng.standard_normal((l, l)) + 4 * np.eye(l)
    U, V = rng.standard_normal((k, l)) * 0.5, rng.standard_normal((l, k)) * 0.5
    big = np.block([[A11, U], [V, C22]])
    assert np.abs(block_inverse(A11, U, V, C22) @ big - np.eye(k + l)).max() <= 1e-10


@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 1e-1))
def test_correction_improves_on_zeroth_order(seed, eps):
    rng = np.random.default_rng(seed)
    inst = random_instance(10, 6, 3, rng, eps=eps, lam=eps * eps, orthogonal=True)
    x_t, x_h = solve_ridge_pair(inst)
    assert second_order_residual(inst) <= np.linalg.norm(x_t - x_h) + 1e-14
