import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kernel_robust.data_io import sample_unit_sphere
from kernel_robust.estimators import (AugmentationModel, Dataset, DivergenceError, EstimatorError,
                                      augmented_path, augmented_points, fit_adversarial_gd,
                                      fit_augmented, fit_linearized_adversarial,
                                      fit_linearized_augmented, fit_standard, limit_adversarial,
                                      limit_augmented, standard_path)
from kernel_robust.kernels import Kernel
from kernel_robust.rkhs import Dictionary, cross_gram, distance, evaluate, norm

KER = Kernel.gaussian(2, 1.0)


def _data(rng, n=4, p=2):
    return Dataset(rng.uniform(-1, 1, (n, p)), rng.standard_normal(n))


def _tangent_residual(f, X):
    T = Dictionary.canonical_tangents(f.kernel, X)
    return np.abs(cross_gram(T, f.dictionary) @ f.coeffs).max()


def test_dataset_validation():
    with pytest.raises(EstimatorError):
        Dataset(np.zeros((3, 2)), np.zeros(2))
    with pytest.raises(EstimatorError):
        Dataset(np.array([[np.nan, 0.0]]), [1.0])


def test_augmentation_model_validation():
    with pytest.raises(EstimatorError):
        AugmentationModel.finite(0.1, [np.array([[2.0, 0.0]])])
    with pytest.raises(EstimatorError):
        AugmentationModel.second_moment(0.1, np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(EstimatorError):
        AugmentationModel.second_moment(0.1, -np.eye(2))
    m = AugmentationModel.finite(0.1, [np.array([[1.0, 0.0], [0.0, 1.0]])])
    assert np.allclose(m.empirical_moments()[0], np.eye(2) / 2)


def test_standard_ridge_matches_direct_solve(rng):
    d = _data(rng)
    lam = 0.03
    K = KER.matrix(d.X, d.X)
    alpha = np.linalg.solve(K + d.n * lam * np.eye(d.n), d.y)
    f = fit_standard(d, KER, lam).f
    X = rng.standard_normal((7, 2))
    assert np.allclose(evaluate(f, X), KER.matrix(X, d.X) @ alpha, atol=1e-12)


def test_ridgeless_interpolates(rng):
    d = _data(rng, 6)
    f = fit_standard(d, KER, 0.0).f
    assert np.allclose(evaluate(f, d.X), d.y, atol=1e-8)


def test_zero_eps_augmentation_equals_standard(rng):
    d = _data(rng)
    deltas = [sample_unit_sphere(2, 5, rng) for _ in range(d.n)]
    fa = fit_augmented(d, KER, 0.01, AugmentationModel.finite(0.0, deltas)).f
    assert len(fa.dictionary) == d.n
    assert distance(fa, fit_standard(d, KER, 0.01).f) < 1e-10


def test_augmented_matches_stacked_ridge(rng):
    d = _data(rng, 3)
    deltas = [sample_unit_sphere(2, 4, rng) for _ in range(3)]
    aug = AugmentationModel.finite(0.2, deltas)
    P, t, w = augmented_points(d, aug)
    assert P.shape == (12, 2) and np.allclose(w.sum(), 1.0)
    lam = 0.01
    K = KER.matrix(P, P)
    beta = np.linalg.solve(K + lam * np.diag(1 / w), t)
    f = fit_augmented(d, KER, lam, aug).f
    X = rng.standard_normal((5, 2))
    assert np.allclose(evaluate(f, X), KER.matrix(X, P) @ beta, atol=1e-10)


def test_paths_equal_single_fits(rng):
    d = _data(rng)
    lams = [1e-4, 1e-2, 1.0]
    aug = AugmentationModel.finite(0.1, [sample_unit_sphere(2, 3, rng) for _ in range(d.n)])
    for lam, fs, fa in zip(lams, standard_path(d, KER, lams), augmented_path(d, KER, lams, aug)):
        assert distance(fs.f, fit_standard(d, KER, lam).f) < 1e-10
        assert distance(fa.f, fit_augmented(d, KER, lam, aug).f) < 1e-9


def test_negative_lambda_rejected(rng):
    with pytest.raises(EstimatorError):
        fit_standard(_data(rng), KER, -1.0)


def test_limit_at_zero_lambda_is_tangent_orthogonal(rng):
    d = _data(rng, 3)
    g0 = limit_augmented(d, KER, 0.0, 0.01, np.eye(2)).f
    assert _tangent_residual(g0, d.X) <= 1e-8 * norm(g0)
    # it still interpolates the data
    assert np.allclose(evaluate(g0, d.X), d.y, atol=1e-7)


def test_limit_reduces_to_ridge_when_damping_dominates(rng):
    d = _data(rng, 3)
    lam = 1e-2
    g = limit_augmented(d, KER, lam, 1e-6, np.eye(2)).f
    assert distance(g, fit_standard(d, KER, lam).f) < 1e-6


def test_limit_matches_linearized_augmented(rng):
    # linearized fit at (lam, eps) and the limit agree as eps -> 0 with lam / eps^2 fixed
    d = _data(rng, 3)
    gaps = []
    for eps in (1e-2, 1e-3):
        lam = eps ** 2
        fl = fit_linearized_augmented(d, KER, lam, eps, np.eye(2)).f
        g = limit_augmented(d, KER, lam, eps, np.eye(2)).f
        gaps.append(distance(fl, g) / norm(g))
    assert gaps[1] < gaps[0] / 5


def test_augmented_approaches_limit(rng):
    d = _data(rng, 3)
    deltas = [sample_unit_sphere(2, 60, rng) for _ in range(3)]
    devs = []
    for eps in (0.1, 0.05, 0.025):
        aug = AugmentationModel.finite(eps, deltas)
        fa = fit_augmented(d, KER, eps ** 2, aug).f
        g = limit_augmented(d, KER, eps ** 2, eps, aug.empirical_moments()).f
        devs.append(distance(fa, g))
    slope = np.polyfit(np.log([0.1, 0.05, 0.025]), np.log(devs), 1)[0]
    assert slope >= 0.8


def test_linearized_adversarial_zero_eps_is_ridge(rng):
    d = _data(rng)
    fa = fit_linearized_adversarial(d, KER, 1e-2, 0.0).f
    assert distance(fa, fit_standard(d, KER, 1e-2).f) < 1e-8


def test_linearized_adversarial_matches_limit_on_fixed_instance():
    rng = np.random.default_rng(0)
    d = Dataset(rng.uniform(-1, 1, (3, 2)), rng.standard_normal(3))
    fa = fit_linearized_adversarial(d, KER, 1e-4, 1e-2)
    g = limit_adversarial(d, KER, 1e-4, 1e-2, base="ridgeless").f
    assert fa.info["stationary"]
    assert distance(fa.f, g) <= 1e-4 * norm(g)


def test_limit_adversarial_mixed_term_options(rng):
    d = _data(rng, 3)
    a = limit_adversarial(d, KER, 1e-3, 1e-2).f
    b = limit_adversarial(d, KER, 1e-3, 1e-2, mixed_term="sigma").f
    assert np.isfinite(norm(a)) and np.isfinite(norm(b))
    with pytest.raises(EstimatorError):
        limit_adversarial(d, KER, 1e-3, 1e-2, mixed_term="other")


def test_adversarial_gd_single_candidate_converges_to_ridge(rng):
    d = _data(rng, 3)
    attacks = AugmentationModel.finite(0.0, [np.array([[1.0, 0.0]])] * 3)
    lam = 0.1
    fr = fit_adversarial_gd(d, KER, lam, attacks, 3000, step=lambda k: 0.5)
    assert distance(fr.f, fit_standard(d, KER, lam).f) < 1e-6


def test_adversarial_gd_trajectory_and_snapshots(rng):
    d = _data(rng, 3)
    attacks = AugmentationModel.finite(0.1, [sample_unit_sphere(2, 4, rng) for _ in range(3)])
    fr = fit_adversarial_gd(d, KER, 0.0, attacks, 20, record_at=[0, 5, 20],
                            monitor=lambda k, f: {"value": float(evaluate(f, d.X[:1])[0])},
                            snapshots="full")
    assert [e["iteration"] for e in fr.trajectory] == [0, 5, 20]
    assert fr.trajectory[0]["value"] == 0.0
    assert all("coeffs" in e for e in fr.trajectory)


def test_adversarial_gd_divergence_is_reported(rng):
    d = _data(rng, 3)
    attacks = AugmentationModel.finite(0.1, [sample_unit_sphere(2, 2, rng) for _ in range(3)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        with pytest.raises(DivergenceError) as info:
            fit_adversarial_gd(d, KER, 0.0, attacks, 5000, step=lambda k: 1e3)
    assert info.value.last_finite >= 0


@given(st.integers(2, 5), st.floats(1e-4, 1.0), st.integers(0, 2 ** 32 - 1))
def test_adversarial_loss_dominates_augmented_loss(n, eps, seed):
    # the worst candidate residual is at least the mean residual for every fit
    rng = np.random.default_rng(seed)
    d = _data(rng, n)
    deltas = [sample_unit_sphere(2, 3, rng) for _ in range(n)]
    aug = AugmentationModel.finite(eps, deltas)
    f = fit_augmented(d, KER, 1e-2, aug).f
    worst = mean = 0.0
    for i in range(n):
        r2 = (evaluate(f, d.X[i] + eps * deltas[i]) - d.y[i]) ** 2
        worst += r2.max() / n
        mean += r2.mean() / n
    assert worst >= mean - 1e-15


@given(st.floats(1e-3, 1e-1), st.integers(0, 2 ** 32 - 1))
def test_limit_has_smaller_tangent_energy_than_ridge(eps, seed):
    # the limit trades data fit for a smaller tangent penalty
    rng = np.random.default_rng(seed)
    d = _data(rng, 3)
    lam = eps ** 2
    g = limit_augmented(d, KER, lam, eps, np.eye(2)).f
    f = fit_standard(d, KER, lam).f

    def tangent_energy(h):
        T = Dictionary.canonical_tangents(KER, d.X)
        v = cross_gram(T, h.dictionary) @ h.coeffs
        return float(v @ v)
    assert tangent_energy(g) <= tangent_energy(f) * (1 + 1e-8) + 1e-14
