"""Numerical checks for perturbed ridge systems and a 2x2 block inverse.

An instance is a consistent system ``A x = y`` together with a perturbation
direction ``B``. The perturbed fit uses ``C = A + eps B``. When the column
spaces of ``A`` and ``B`` are orthogonal, the first-order change of the ridge
solution has the closed form returned by :func:`correction_formula`.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

_ORTH_TOL = 1e-10
EXACT_FLOOR = 1e-14


class PerturbationError(ValueError):
    pass


@dataclass(frozen=True)
class PerturbationInstance:
    A: np.ndarray
    B: np.ndarray
    y: np.ndarray
    eps: float
    lam: float
    rank_A: int

    def __post_init__(self):
        A = np.asarray(self.A, float)
        B = np.asarray(self.B, float)
        y = np.asarray(self.y, float)
        if A.ndim != 2 or A.shape != B.shape:
            raise PerturbationError(f"A and B must be matrices of equal shape, got {A.shape} and {B.shape}")
        if y.shape != (A.shape[0],):
            raise PerturbationError(f"y must have length {A.shape[0]}")
        if self.eps < 0 or self.lam < 0:
            raise PerturbationError("eps and lam must be >= 0")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "y", y)

    def with_params(self, eps: float | None = None, lam: float | None = None) -> "PerturbationInstance":
        return replace(self, eps=self.eps if eps is None else float(eps),
                       lam=self.lam if lam is None else float(lam))

    @property
    def C(self) -> np.ndarray:
        return self.A + self.eps * self.B


def _row_space_projector(A, rank):
    _, _, Vt = np.linalg.svd(A, full_matrices=False)
    V = Vt[:rank].T
    return V @ V.T


def random_instance(m: int, p: int, n: int, rng: np.random.Generator, *, eps: float = 0.0,
                    lam: float = 0.0, orthogonal: bool = False,
                    sv_range=(1.0, 2.0)) -> PerturbationInstance:
    """Rank-``n`` ``A`` with singular values in ``sv_range``, ``y = A z``.

    With ``orthogonal=True`` the columns of ``B`` are projected onto the
    orthogonal complement of the column space of ``A`` (so ``A^T B = 0``) and
    rescaled to unit spectral norm.
    """
    if not (1 <= n < m and n <= p):
        raise PerturbationError("need 1 <= n < m and n <= p")
    U, _ = np.linalg.qr(rng.standard_normal((m, n)))
    V, _ = np.linalg.qr(rng.standard_normal((p, n)))
    s = rng.uniform(*sv_range, size=n)
    A = (U * s) @ V.T
    B = rng.standard_normal((m, p))
    if orthogonal:
        B = B - U @ (U.T @ B)
    B = B / np.linalg.norm(B, 2)
    y = A @ rng.standard_normal(p)
    return PerturbationInstance(A, B, y, eps, lam, n)


def _check_consistent(inst: PerturbationInstance):
    coef, *_ = np.linalg.lstsq(inst.A, inst.y, rcond=None)
    if np.linalg.norm(inst.A @ coef - inst.y) > 1e-10 * max(1.0, np.linalg.norm(inst.y)):
        raise PerturbationError("y is not in the column span of A")


def ridge_solve(M: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """argmin |M x - y|^2 + lam |x|^2 (minimum-norm least squares at lam = 0)."""
    if lam > 0:
        p = M.shape[1]
        return np.linalg.solve(M.T @ M + lam * np.eye(p), M.T @ y)
    return np.linalg.lstsq(M, y, rcond=None)[0]


def solve_ridge_pair(inst: PerturbationInstance):
    """Ridge solutions of the perturbed system ``C`` and the base system ``A``."""
    _check_consistent(inst)
    return ridge_solve(inst.C, inst.y, inst.lam), ridge_solve(inst.A, inst.y, inst.lam)


def correction_formula(inst: PerturbationInstance) -> np.ndarray:
    """``-(Pp S Pp + (lam/eps^2) I)^{-1} Pp S Pl x_hat`` with ``S = B^T B``.

    ``Pl`` projects onto the row space of ``A`` and ``Pp = I - Pl``. Requires
    ``A^T B = 0``. At ``lam = 0`` the inverse becomes a pseudoinverse.
    """
    A, B = inst.A, inst.B
    if np.abs(A.T @ B).max() > _ORTH_TOL * max(1.0, np.abs(A).max() * np.abs(B).max()):
        raise PerturbationError("correction formula needs A^T B = 0")
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[inst.rank_A - 1] < 1e-8 * sv[0]:
        raise PerturbationError("A is numerically rank deficient below rank_A")
    p = A.shape[1]
    Pl = _row_space_projector(A, inst.rank_A)
    Pp = np.eye(p) - Pl
    S = B.T @ B
    x_hat = ridge_solve(A, inst.y, inst.lam)
    rhs = Pp @ S @ Pl @ x_hat
    if not np.any(rhs):
        return np.zeros(p)
    Q = Pp @ S @ Pp
    if inst.lam > 0:
        if inst.eps == 0:
            return np.zeros(p)
        return -np.linalg.solve(Q + (inst.lam / inst.eps ** 2) * np.eye(p), rhs)
    return -np.linalg.pinv(Q, rcond=1e-12, hermitian=True) @ rhs


def block_inverse(A11, U, V, C22) -> np.ndarray:
    """Inverse of ``[[A11, U], [V, C22]]`` through the Schur complement of ``C22``."""
    A11, U, V, C22 = (np.atleast_2d(np.asarray(a, float)) for a in (A11, U, V, C22))
    k, l = A11.shape[0], C22.shape[0]
    if A11.shape != (k, k) or C22.shape != (l, l) or U.shape != (k, l) or V.shape != (l, k):
        raise PerturbationError("incompatible block shapes")
    try:
        C_inv = np.linalg.inv(C22)
    except np.linalg.LinAlgError as exc:
        raise PerturbationError("C22 is singular") from exc
    S = A11 - U @ C_inv @ V
    if np.linalg.cond(S) > 1e14:
        raise PerturbationError("Schur complement A11 - U C22^-1 V is singular")
    S_inv = np.linalg.inv(S)
    top_right = -S_inv @ U @ C_inv
    bottom_left = -C_inv @ V @ S_inv
    bottom_right = C_inv + C_inv @ V @ S_inv @ U @ C_inv
    return np.block([[S_inv, top_right], [bottom_left, bottom_right]])


@dataclass
class ScalingReport:
    eps: np.ndarray
    lam: np.ndarray
    deviation: np.ndarray
    slope: float
    residual: float
    exact: bool

    def rows(self):
        for e, l, d in zip(self.eps, self.lam, self.deviation):
            yield float(e), float(l), float(d), self.slope


def first_order_deviation(inst: PerturbationInstance) -> float:
    x_t, x_h = solve_ridge_pair(inst)
    return float(np.linalg.norm(x_t - x_h))


def second_order_residual(inst: PerturbationInstance) -> float:
    x_t, x_h = solve_ridge_pair(inst)
    return float(np.linalg.norm((x_t - x_h) - correction_formula(inst)))


def measure_bound_scaling(family: Callable[[float, float], PerturbationInstance] | PerturbationInstance,
                          eps_list: Sequence[float], lam_rule: Callable[[float], float],
                          deviation: Callable[[PerturbationInstance], float] = first_order_deviation
                          ) -> ScalingReport:
    """Least-squares slope of log(deviation) against log(eps).

    ``family`` is either a base instance (only eps and lam vary) or a callable
    ``(eps, lam) -> instance``. Deviations all below 1e-14 are reported as
    exact with slope ``inf``.
    """
    eps = np.asarray(eps_list, float)
    if len(eps) < 3:
        raise PerturbationError("need at least three eps values")
    ratios = eps[1:] / eps[:-1]
    if np.any(eps <= 0) or not np.allclose(ratios, ratios[0], rtol=1e-6) or ratios[0] >= 1:
        raise PerturbationError("eps values must decrease geometrically")
    lam = np.array([float(lam_rule(e)) for e in eps])
    if isinstance(family, PerturbationInstance):
        base = family
        family = lambda e, l: base.with_params(e, l)  # noqa: E731
    dev = np.array([deviation(family(e, l)) for e, l in zip(eps, lam)])
    if np.all(dev < EXACT_FLOOR):
        return ScalingReport(eps, lam, dev, float("inf"), 0.0, True)
    if np.any(dev < EXACT_FLOOR):
        raise PerturbationError("deviation hit the round-off floor for part of the eps range")
    X = np.column_stack([np.log(eps), np.ones_like(eps)])
    coef, res, *_ = np.linalg.lstsq(X, np.log(dev), rcond=None)
    resid = float(np.sqrt(res[0] / len(eps))) if res.size else 0.0
    return ScalingReport(eps, lam, dev, float(coef[0]), resid, False)
