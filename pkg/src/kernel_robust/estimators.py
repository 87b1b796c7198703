"""Standard, augmented and adversarial kernel ridge estimators, their
linearized counterparts, and the closed-form small-perturbation limits."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .kernels import Kernel
from .rkhs import (Dictionary, RidgeSolver, RkhsFunction, SpanBasis,
                   gram, orthonormal_columns, pinv_psd)


class EstimatorError(ValueError):
    pass


class DivergenceError(RuntimeError):
    """Training loss became non-finite; ``last_finite`` is the last good iteration."""

    def __init__(self, message: str, last_finite: int):
        super().__init__(message)
        self.last_finite = last_finite


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if self.X.shape[0] != self.y.shape[0]:
            raise EstimatorError("X and y have different numbers of rows")
        if self.X.shape[0] < 1:
            raise EstimatorError("dataset is empty")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise EstimatorError("dataset contains non-finite values")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass
class AugmentationModel:
    """Perturbations eps * delta.

    ``kind`` is ``"finite"`` (``deltas[i]`` is an array of unit vectors for
    point i), ``"moment"`` (second-moment matrix ``M``, shared or per point)
    or ``"ball"`` (the unit ball; only meaningful for the adversarial limit).
    """
    eps: float
    kind: str
    deltas: list | None = None
    M: np.ndarray | None = None

    def __post_init__(self):
        if not self.eps >= 0:
            raise EstimatorError("eps must be >= 0")
        if self.kind == "finite":
            self.deltas = [np.atleast_2d(np.asarray(d, dtype=np.float64)) for d in self.deltas]
            for i, d in enumerate(self.deltas):
                if d.shape[0] == 0:
                    raise EstimatorError(f"point {i} has an empty perturbation set")
                if np.max(np.abs(np.linalg.norm(d, axis=1) - 1.0)) > 1e-10:
                    raise EstimatorError(f"perturbations of point {i} are not unit vectors")
        elif self.kind == "moment":
            self.M = _check_moment(self.M)
        elif self.kind != "ball":
            raise EstimatorError(f"unknown augmentation kind {self.kind!r}")

    @classmethod
    def finite(cls, eps: float, deltas) -> "AugmentationModel":
        return cls(float(eps), "finite", deltas=list(deltas))

    @classmethod
    def second_moment(cls, eps: float, M) -> "AugmentationModel":
        return cls(float(eps), "moment", M=np.asarray(M, float))

    @classmethod
    def unit_ball(cls, eps: float) -> "AugmentationModel":
        return cls(float(eps), "ball")

    def empirical_moments(self) -> np.ndarray:
        """Per-point second moments of a finite model, shape (n, p, p)."""
        if self.kind != "finite":
            raise EstimatorError("only finite models have empirical moments")
        return np.stack([d.T @ d / len(d) for d in self.deltas])


def _check_moment(M) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim not in (2, 3) or M.shape[-1] != M.shape[-2]:
        raise EstimatorError("second-moment matrix must be p x p (or n x p x p)")
    mats = M.reshape(-1, M.shape[-1], M.shape[-1])
    for A in mats:
        if np.max(np.abs(A - A.T), initial=0.0) > 1e-10 * max(1.0, np.abs(A).max()):
            raise EstimatorError("second-moment matrix is not symmetric")
        if A.size and np.linalg.eigvalsh((A + A.T) / 2)[0] < -1e-10 * max(1.0, np.trace(A)):
            raise EstimatorError("second-moment matrix is not positive semidefinite")
    return M


@dataclass
class FitResult:
    f: RkhsFunction
    mode: str
    lam: float
    eps: float = 0.0
    seed: int | None = None
    trajectory: list | None = None
    info: dict = field(default_factory=dict)

    def __call__(self, X):
        return self.f(X)


# -- standard and augmented ridge ----------------------------------------

def fit_standard(data: Dataset, kernel: Kernel, lam: float) -> FitResult:
    """Kernel ridge with data term (1/n) sum (y_i - f(x_i))^2."""
    return standard_path(data, kernel, [lam])[0]


def standard_path(data: Dataset, kernel: Kernel, lams: Sequence[float]) -> list[FitResult]:
    """fit_standard for several lambdas sharing one eigendecomposition."""
    _check_lams(lams)
    D = Dictionary.points(kernel, data.X)
    solver = _solver(kernel, data.X, np.full(data.n, 1.0 / data.n))
    return [FitResult(RkhsFunction(D, solver.dual(data.y, lam)), "standard", float(lam))
            for lam in lams]


def _solver(kernel: Kernel, P: np.ndarray, w: np.ndarray) -> RidgeSolver:
    # finite feature maps give a much smaller factorization when rows outnumber features
    if kernel.variant != "gaussian":
        dim = kernel.p if kernel.variant == "linear" else kernel.p + kernel.p ** 2
        if dim < len(P):
            return RidgeSolver.from_features(kernel.feature_map(P), w)
    return RidgeSolver(kernel.matrix(P, P), w)


def _check_lams(lams):
    for lam in lams:
        if not lam >= 0:
            raise EstimatorError(f"regularization must be >= 0, got {lam}")


def augmented_points(data: Dataset, aug: AugmentationModel):
    """Stacked augmented inputs, their targets and data-term weights."""
    if aug.kind != "finite":
        raise EstimatorError("augmented fits need a finite perturbation model")
    if len(aug.deltas) != data.n:
        raise EstimatorError("one perturbation set per training point is required")
    P, t, w = [], [], []
    for i, d in enumerate(aug.deltas):
        P.append(data.X[i] + aug.eps * d)
        t.append(np.full(len(d), data.y[i]))
        w.append(np.full(len(d), 1.0 / (data.n * len(d))))
    return np.vstack(P), np.concatenate(t), np.concatenate(w)


def fit_augmented(data: Dataset, kernel: Kernel, lam: float, aug: AugmentationModel) -> FitResult:
    return augmented_path(data, kernel, [lam], aug)[0]


def augmented_path(data: Dataset, kernel: Kernel, lams: Sequence[float],
                   aug: AugmentationModel) -> list[FitResult]:
    """Ridge fit on the perturbed copies, for several lambdas at once.

    Bit-identical augmented inputs (e.g. eps = 0) share one dictionary atom.
    """
    _check_lams(lams)
    P, t, w = augmented_points(data, aug)
    solver = _solver(kernel, P, w)
    # map rows onto the deduplicated dictionary
    keys = [row.tobytes() for row in P]
    slot: dict[bytes, int] = {}
    index = np.empty(len(P), dtype=int)
    for a, k in enumerate(keys):
        index[a] = slot.setdefault(k, len(slot))
    first = np.unique(index, return_index=True)[1]
    D = Dictionary.points(kernel, P[first])
    out = []
    for lam in lams:
        beta = solver.dual(t, lam)
        c = np.zeros(len(D))
        np.add.at(c, index, beta)
        out.append(FitResult(RkhsFunction(D, c), "augmented", float(lam), aug.eps))
    return out


# -- adversarial training over finite candidate sets ---------------------

def default_step(k: int) -> float:
    return min(0.04, 4.0 / np.sqrt(k))


def fit_adversarial_gd(data: Dataset, kernel: Kernel, lam: float, attacks: AugmentationModel,
                       iters: int, record_at: Sequence[int] = (),
                       step: Callable[[int], float] = default_step,
                       monitor: Callable[[int, RkhsFunction], dict] | None = None,
                       snapshots: str = "metrics") -> FitResult:
    """Gradient descent on the worst-case-over-candidates ridge objective.

    The function is parametrized by coefficients over every candidate atom
    K_{x_i + eps*delta}. Each iteration picks, for every point, the candidate
    with the largest squared residual (lowest index on ties) and takes an
    exact gradient step in coefficient space. ``monitor(k, f)`` is called at
    every iteration listed in ``record_at`` (0 means the initial zero fit).
    """
    if iters < 1:
        raise EstimatorError("iters must be >= 1")
    if not lam >= 0:
        raise EstimatorError("regularization must be >= 0")
    P, _, _ = augmented_points(data, attacks)
    counts = np.array([len(d) for d in attacks.deltas])
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    n = data.n
    D = Dictionary.points(kernel, P)
    G = gram(D)
    G2 = G @ G
    # c = G u, and F = G c holds f at every candidate; only u and F are
    # updated per iteration, so a step costs one gather of n rows of G^2
    u = np.zeros(len(P))
    F = np.zeros(len(P))
    y_rep = np.repeat(data.y, counts)
    record = set(int(r) for r in record_at)
    trajectory = []
    width = counts[0] if np.all(counts == counts[0]) else None

    def snap(k):
        c = G @ u
        entry = {"iteration": k}
        if monitor is not None:
            entry.update(monitor(k, RkhsFunction(D, c)))
        if snapshots == "full":
            entry["coeffs"] = c
        trajectory.append(entry)

    if 0 in record:
        snap(0)
    for k in range(1, iters + 1):
        res2 = (y_rep - F) ** 2
        if width is not None:
            sel = starts + np.argmax(res2.reshape(n, width), axis=1)
        else:
            sel = np.array([s + int(np.argmax(res2[s:s + m])) for s, m in zip(starts, counts)])
        r = data.y - F[sel]
        if not np.all(np.isfinite(r)):
            raise DivergenceError(f"loss became non-finite at iteration {k}", k - 1)
        eta = step(k)
        # gradient in c: -(2/n) G[:, sel] r + 2 lam G c
        g = eta * (2.0 / n) * r
        if lam > 0:
            c = G @ u
            u -= 2.0 * eta * lam * c
            F -= 2.0 * eta * lam * (G2 @ c)
        np.add.at(u, sel, g)
        F += g @ G2[sel]
        if k in record:
            snap(k)
    c = G @ u
    if not np.all(np.isfinite(c)):
        raise DivergenceError("non-finite coefficients at the end of training", iters)
    return FitResult(RkhsFunction(D, c), "adversarial_gd", float(lam), attacks.eps,
                     trajectory=trajectory, info={"iters": iters})


# -- linearized objectives and closed-form limits ------------------------

def _per_point_moments(M, n: int, p: int) -> np.ndarray:
    M = _check_moment(M)
    if M.ndim == 2:
        if M.shape != (p, p):
            raise EstimatorError(f"second-moment matrix must be {p} x {p}")
        return np.broadcast_to(M, (n, p, p))
    if M.shape != (n, p, p):
        raise EstimatorError(f"per-point second moments must have shape ({n}, {p}, {p})")
    return M


def _psd_root(A: np.ndarray) -> np.ndarray:
    """L with L L^T = A (columns with zero weight dropped)."""
    w, V = np.linalg.eigh((A + A.T) / 2)
    keep = w > 1e-14 * max(w[-1], 0.0) if w[-1] > 0 else np.zeros(len(w), bool)
    return V[:, keep] * np.sqrt(w[keep])


def fit_linearized_augmented(data: Dataset, kernel: Kernel, lam: float, eps: float, M) -> FitResult:
    """Minimize (1/n) sum [(y_i - f(x_i))^2 + eps^2 (T_i^T f)^T M (T_i^T f)] + lam ||f||^2.

    Solved over span(K_X, T_X): the quadratic tangent penalty is written as
    extra zero-target rows eps * T_{x_i} L e_k with L L^T = M.
    """
    if not lam >= 0:
        raise EstimatorError("regularization must be >= 0")
    n, p = data.n, data.p
    Ms = _per_point_moments(M, n, p)
    D = Dictionary.span_points_tangents(kernel, data.X)
    rows = [np.eye(len(D))[:n]]
    for i in range(n):
        L = _psd_root(Ms[i])
        if eps == 0 or L.shape[1] == 0:
            continue
        R = np.zeros((L.shape[1], len(D)))
        R[:, n + i * p:n + (i + 1) * p] = eps * L.T
        rows.append(R)
    R = np.vstack(rows)
    t = np.concatenate([data.y, np.zeros(len(R) - n)])
    w = np.full(len(R), 1.0 / n)
    G = gram(D)
    Grows = R @ G @ R.T
    beta = RidgeSolver(np.triu(Grows) + np.triu(Grows, 1).T, w).dual(t, lam)
    return FitResult(RkhsFunction(D, R.T @ beta), "linearized_augmented", float(lam), float(eps))


class _TangentGeometry:
    """Orthonormal coordinates of span(K_X, T_X) with the pieces the limits need."""

    def __init__(self, data: Dataset, kernel: Kernel):
        n, p = data.n, data.p
        self.n, self.p = n, p
        self.D = Dictionary.span_points_tangents(kernel, data.X)
        self.basis = SpanBasis(self.D)
        C = self.basis.coords
        self.Kc = C[:, :n]
        self.Tc = [C[:, n + i * p:n + (i + 1) * p] for i in range(n)]
        U = orthonormal_columns(self.Kc)
        self.P = U @ U.T
        self.Pperp = np.eye(self.basis.rank) - self.P
        self.kernel_gram = self.basis.gram[:n, :n]

    def sigma(self, Ms) -> np.ndarray:
        S = sum(T @ M @ T.T for T, M in zip(self.Tc, Ms)) / self.n
        return (S + S.T) / 2

    def ridge_coords(self, y, lam: float) -> np.ndarray:
        alpha = RidgeSolver(self.kernel_gram, np.full(self.n, 1.0 / self.n)).dual(y, lam)
        return self.Kc @ alpha


def _limit(data: Dataset, kernel: Kernel, lam: float, eps: float, M_inner, M_mixed,
           base: str, mode: str) -> FitResult:
    if not eps > 0:
        raise EstimatorError("the limiting formula needs eps > 0")
    if not lam >= 0:
        raise EstimatorError("regularization must be >= 0")
    if base not in ("ridge", "ridgeless"):
        raise EstimatorError("base must be 'ridge' or 'ridgeless'")
    geo = _TangentGeometry(data, kernel)
    n, p = data.n, data.p
    S_inner = geo.sigma(_per_point_moments(M_inner, n, p))
    S_mixed = geo.sigma(_per_point_moments(M_mixed, n, p))
    z = geo.ridge_coords(data.y, lam if base == "ridge" else 0.0)
    A = geo.Pperp @ S_inner @ geo.Pperp
    A = (A + A.T) / 2
    rhs = geo.Pperp @ S_mixed @ geo.P @ z
    mu = lam / eps ** 2
    # stationarity of the linearized objective over the K_X-orthogonal part
    if mu > 0:
        h = -np.linalg.solve(A + mu * np.eye(len(A)), rhs)
    else:
        h = -pinv_psd(A) @ rhs
    g = geo.basis.to_function(z + h)
    return FitResult(g, mode, float(lam), float(eps),
                     info={"rank": geo.basis.rank, "correction_norm": float(np.linalg.norm(h)),
                           "base_norm": float(np.linalg.norm(z))})


def limit_augmented(data: Dataset, kernel: Kernel, lam: float, eps: float, M,
                    base: str = "ridge") -> FitResult:
    """Small-perturbation limit of the augmented estimator.

    ``f_ridge - (P_perp S P_perp + lam/eps^2 I)^+ P_perp S P f_ridge`` with
    ``S = (1/n) sum_i T_{x_i} M T_{x_i}^T``, computed in orthonormal
    coordinates of span(K_X, T_X). ``base="ridgeless"`` starts from the
    minimum-norm interpolant instead of the ridge fit at ``lam``.
    """
    return _limit(data, kernel, lam, eps, M, M, base, "limit_augmented")


def limit_adversarial(data: Dataset, kernel: Kernel, lam: float, eps: float,
                      mixed_term: str = "sigma_prime", M_mixed=None,
                      base: str = "ridge") -> FitResult:
    """Limit of adversarial training over an eps-ball.

    The tangent covariance uses the identity second moment. With
    ``mixed_term="sigma"`` the cross term instead uses ``M_mixed`` (default:
    second moment of the uniform law on the unit ball, I/(p+2)).
    """
    p = data.p
    eye = np.eye(p)
    if mixed_term == "sigma_prime":
        mixed = eye
    elif mixed_term == "sigma":
        mixed = eye / (p + 2) if M_mixed is None else M_mixed
    else:
        raise EstimatorError("mixed_term must be 'sigma' or 'sigma_prime'")
    return _limit(data, kernel, lam, eps, eye, mixed, base, "limit_adversarial")


# -- linearized adversarial objective -------------------------------------

def _adv_parts(z, geo, y, eps):
    r = y - geo.Kc.T @ z
    tz = np.stack([T.T @ z for T in geo.Tc])          # (n, p)
    a = np.linalg.norm(tz, axis=1)
    return r, tz, a


def linearized_adversarial_objective(z, geo: _TangentGeometry, y, lam: float, eps: float) -> float:
    r, _, a = _adv_parts(z, geo, y, eps)
    return float(np.mean((np.abs(r) + eps * a) ** 2) + lam * z @ z)


def _adv_subgradient(z, geo, y, lam, eps):
    r, tz, a = _adv_parts(z, geo, y, eps)
    s = np.abs(r) + eps * a
    g = 2.0 * lam * z
    n = len(y)
    for i in range(n):
        gi = -np.sign(r[i]) * geo.Kc[:, i]
        if a[i] > 0:
            gi = gi + eps * geo.Tc[i] @ (tz[i] / a[i])
        g += (2.0 / n) * s[i] * gi
    return g


def _interpolating_candidate(geo, y, lam, eps):
    """Exact minimizer among interpolants: min eps^2 z^T S' z + lam |z|^2 s.t. K^T z = y,
    with a first-order certificate that it also minimizes the full objective."""
    n = geo.n
    Sp = geo.sigma(np.broadcast_to(np.eye(geo.p), (n, geo.p, geo.p)))
    Q = eps ** 2 * Sp + lam * np.eye(len(Sp))
    w, V = np.linalg.eigh(geo.Pperp)
    N = V[:, w > 0.5]                                   # basis of the K_X-orthogonal part
    z0 = geo.ridge_coords(y, 0.0)
    if N.shape[1]:
        z = z0 - N @ np.linalg.solve(N.T @ Q @ N, N.T @ Q @ z0)
    else:
        z = z0
    # certificate: 2 Q z = -(1/n) sum_i 2 eps a_i t_i k_i with |t_i| <= 1
    r, _, a = _adv_parts(z, geo, y, eps)
    if np.max(np.abs(r)) > 1e-8 * max(1.0, np.abs(y).max()):
        return z, False
    target = -2.0 * Q @ z
    coef, *_ = np.linalg.lstsq(geo.Kc, target, rcond=None)
    resid = np.linalg.norm(geo.Kc @ coef - target)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = coef * n / (2.0 * eps * a)
    ok = resid <= 1e-8 * max(1.0, np.linalg.norm(target)) and np.all(np.abs(t) <= 1.0 + 1e-9)
    return z, bool(ok)


def fit_linearized_adversarial(data: Dataset, kernel: Kernel, lam: float, eps: float,
                               max_iter: int = 5000, tol: float = 1e-7,
                               step0: float | None = None) -> FitResult:
    """Minimize (1/n) sum (|y_i - f(x_i)| + eps |T_{x_i}^T f|)^2 + lam ||f||^2 over span(K_X, T_X).

    Subgradient descent (sign(0) = 0) with diminishing steps, keeping the best
    iterate. Two exact candidates are then tried: the ridge solution (exact
    when eps = 0) and the best interpolating function, which is accepted only
    with a first-order certificate. ``info["stationary"]`` is False when no
    certified candidate exists and descent ran out of budget.
    """
    if not lam > 0:
        raise EstimatorError("the linearized adversarial fit needs lam > 0")
    if not eps >= 0:
        raise EstimatorError("eps must be >= 0")
    geo = _TangentGeometry(data, kernel)
    y = data.y
    obj = lambda z: linearized_adversarial_objective(z, geo, y, lam, eps)
    z = geo.ridge_coords(y, lam)
    best, best_val = z.copy(), obj(z)
    if step0 is None:
        L = 2.0 * (np.linalg.norm(geo.Kc, 2) + eps * max(np.linalg.norm(T, 2) for T in geo.Tc)) ** 2 / data.n
        step0 = 1.0 / (L + 2.0 * lam)
    stationary = False
    for k in range(1, max_iter + 1):
        g = _adv_subgradient(z, geo, y, lam, eps)
        gn = np.linalg.norm(g)
        if gn <= tol:
            stationary = True
            break
        z = z - (step0 / np.sqrt(k)) * g
        v = obj(z)
        if v < best_val:
            best, best_val = z.copy(), v
    candidates = []
    if eps == 0:
        candidates.append((geo.ridge_coords(y, lam), True))
    elif eps > 0:
        candidates.append(_interpolating_candidate(geo, y, lam, eps))
    for zc, certified in candidates:
        vc = obj(zc)
        if certified and vc <= best_val + 1e-12 * max(1.0, abs(best_val)):
            best, best_val, stationary = zc, vc, True
    if not stationary:
        warnings.warn("linearized adversarial fit stopped before reaching stationarity", RuntimeWarning)
    return FitResult(geo.basis.to_function(best), "linearized_adversarial", float(lam), float(eps),
                     info={"objective": best_val, "stationary": stationary})
