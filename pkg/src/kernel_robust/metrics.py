"""Fit-quality measures: test MSE, gradient-based Lipschitz estimates, RKHS norm
ratios, and exact second moments of quadratic polynomials under spherically
symmetric input laws."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .rkhs import RkhsFunction, evaluate, gradient, norm

LAWS = ("gaussian_iso", "uniform_sphere", "uniform_ball")
NORM_FLOOR = 1e-14


class MetricError(ValueError):
    pass


def empirical_mse(f: RkhsFunction, test) -> float:
    """Mean of (f(x) - y)^2 over the rows of a dataset."""
    X = np.asarray(test.X, float)
    if len(X) == 0:
        raise MetricError("empty test set")
    r = evaluate(f, X) - np.asarray(test.y, float)
    return float(np.mean(r * r))


def empirical_lip(f: RkhsFunction, points) -> float:
    """Largest gradient norm of ``f`` over a finite point set."""
    X = np.asarray(points, float)
    if X.ndim == 1:
        X = X[:, None] if f.kernel.p == 1 else X[None, :]
    if len(X) == 0:
        raise MetricError("empty point set")
    return float(np.linalg.norm(gradient(f, X), axis=1).max())


def segment_grid(a, b, num: int = 2001) -> np.ndarray:
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    s = np.linspace(0.0, 1.0, num)
    return a + s[:, None] * (b - a)


def segment_lip(f: RkhsFunction, a, b, num: int = 2001) -> float:
    """Gradient-norm maximum over a dense grid on the segment [a, b]."""
    return empirical_lip(f, segment_grid(a, b, num))


def norm_ratio(f: RkhsFunction, g: RkhsFunction) -> float:
    """|f|_H / |g|_H, or +inf when |g|_H is numerically zero."""
    if f.kernel != g.kernel:
        raise MetricError("functions live in different spaces")
    den = norm(g)
    if den <= NORM_FLOOR:
        return float("inf")
    return norm(f) / den


# -- quadratic polynomials under spherically symmetric laws -----------------

@dataclass(frozen=True)
class MomentConstants:
    """C1 = E x_1^2 and C2 = E x_1^4 - (E x_1^2)^2 for a spherically symmetric law."""
    C1: float
    C2: float
    p: int

    def __post_init__(self):
        if not (np.isfinite(self.C1) and np.isfinite(self.C2)):
            raise MetricError("moment constants must be finite")
        if self.C1 <= 0 or self.C2 < -self.C1 ** 2:
            raise MetricError("invalid moment constants")

    @property
    def cross(self) -> float:
        """E x_1^2 x_2^2, which equals E x_1^4 / 3 for any spherically symmetric law."""
        return (self.C2 + self.C1 ** 2) / 3.0


def moment_constants(law: str, p: int) -> MomentConstants:
    """Closed-form constants. The radius r = |x| fixes them:
    C1 = E r^2 / p and E x_1^4 = 3 E r^4 / (p (p + 2))."""
    if p < 1:
        raise MetricError("dimension must be >= 1")
    if law == "gaussian_iso":
        r2, r4 = p, p * (p + 2.0)
    elif law == "uniform_sphere":
        r2, r4 = 1.0, 1.0
    elif law == "uniform_ball":
        r2, r4 = p / (p + 2.0), p / (p + 4.0)
    else:
        raise MetricError(f"unsupported law {law!r}; choose from {LAWS}")
    C1 = r2 / p
    m4 = 3.0 * r4 / (p * (p + 2.0))
    return MomentConstants(C1, m4 - C1 ** 2, p)


def sample_law(law: str, p: int, count: int, rng: np.random.Generator) -> np.ndarray:
    Z = rng.standard_normal((count, p))
    if law == "gaussian_iso":
        return Z
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    if law == "uniform_sphere":
        return Z
    if law == "uniform_ball":
        return Z * rng.random(count)[:, None] ** (1.0 / p)
    raise MetricError(f"unsupported law {law!r}")


def _check_sym(D):
    D = np.asarray(D, float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise MetricError("D must be square")
    if np.abs(D - D.T).max() > 1e-10:
        raise MetricError("D must be symmetric")
    return D


def quadratic_generalization(d, D, mc: MomentConstants) -> float:
    """E (d.x + x^T D x)^2 for x from a spherically symmetric law.

    Odd moments vanish, and every fourth moment reduces to
    m = E x_1^2 x_2^2 via E x_1^4 = 3m, giving
    C1 |d|^2 + m (Tr(D)^2 + 2 Tr(D^2)).
    """
    d = np.asarray(d, float)
    D = _check_sym(D)
    if d.shape != (D.shape[0],) or D.shape[0] != mc.p:
        raise MetricError("shape mismatch between d, D and the law dimension")
    tr = np.trace(D)
    return float(mc.C1 * d @ d + mc.cross * (tr * tr + 2.0 * np.sum(D * D)))


def monte_carlo_second_moment(d, D, law: str, draws: int = 1_000_000, seed: int = 0,
                              chunk: int = 200_000) -> tuple[float, float]:
    """Monte-Carlo mean of (d.x + x^T D x)^2 and its standard error.

    Each chunk gets its own child seed and chunks are combined in order, so
    the result does not depend on how chunks are scheduled.
    """
    d = np.asarray(d, float)
    D = _check_sym(D)
    p = len(d)
    sizes = [min(chunk, draws - k) for k in range(0, draws, chunk)]
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    s1 = s2 = 0.0
    for size, child in zip(sizes, children):
        X = sample_law(law, p, size, np.random.default_rng(child))
        v = (X @ d + np.einsum("ai,ij,aj->a", X, D, X)) ** 2
        s1 += v.sum()
        s2 += (v * v).sum()
    mean = s1 / draws
    var = max(s2 / draws - mean * mean, 0.0) * draws / max(draws - 1, 1)
    return float(mean), float(np.sqrt(var / draws))


def quadratic_lip_unit_ball(b, B) -> tuple[float, np.ndarray]:
    """Exact max over |x| <= 1 of |b + 2 B x| for g(x) = b.x + x^T B x.

    The maximizer lies on the sphere and solves a trust-region problem. In the
    eigenbasis of A = 2B it is x_k = a_k c_k / (s - a_k^2) with the secular
    equation sum (a_k c_k)^2 / (s - a_k^2)^2 = 1 and s >= max a_k^2. When the
    top eigenspace carries too little weight the boundary solution is padded
    along it. Returns the value and a maximizer.
    """
    b = np.asarray(b, float)
    B = _check_sym(B)
    alpha, Q = np.linalg.eigh(2.0 * B)
    c = Q.T @ b
    a2 = alpha * alpha
    top_val = a2.max()
    scale = max(top_val, float(c @ c), 1.0)
    top = a2 >= top_val - 1e-12 * scale
    w = (alpha * c) ** 2
    cands = []

    def secular(s):
        return np.sum(w / (s - a2) ** 2) - 1.0

    lo = top_val + 1e-13 * scale
    if w[top].sum() > 0 and secular(lo) > 0:
        hi = top_val + np.sqrt(w.sum()) + 1.0
        s = brentq(secular, lo, hi, xtol=1e-15 * scale, rtol=4 * np.finfo(float).eps, maxiter=500)
        cands.append(alpha * c / (s - a2))
    x = np.zeros_like(c)
    rest = ~top
    x[rest] = alpha[rest] * c[rest] / (top_val - a2[rest])
    room = 1.0 - x @ x
    if room >= 0:
        k = int(np.argmax(top))
        for sign in (1.0, -1.0):
            z = x.copy()
            z[k] += sign * np.sqrt(room)
            cands.append(z)
    if not cands:
        # Only reachable through round-off; fall back to the top eigenvector.
        z = np.zeros_like(c)
        z[int(np.argmax(a2))] = 1.0
        cands.append(z)
    vals = [float(np.linalg.norm(c + alpha * z)) for z in cands]
    i = int(np.argmax(vals))
    return vals[i], Q @ cands[i]


def quadratic_coordinates(f: RkhsFunction) -> tuple[np.ndarray, np.ndarray]:
    """Polynomial coordinates (b, B) with f(x) = b.x + x^T B x for a quadratic-kernel function."""
    ker = f.kernel
    if ker.variant != "quadratic":
        raise MetricError("polynomial coordinates need a quadratic kernel")
    D = f.dictionary
    Phi = np.where(D.tangent[:, None], ker.tangent_feature_map(D.centers, D.directions),
                   ker.feature_map(D.centers))
    v = Phi.T @ f.coeffs
    p = ker.p
    B = ker.a2 * v[p:].reshape(p, p)
    return ker.a1 * v[:p], (B + B.T) / 2
