"""Positive-definite kernels with analytic first and mixed second derivatives.

Three variants are supported:

* ``gaussian``  -- k(x, y) = exp(-gamma * |x - y|^2)
* ``quadratic`` -- k(x, y) = a1^2 <x, y> + a2^2 <x, y>^2
* ``linear``    -- k(x, y) = <x, y>

Besides pointwise evaluation, every kernel exposes batched *pairings* used to
assemble Gram matrices over point atoms ``K_x`` and tangent atoms ``T_x u``:

    <K_x, K_y>         = k(x, y)
    <K_x, T_y v>       = grad2(x, y) . v
    <T_x u, T_y v>     = u^T hess12(x, y) v
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.spatial.distance import cdist

VARIANTS = ("gaussian", "quadratic", "linear")


class KernelError(ValueError):
    """Invalid kernel parameters or mismatched input dimensions."""


def _as_vector(x, p: int, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != p:
        raise KernelError(f"{name} must be a vector of length {p}, got shape {x.shape}")
    return x


_DIRECT_LIMIT = 4_000_000


def _diff_dot_left(X, Y, U) -> np.ndarray:
    """(X[a] - Y[b]) . U[a], computed from explicit differences when small."""
    if X.shape[0] * Y.shape[0] * X.shape[1] <= _DIRECT_LIMIT:
        return np.einsum("abj,aj->ab", X[:, None, :] - Y[None, :, :], U)
    return np.einsum("aj,aj->a", X, U)[:, None] - U @ Y.T


def _diff_dot_right(X, Y, V) -> np.ndarray:
    """(X[a] - Y[b]) . V[b]."""
    if X.shape[0] * Y.shape[0] * X.shape[1] <= _DIRECT_LIMIT:
        return np.einsum("abj,bj->ab", X[:, None, :] - Y[None, :, :], V)
    return X @ V.T - np.einsum("bj,bj->b", Y, V)[None, :]


def _as_rows(X, p: int, name: str) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != p:
        raise KernelError(f"{name} must have {p} columns, got shape {X.shape}")
    return X


@dataclass(frozen=True)
class Kernel:
    variant: str
    p: int
    gamma: float = 1.0
    a1: float = 1.0
    a2: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise KernelError(f"unknown kernel variant {self.variant!r}")
        if int(self.p) != self.p or self.p < 1:
            raise KernelError(f"dimension must be a positive integer, got {self.p}")
        if self.variant == "gaussian" and not self.gamma > 0:
            raise KernelError("gaussian bandwidth gamma must be > 0")
        if self.variant == "quadratic":
            if self.a1 < 0 or self.a2 < 0 or (self.a1 == 0 and self.a2 == 0):
                raise KernelError("quadratic coefficients must be >= 0 and not both zero")

    # -- constructors -----------------------------------------------------
    @classmethod
    def gaussian(cls, p: int, gamma: float) -> "Kernel":
        return cls("gaussian", p, gamma=float(gamma))

    @classmethod
    def quadratic(cls, p: int, a1: float, a2: float) -> "Kernel":
        return cls("quadratic", p, a1=float(a1), a2=float(a2))

    @classmethod
    def linear(cls, p: int) -> "Kernel":
        return cls("linear", p)

    @classmethod
    def from_config(cls, spec: dict, p: int) -> "Kernel":
        """Build from a config table such as ``{type = "gaussian", gamma = 10.0}``."""
        spec = dict(spec)
        kind = spec.pop("type", None)
        if kind == "gaussian":
            allowed = {"gamma"}
        elif kind == "quadratic":
            allowed = {"a1", "a2"}
        elif kind == "linear":
            allowed = set()
        else:
            raise KernelError(f"unknown kernel type {kind!r}")
        extra = set(spec) - allowed
        if extra:
            raise KernelError(f"unknown key(s) for {kind} kernel: {sorted(extra)}")
        return cls(kind, p, **{k: float(v) for k, v in spec.items()})

    def to_config(self) -> dict:
        if self.variant == "gaussian":
            return {"type": "gaussian", "gamma": self.gamma}
        if self.variant == "quadratic":
            return {"type": "quadratic", "a1": self.a1, "a2": self.a2}
        return {"type": "linear"}

    @property
    def q1(self) -> float:
        # coefficient of <x,y> (quadratic: a1^2)
        return self.a1 ** 2

    @property
    def q2(self) -> float:
        return self.a2 ** 2

    # -- pointwise operations ---------------------------------------------
    def eval(self, x, y) -> float:
        x = _as_vector(x, self.p, "x")
        y = _as_vector(y, self.p, "y")
        if self.variant == "gaussian":
            d = x - y
            return float(np.exp(-self.gamma * (d @ d)))
        s = float(x @ y)
        if self.variant == "quadratic":
            return self.q1 * s + self.q2 * s * s
        return s

    def grad2(self, x, y) -> np.ndarray:
        """Gradient of k(x, y) with respect to ``y``."""
        x = _as_vector(x, self.p, "x")
        y = _as_vector(y, self.p, "y")
        if self.variant == "gaussian":
            d = x - y
            return 2.0 * self.gamma * np.exp(-self.gamma * (d @ d)) * d
        if self.variant == "quadratic":
            return (self.q1 + 2.0 * self.q2 * (x @ y)) * x
        return x.copy()

    def hess12(self, x, y) -> np.ndarray:
        """Mixed derivative matrix H[i, j] = d^2 k / dx_i dy_j."""
        x = _as_vector(x, self.p, "x")
        y = _as_vector(y, self.p, "y")
        eye = np.eye(self.p)
        if self.variant == "gaussian":
            d = x - y
            k = np.exp(-self.gamma * (d @ d))
            return k * (2.0 * self.gamma * eye - 4.0 * self.gamma ** 2 * np.outer(d, d))
        if self.variant == "quadratic":
            return (self.q1 + 2.0 * self.q2 * (x @ y)) * eye + 2.0 * self.q2 * np.outer(y, x)
        return eye

    # -- batched pairings -------------------------------------------------
    def matrix(self, X, Y) -> np.ndarray:
        """k(X[a], Y[b]) for all pairs."""
        X = _as_rows(X, self.p, "X")
        Y = _as_rows(Y, self.p, "Y")
        if self.variant == "gaussian":
            return np.exp(-self.gamma * cdist(X, Y, "sqeuclidean"))
        S = X @ Y.T
        if self.variant == "quadratic":
            return self.q1 * S + self.q2 * S * S
        return S

    def pair_point_tangent(self, X, Y, V) -> np.ndarray:
        """<K_{X[a]}, T_{Y[b]} V[b]> = grad2(X[a], Y[b]) . V[b]."""
        X = _as_rows(X, self.p, "X")
        Y = _as_rows(Y, self.p, "Y")
        V = _as_rows(V, self.p, "V")
        if self.variant == "gaussian":
            K = self.matrix(X, Y)
            return 2.0 * self.gamma * K * _diff_dot_right(X, Y, V)
        XV = X @ V.T
        if self.variant == "quadratic":
            S = X @ Y.T
            return (self.q1 + 2.0 * self.q2 * S) * XV
        return XV

    def pair_tangent_tangent(self, X, U, Y, V) -> np.ndarray:
        """<T_{X[a]} U[a], T_{Y[b]} V[b]> = U[a]^T hess12(X[a], Y[b]) V[b]."""
        X = _as_rows(X, self.p, "X")
        U = _as_rows(U, self.p, "U")
        Y = _as_rows(Y, self.p, "Y")
        V = _as_rows(V, self.p, "V")
        UV = U @ V.T
        if self.variant == "gaussian":
            K = self.matrix(X, Y)
            du = _diff_dot_left(X, Y, U)
            dv = _diff_dot_right(X, Y, V)
            g = self.gamma
            return K * (2.0 * g * UV - 4.0 * g * g * du * dv)
        if self.variant == "quadratic":
            S = X @ Y.T
            # u^T y x^T v
            return (self.q1 + 2.0 * self.q2 * S) * UV + 2.0 * self.q2 * (U @ Y.T) * (X @ V.T)
        return UV

    # -- explicit features (finite-dimensional kernels only) ---------------
    def feature_map(self, X) -> np.ndarray:
        """Explicit feature vectors [a1 x, a2 vec(x x^T)] (quadratic) or x (linear)."""
        X = _as_rows(X, self.p, "X")
        if self.variant == "linear":
            return X.copy()
        if self.variant == "quadratic":
            outer = np.einsum("ai,aj->aij", X, X).reshape(len(X), -1)
            return np.hstack([self.a1 * X, self.a2 * outer])
        raise KernelError("gaussian kernel has no finite feature map")

    def tangent_feature_map(self, X, U) -> np.ndarray:
        """Feature vectors of T_x u: derivative of the feature map along u."""
        X = _as_rows(X, self.p, "X")
        U = _as_rows(U, self.p, "U")
        if self.variant == "linear":
            return U.copy()
        if self.variant == "quadratic":
            sym = np.einsum("ai,aj->aij", U, X) + np.einsum("ai,aj->aij", X, U)
            return np.hstack([self.a1 * U, self.a2 * sym.reshape(len(X), -1)])
        raise KernelError("gaussian kernel has no finite feature map")


@dataclass
class DerivativeReport:
    max_grad_dev: float
    max_hess_dev: float
    tol: float
    n_pairs: int

    @property
    def max_dev(self) -> float:
        return max(self.max_grad_dev, self.max_hess_dev)

    @property
    def passed(self) -> bool:
        return self.max_dev < self.tol


def fd_grad2(kernel: Kernel, x, y, h: float) -> np.ndarray:
    """Central-difference gradient in the second slot (test oracle)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    out = np.empty(kernel.p)
    for j in range(kernel.p):
        e = np.zeros(kernel.p)
        e[j] = h
        out[j] = (kernel.eval(x, y + e) - kernel.eval(x, y - e)) / (2 * h)
    return out


def fd_hess12(kernel: Kernel, x, y, h: float) -> np.ndarray:
    """Central differences of the analytic ``grad2`` in the first slot."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    out = np.empty((kernel.p, kernel.p))
    for i in range(kernel.p):
        e = np.zeros(kernel.p)
        e[i] = h
        out[i] = (kernel.grad2(x + e, y) - kernel.grad2(x - e, y)) / (2 * h)
    return out


def check_derivatives(kernel: Kernel, samples: Iterable, h: float = 1e-5, tol: float = 1e-6) -> DerivativeReport:
    """Max absolute deviation of analytic grad2/hess12 from central differences."""
    if h <= 0:
        raise KernelError("step h must be > 0")
    gmax = hmax = 0.0
    n = 0
    for x, y in samples:
        n += 1
        gmax = max(gmax, float(np.abs(kernel.grad2(x, y) - fd_grad2(kernel, x, y, h)).max()))
        hmax = max(hmax, float(np.abs(kernel.hess12(x, y) - fd_hess12(kernel, x, y, h)).max()))
    return DerivativeReport(gmax, hmax, tol, n)


def random_pairs(p: int, count: int, rng: np.random.Generator, scale: float = 1.0):
    """Random (x, y) pairs with standard-normal entries times ``scale``."""
    return [(scale * rng.standard_normal(p), scale * rng.standard_normal(p)) for _ in range(count)]
