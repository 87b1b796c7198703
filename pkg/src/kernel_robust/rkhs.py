"""Finite-dimensional slices of an RKHS.

Functions are stored as coefficient vectors over a :class:`Dictionary` of
atoms. An atom is either a kernel section ``K_x`` or a tangent atom ``T_x u``
(the derivative of ``K_x`` along the unit direction ``u``). All inner products
are exact kernel pairings, so nothing here depends on an explicit feature map.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .kernels import Kernel, KernelError

# eigenvalues below RANK_TOL * lambda_max are treated as zero
RANK_TOL = 1e-10


@dataclass(frozen=True)
class Atom:
    x: np.ndarray
    u: np.ndarray | None = None

    @property
    def is_tangent(self) -> bool:
        return self.u is not None


class Dictionary:
    """An ordered list of atoms sharing one kernel.

    ``centers[a]`` is the base point of atom ``a``; ``directions[a]`` is its
    tangent direction (all zeros for point atoms) and ``tangent[a]`` flags
    which atoms are tangent atoms.
    """

    def __init__(self, kernel: Kernel, centers, directions=None, tangent=None):
        centers = np.asarray(centers, dtype=np.float64).reshape(-1, kernel.p)
        n = len(centers)
        if directions is None:
            directions = np.zeros_like(centers)
            tangent = np.zeros(n, dtype=bool)
        directions = np.asarray(directions, dtype=np.float64).reshape(n, kernel.p)
        tangent = np.asarray(tangent, dtype=bool).reshape(n)
        norms = np.linalg.norm(directions[tangent], axis=1)
        if norms.size and np.max(np.abs(norms - 1.0)) > 1e-12:
            raise KernelError("tangent directions must have unit norm")
        self.kernel = kernel
        self.centers = centers
        self.directions = directions
        self.tangent = tangent
        for arr in (self.centers, self.directions, self.tangent):
            arr.setflags(write=False)

    # -- construction ------------------------------------------------------
    @classmethod
    def points(cls, kernel: Kernel, X) -> "Dictionary":
        return cls(kernel, X)

    @classmethod
    def tangents(cls, kernel: Kernel, X, U) -> "Dictionary":
        X = np.asarray(X, float).reshape(-1, kernel.p)
        U = np.asarray(U, float).reshape(-1, kernel.p)
        return cls(kernel, X, U, np.ones(len(X), dtype=bool))

    @classmethod
    def canonical_tangents(cls, kernel: Kernel, X) -> "Dictionary":
        """Atoms T_x e_j for every row x of X and every coordinate j (x-major)."""
        X = np.asarray(X, float).reshape(-1, kernel.p)
        eye = np.eye(kernel.p)
        return cls.tangents(kernel, np.repeat(X, kernel.p, axis=0), np.tile(eye, (len(X), 1)))

    @classmethod
    def span_points_tangents(cls, kernel: Kernel, X) -> "Dictionary":
        """Dictionary of span(K_X, T_X): n point atoms then n*p tangent atoms."""
        return concat([cls.points(kernel, X), cls.canonical_tangents(kernel, X)])

    @classmethod
    def from_atoms(cls, kernel: Kernel, atoms: Sequence[Atom]) -> "Dictionary":
        if not atoms:
            return cls(kernel, np.zeros((0, kernel.p)))
        X = np.array([a.x for a in atoms], float)
        U = np.array([a.u if a.is_tangent else np.zeros(kernel.p) for a in atoms], float)
        T = np.array([a.is_tangent for a in atoms])
        return cls(kernel, X, U, T)

    # -- introspection -----------------------------------------------------
    def __len__(self) -> int:
        return len(self.centers)

    @property
    def atoms(self) -> list[Atom]:
        return [Atom(self.centers[a].copy(), self.directions[a].copy() if self.tangent[a] else None)
                for a in range(len(self))]

    def keys(self) -> list[bytes]:
        # exact bit pattern of each atom, used for deduplication
        return [bytes([int(t)]) + c.tobytes() + d.tobytes()
                for t, c, d in zip(self.tangent, self.centers, self.directions)]

    def subset(self, index) -> "Dictionary":
        index = np.asarray(index)
        return Dictionary(self.kernel, self.centers[index], self.directions[index], self.tangent[index])


def concat(dicts: Iterable[Dictionary], dedupe: bool = True) -> Dictionary:
    """Concatenate dictionaries; duplicates (bit-identical atoms) are dropped."""
    dicts = list(dicts)
    kernel = dicts[0].kernel
    for d in dicts[1:]:
        if d.kernel != kernel:
            raise KernelError("cannot merge dictionaries built on different kernels")
    C = np.vstack([d.centers for d in dicts])
    U = np.vstack([d.directions for d in dicts])
    T = np.concatenate([d.tangent for d in dicts])
    merged = Dictionary(kernel, C, U, T)
    if not dedupe:
        return merged
    seen: dict[bytes, int] = {}
    keep = []
    for i, k in enumerate(merged.keys()):
        if k not in seen:
            seen[k] = i
            keep.append(i)
    if len(keep) == len(merged):
        return merged
    return merged.subset(keep)


def cross_gram(A: Dictionary, B: Dictionary) -> np.ndarray:
    """Matrix of inner products <A[a], B[b]>_H."""
    if A.kernel != B.kernel:
        raise KernelError("dictionaries use different kernels")
    k = A.kernel
    G = np.zeros((len(A), len(B)))
    pa, ta = np.flatnonzero(~A.tangent), np.flatnonzero(A.tangent)
    pb, tb = np.flatnonzero(~B.tangent), np.flatnonzero(B.tangent)
    if pa.size and pb.size:
        G[np.ix_(pa, pb)] = k.matrix(A.centers[pa], B.centers[pb])
    if pa.size and tb.size:
        G[np.ix_(pa, tb)] = k.pair_point_tangent(A.centers[pa], B.centers[tb], B.directions[tb])
    if ta.size and pb.size:
        G[np.ix_(ta, pb)] = k.pair_point_tangent(B.centers[pb], A.centers[ta], A.directions[ta]).T
    if ta.size and tb.size:
        G[np.ix_(ta, tb)] = k.pair_tangent_tangent(A.centers[ta], A.directions[ta],
                                                   B.centers[tb], B.directions[tb])
    return G


def gram(D: Dictionary) -> np.ndarray:
    """Exactly symmetric Gram matrix of a dictionary."""
    G = cross_gram(D, D)
    upper = np.triu(G)
    return upper + np.triu(G, 1).T


def psd_floor(G: np.ndarray) -> float:
    """Smallest eigenvalue of G divided by its trace (PSD diagnostics)."""
    if G.size == 0:
        return 0.0
    tr = float(np.trace(G))
    return float(np.linalg.eigvalsh(G)[0]) / tr if tr > 0 else 0.0


class RkhsFunction:
    """f = sum_a coeffs[a] * atom_a."""

    def __init__(self, dictionary: Dictionary, coeffs):
        coeffs = np.asarray(coeffs, dtype=np.float64).reshape(-1)
        if coeffs.shape[0] != len(dictionary):
            raise KernelError(f"{len(dictionary)} atoms but {coeffs.shape[0]} coefficients")
        self.dictionary = dictionary
        self.coeffs = coeffs

    @property
    def kernel(self) -> Kernel:
        return self.dictionary.kernel

    @classmethod
    def zero(cls, kernel: Kernel) -> "RkhsFunction":
        return cls(Dictionary(kernel, np.zeros((0, kernel.p))), np.zeros(0))

    def __add__(self, other: "RkhsFunction") -> "RkhsFunction":
        D = concat([self.dictionary, other.dictionary], dedupe=False)
        return RkhsFunction(D, np.concatenate([self.coeffs, other.coeffs]))

    def __sub__(self, other: "RkhsFunction") -> "RkhsFunction":
        return self + other * -1.0

    def __mul__(self, scale: float) -> "RkhsFunction":
        return RkhsFunction(self.dictionary, self.coeffs * float(scale))

    __rmul__ = __mul__

    def compact(self) -> "RkhsFunction":
        """Merge coefficients of bit-identical atoms."""
        keys = self.dictionary.keys()
        index: dict[bytes, int] = {}
        keep, slot = [], []
        for i, k in enumerate(keys):
            if k not in index:
                index[k] = len(keep)
                keep.append(i)
            slot.append(index[k])
        c = np.zeros(len(keep))
        np.add.at(c, np.array(slot, dtype=int), self.coeffs)
        return RkhsFunction(self.dictionary.subset(keep), c)

    # -- evaluation --------------------------------------------------------
    def __call__(self, X) -> np.ndarray:
        return evaluate(self, X)

    def grad(self, X) -> np.ndarray:
        return gradient(self, X)


def _rows(kernel: Kernel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != kernel.p:
        raise KernelError(f"points must have dimension {kernel.p}, got {X.shape[1]}")
    return X


def evaluate(f: RkhsFunction, X, chunk: int = 4096) -> np.ndarray:
    """f(x) for every row of X (a single vector gives a length-1 array)."""
    X = _rows(f.kernel, X)
    D = f.dictionary
    out = np.empty(len(X))
    for s in range(0, len(X), chunk):
        probe = Dictionary.points(f.kernel, X[s:s + chunk])
        out[s:s + chunk] = cross_gram(probe, D) @ f.coeffs
    return out


def gradient(f: RkhsFunction, X, chunk: int = 1024) -> np.ndarray:
    """Exact gradient of f at every row of X, shape (m, p)."""
    X = _rows(f.kernel, X)
    k = f.kernel
    D = f.dictionary
    p = k.p
    out = np.zeros((len(X), p))
    pts = np.flatnonzero(~D.tangent)
    tns = np.flatnonzero(D.tangent)
    Z, c = D.centers[pts], f.coeffs[pts]
    for s in range(0, len(X), chunk):
        Xs = X[s:s + chunk]
        if pts.size:
            # sum_a c_a grad2(z_a, x)
            if k.variant == "gaussian":
                W = k.matrix(Xs, Z) * c[None, :]
                out[s:s + chunk] += 2.0 * k.gamma * (W @ Z - W.sum(axis=1)[:, None] * Xs)
            elif k.variant == "quadratic":
                W = (k.q1 + 2.0 * k.q2 * (Xs @ Z.T)) * c[None, :]
                out[s:s + chunk] += W @ Z
            else:
                out[s:s + chunk] += (c @ Z)[None, :]
        if tns.size:
            # d/dx_j <T_z u, K_x> = <T_z u, T_x e_j>
            probe = Dictionary.canonical_tangents(k, Xs)
            G = cross_gram(probe, D.subset(tns))
            out[s:s + chunk] += (G @ f.coeffs[tns]).reshape(len(Xs), p)
    return out


def inner(f: RkhsFunction, g: RkhsFunction) -> float:
    if f.kernel != g.kernel:
        raise KernelError("functions live in different RKHSs")
    if len(f.coeffs) == 0 or len(g.coeffs) == 0:
        return 0.0
    return float(f.coeffs @ cross_gram(f.dictionary, g.dictionary) @ g.coeffs)


def norm(f: RkhsFunction) -> float:
    return float(np.sqrt(max(inner(f, f), 0.0)))


def distance(f: RkhsFunction, g: RkhsFunction) -> float:
    """||f - g||_H, assembled on the merged dictionary."""
    return norm(f - g)


def pinv_psd(G: np.ndarray, tol: float = RANK_TOL) -> np.ndarray:
    """Pseudoinverse of a symmetric PSD matrix with a relative eigenvalue cutoff."""
    if G.size == 0:
        return G.copy()
    w, V = np.linalg.eigh(G)
    top = w[-1]
    if top <= 0:
        return np.zeros_like(G)
    keep = w > tol * top
    return (V[:, keep] / w[keep]) @ V[:, keep].T


def project(f: RkhsFunction, sub: Dictionary, tol: float = RANK_TOL) -> RkhsFunction:
    """H-orthogonal projection of f onto span(sub)."""
    if len(sub) == 0:
        return RkhsFunction(sub, np.zeros(0))
    rhs = cross_gram(sub, f.dictionary) @ f.coeffs
    return RkhsFunction(sub, pinv_psd(gram(sub), tol) @ rhs)


class SpanBasis:
    """Orthonormal coordinates for span(D).

    With ``gram(D) = V diag(w) V^T`` (eigenvalues below the rank cutoff
    discarded), the functions ``Q[:, j]`` with ``Q = V w^{-1/2}`` are
    orthonormal. ``coords[:, a]`` holds the coordinates of atom ``a``.
    """

    def __init__(self, D: Dictionary, tol: float = RANK_TOL):
        G = gram(D)
        w, V = np.linalg.eigh(G)
        keep = w > tol * w[-1] if len(w) and w[-1] > 0 else np.zeros(len(w), bool)
        w, V = w[keep], V[:, keep]
        self.dictionary = D
        self.gram = G
        self.rank = int(keep.sum())
        self.Q = V / np.sqrt(w)
        self.coords = (V * np.sqrt(w)).T

    def to_coords(self, f: RkhsFunction) -> np.ndarray:
        """Coordinates of the projection of f onto the span."""
        return self.Q.T @ (cross_gram(self.dictionary, f.dictionary) @ f.coeffs)

    def to_function(self, z) -> RkhsFunction:
        return RkhsFunction(self.dictionary, self.Q @ np.asarray(z, float))


def orthonormal_columns(A: np.ndarray, tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis of the column space of A (singular values cut relative to the largest)."""
    if A.size == 0:
        return np.zeros((A.shape[0], 0))
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    if s[0] <= 0:
        return np.zeros((A.shape[0], 0))
    # squared singular values are Gram eigenvalues; cut on the same scale
    return U[:, s ** 2 > tol * s[0] ** 2]


class RidgeSolver:
    """Weighted kernel ridge in dual form for rows with Gram matrix ``Grows``.

    Minimizes ``sum_i w_i (t_i - <f, r_i>)^2 + lam ||f||^2``; the minimizer is
    ``f = sum_i beta_i r_i`` with ``(Grows + lam W^{-1}) beta = t``. One
    symmetric eigendecomposition serves every ``lam``; at ``lam = 0`` the
    minimum-norm solution is returned.
    """

    def __init__(self, Grows: np.ndarray, weights, tol: float = RANK_TOL):
        Grows = np.asarray(Grows, float)
        w = np.asarray(weights, float).reshape(-1)
        if np.any(w <= 0):
            raise KernelError("weights must be positive")
        self.sw = np.sqrt(w)
        S = self.sw[:, None] * Grows * self.sw[None, :]
        S = np.triu(S) + np.triu(S, 1).T
        evals, self.V = np.linalg.eigh(S)
        self.evals = np.clip(evals, 0.0, None)
        top = self.evals[-1] if len(self.evals) else 0.0
        self.keep = self.evals > tol * top if top > 0 else np.zeros(len(evals), bool)

    @classmethod
    def from_features(cls, Phi: np.ndarray, weights, tol: float = RANK_TOL) -> "RidgeSolver":
        """Same solver when the row Gram is Phi Phi^T with few columns.

        Only the range of the Gram is kept; dual components in its null space
        represent the zero function, so the fitted function is unchanged.
        """
        self = cls.__new__(cls)
        w = np.asarray(weights, float).reshape(-1)
        if np.any(w <= 0):
            raise KernelError("weights must be positive")
        self.sw = np.sqrt(w)
        U, s, _ = np.linalg.svd(self.sw[:, None] * np.asarray(Phi, float), full_matrices=False)
        self.V = U
        self.evals = s ** 2
        top = self.evals.max() if len(s) else 0.0
        self.keep = self.evals > tol * top if top > 0 else np.zeros(len(s), bool)
        self.V = self.V[:, self.keep]
        self.evals = self.evals[self.keep]
        self.keep = np.ones(len(self.evals), bool)
        return self

    def dual(self, targets, lam: float) -> np.ndarray:
        if lam < 0:
            raise KernelError("regularization must be >= 0")
        t = self.V.T @ (self.sw * np.asarray(targets, float))
        if lam == 0:
            scale = np.zeros_like(self.evals)
            scale[self.keep] = 1.0 / self.evals[self.keep]
        else:
            scale = 1.0 / (self.evals + lam)
        return self.sw * (self.V @ (scale * t))


def _row_functionals(D: Dictionary, design) -> tuple[np.ndarray, np.ndarray]:
    """Coefficient matrix R (rows over D) and row Gram R G R^T."""
    if isinstance(design, np.ndarray):
        R = np.atleast_2d(np.asarray(design, float))
        if R.shape[1] != len(D):
            raise KernelError("design matrix must have one column per dictionary atom")
    else:
        rows = list(design)
        R = np.zeros((len(rows), len(D)))
        index = {k: i for i, k in enumerate(D.keys())}
        for i, r in enumerate(rows):
            if isinstance(r, Atom):
                r = RkhsFunction(Dictionary.from_atoms(D.kernel, [r]), [1.0])
            for key, c in zip(r.dictionary.keys(), r.coeffs):
                if key not in index:
                    raise KernelError("design row uses an atom outside the dictionary")
                R[i, index[key]] += c
    G = gram(D)
    Grows = R @ G @ R.T
    return R, np.triu(Grows) + np.triu(Grows, 1).T


def solve_regularized(D: Dictionary, design, targets, weights, lam: float) -> RkhsFunction:
    """argmin over span(D) of sum_i w_i (t_i - <f, row_i>)^2 + lam ||f||_H^2.

    ``design`` is either a matrix of row coefficients over ``D`` or a list of
    atoms / RkhsFunctions built from atoms of ``D``.
    """
    if lam < 0:
        raise KernelError("regularization must be >= 0")
    R, Grows = _row_functionals(D, design)
    beta = RidgeSolver(Grows, weights).dual(targets, lam)
    return RkhsFunction(D, R.T @ beta)


def objective(f: RkhsFunction, rows: Sequence[RkhsFunction], targets, weights, lam: float) -> float:
    """Value of the weighted ridge objective (used by convexity and optimality checks)."""
    vals = np.array([inner(f, r) for r in rows])
    t = np.asarray(targets, float)
    return float(np.sum(np.asarray(weights) * (t - vals) ** 2) + lam * inner(f, f))
