"""Seeded experiment runners producing per-cell records and shape verdicts."""
from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ScenarioConfig, default_config, regime_lambdas
from .data_io import SyntheticSpec, gen_synthetic, load_mnist_pair, perturbation_sets
from .estimators import (AugmentationModel, Dataset, DivergenceError, augmented_path,
                         fit_adversarial_gd, fit_standard, limit_adversarial, limit_augmented,
                         standard_path)
from .kernels import Kernel
from .metrics import (empirical_lip, empirical_mse, moment_constants, quadratic_generalization,
                      quadratic_lip_unit_ball, segment_grid)
from .rkhs import Dictionary, cross_gram, evaluate, gradient, norm

THREADS_ENV = "KERNEL_ROBUST_THREADS"
SHAPE_MARGIN = 0.01


class ScenarioError(ValueError):
    pass


@dataclass
class Verdict:
    name: str
    passed: bool
    margin: float
    detail: str = ""


@dataclass
class ScenarioReport:
    scenario: str
    config: ScenarioConfig
    records: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    verdicts: list = field(default_factory=list)
    excluded: int = 0
    table: str | None = None

    @property
    def config_hash(self) -> str:
        return self.config.digest()

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def verdict(self, name: str) -> Verdict:
        for v in self.verdicts:
            if v.name == name:
                return v
        raise KeyError(name)


# -- plumbing -------------------------------------------------------------------

def worker_count() -> int:
    cap = os.environ.get(THREADS_ENV)
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ScenarioError(f"{THREADS_ENV} must be a positive integer, got {cap!r}") from None
    return n


def cell_seed(master: int, cell: int) -> int:
    """64-bit seed for one (repetition, ...) cell, independent of scheduling."""
    return int(np.random.SeedSequence([int(master), int(cell)]).generate_state(1, np.uint64)[0])


def _map_cells(fn, count: int) -> list:
    workers = min(worker_count(), count)
    if workers <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, range(count)))


def _record(cfg, estimator, lam, rep, mse, lip, hnorm, seed):
    return {"scenario": cfg.scenario, "estimator": estimator, "lambda": float(lam),
            "repetition": rep, "mse": float(mse), "lip": float(lip), "hnorm": float(hnorm),
            "seed": seed, "config_hash": cfg.digest()}


def _kernel(cfg: ScenarioConfig) -> Kernel:
    return Kernel.from_config(cfg.kernel, cfg.p)


def has_interior_minimum(values, margin: float = SHAPE_MARGIN) -> tuple[bool, float]:
    """True when the minimum sits strictly inside and undercuts both endpoints
    by a relative ``margin``. The second value is the relative undercut."""
    v = np.asarray(values, float)
    i = int(np.argmin(v))
    ends = min(v[0], v[-1])
    gap = (ends - v[i]) / max(abs(ends), 1e-300)
    return (0 < i < len(v) - 1 and gap > margin), float(gap)


def no_dip_below_start(values, margin: float = SHAPE_MARGIN) -> tuple[bool, float]:
    """True when no grid value falls below the first one by more than ``margin``."""
    v = np.asarray(values, float)
    gap = (v[0] - v.min()) / max(abs(v[0]), 1e-300)
    return gap <= margin, float(gap)


# -- two points -------------------------------------------------------------------

def _tangent_residual(f, X) -> float:
    """max |<f, T_x e_j>| over the given points and coordinate directions."""
    T = Dictionary.canonical_tangents(f.kernel, X)
    return float(np.abs(cross_gram(T, f.dictionary) @ f.coeffs).max())


def run_two_point(cfg: ScenarioConfig | None = None) -> ScenarioReport:
    """Two training points at distance r with y = (-1, 1) and a linear target.

    Fits the ridgeless interpolant and the small-perturbation limit at the
    regime proxies, then measures gradient norms and squared error against
    the linear target on a dense grid of the segment.
    """
    cfg = cfg or default_config("two_point")
    ker = _kernel(cfg)
    r = float(cfg.r)
    if r <= 0:
        raise ScenarioError("r must be > 0")
    if ker.variant == "gaussian" and r * np.sqrt(ker.gamma) > 1.0:
        warnings.warn("r is large relative to the kernel bandwidth; the small-distance regime may not apply",
                      RuntimeWarning)
    eps = cfg.eps
    X = np.zeros((2, cfg.p))
    X[0, 0], X[1, 0] = -r / 2, r / 2
    y = np.array([-1.0, 1.0])
    data = Dataset(X, y)
    grid = segment_grid(X[0], X[1])
    target = np.linspace(y[0], y[1], len(grid))
    lams = cfg.lambda_grid or regime_lambdas(eps)

    def fit(lam):
        if eps == 0:
            return fit_standard(data, ker, lam).f
        if cfg.estimator == "augmented":
            return limit_augmented(data, ker, lam, eps, np.eye(cfg.p)).f
        return limit_adversarial(data, ker, lam, eps).f

    def measure(f):
        lip = float(np.linalg.norm(gradient(f, grid), axis=1).max())
        mse = float(np.mean((evaluate(f, grid) - target) ** 2))
        return mse, lip, norm(f)

    f0 = fit_standard(data, ker, 0.0).f
    g0 = fit(0.0)
    rep = _record
    report = ScenarioReport("two_point", cfg)
    report.records.append(rep(cfg, "standard", 0.0, 0, *measure(f0), cfg.seed))
    report.records.append(rep(cfg, "limit", 0.0, 0, *measure(g0), cfg.seed))
    vals = {}
    for lam in lams:
        m = measure(fit(lam))
        vals[lam] = m
        report.records.append(rep(cfg, "limit", lam, 0, *m, cfg.seed))

    resid = _tangent_residual(g0, X)
    g0_norm = norm(g0)
    report.aggregates.update({
        "lip_standard": measure(f0)[1], "lip_g0": measure(g0)[1],
        "norm_ratio_g0": g0_norm / max(norm(f0), 1e-300),
        "g0_tangent_residual": resid / max(g0_norm, 1e-300),
    })
    if len(lams) == 3:
        l1, l2, l3 = lams
        for k, idx in (("lip", 1), ("mse", 0)):
            a, b, c = vals[l1][idx], vals[l3][idx], vals[l2][idx]
            margin = min(a - b, b - c) / max(abs(a), 1e-300)
            report.verdicts.append(Verdict(
                f"{k}_order", a > b > c, margin,
                f"{k}(lam1)={a:.6g} > {k}(lam3)={b:.6g} > {k}(lam2)={c:.6g}"))
        report.aggregates["lip_lam3_vs_standard"] = vals[l3][1] / report.aggregates["lip_standard"]
    if eps > 0:
        report.verdicts.append(Verdict("g0_tangent_orthogonal", resid <= 1e-6 * g0_norm,
                                       1e-6 - resid / max(g0_norm, 1e-300),
                                       f"max |<g0, T e_j>| / |g0| = {resid / max(g0_norm, 1e-300):.3e}"))
    return report


# -- quadratic kernel with x_i = e_i ------------------------------------------------

@dataclass(frozen=True)
class QuadraticFit:
    """f(x) = b.x + x^T B x; feature coordinates are [b / a1, B / a2]."""
    b: np.ndarray
    B: np.ndarray
    a1: float
    a2: float

    @property
    def features(self) -> np.ndarray:
        return np.concatenate([self.b / self.a1, (self.B / self.a2).ravel()])

    @property
    def hnorm(self) -> float:
        return float(np.linalg.norm(self.features))

    def __call__(self, X):
        X = np.atleast_2d(X)
        return X @ self.b + np.einsum("ai,ij,aj->a", X, self.B, X)


@dataclass(frozen=True)
class QuadraticClosedForm:
    f_hat_0: QuadraticFit
    g_0: QuadraticFit
    g_lam: QuadraticFit
    f_hat_lam: QuadraticFit


def _embed(b, B, p):
    n = len(b)
    bb = np.zeros(p)
    BB = np.zeros((p, p))
    bb[:n] = b
    BB[:n, :n] = B
    return bb, BB


def _quadratic_limit(y, a1, a2, lam, mu):
    """Limit fit on the n x n block for damping mu = lam / eps^2.

    The correction only moves the first-order part b and the symmetric part B
    on the span of the training coordinates. Stationarity gives
    B_jk = -(b_j + b_k) rho for j != k with rho = 1 / (4 + n mu / a2^2),
    B_jj = z_j - b_j (interpolation of the ridge values z), and a linear
    equation for b whose only coupling is through sum(b).
    """
    n = len(y)
    s = a1 * a1 + a2 * a2
    kap = 1.0 / (s + n * lam)
    z = kap * s * y
    if np.isinf(mu):
        return kap * a1 * a1 * y, np.diag(kap * a2 * a2 * y)
    rho = 1.0 / (4.0 + n * mu / (a2 * a2))
    diag_coef = (n - 2) * (1 - 2 * rho) + 2 + n * mu / (a1 * a1) + n * mu / (a2 * a2)
    b_ridge = kap * a1 * a1 * y
    # z - diag of the ridge B equals b_ridge
    rhs = 2.0 * z + (n * mu / (a1 * a1)) * b_ridge + (n * mu / (a2 * a2)) * b_ridge
    total = rhs.sum() / (diag_coef - 2 * n * rho)
    b = (rhs + 2 * rho * total) / diag_coef
    B = -rho * (b[:, None] + b[None, :])
    np.fill_diagonal(B, z - b)
    return b, B


def closed_form_quadratic(y, a1: float, a2: float, lam: float, eps: float,
                          p: int | None = None) -> QuadraticClosedForm:
    """Interpolant, limit at lam = 0, and limit at ``lam`` for x_i = e_i with
    identity second moment, in closed form."""
    y = np.asarray(y, float)
    n = len(y)
    p = n if p is None else int(p)
    if n > p:
        raise ScenarioError("closed form needs n <= p")
    if lam < 0 or eps < 0:
        raise ScenarioError("lam and eps must be >= 0")
    s = a1 * a1 + a2 * a2

    def wrap(b, B):
        return QuadraticFit(*_embed(b, B, p), a1, a2)

    f0 = wrap(a1 * a1 * y / s, np.diag(a2 * a2 * y / s))
    g0 = wrap(*_quadratic_limit(y, a1, a2, 0.0, 0.0))
    kap = 1.0 / (s + n * lam)
    fl = wrap(kap * a1 * a1 * y, np.diag(kap * a2 * a2 * y))
    if eps == 0:
        gl = g0 if lam == 0 else fl
    else:
        gl = wrap(*_quadratic_limit(y, a1, a2, lam, lam / eps ** 2))
    return QuadraticClosedForm(f0, g0, gl, fl)


def generic_quadratic_features(y, a1, a2, lam, eps, p) -> np.ndarray:
    """Feature coordinates of the generic limit fit on the same problem."""
    n = len(y)
    ker = Kernel.quadratic(p, a1, a2)
    f = limit_augmented(Dataset(np.eye(p)[:n], y), ker, lam, eps, np.eye(p)).f
    D = f.dictionary
    Phi = np.where(D.tangent[:, None], ker.tangent_feature_map(D.centers, D.directions),
                   ker.feature_map(D.centers))
    v = Phi.T @ f.coeffs
    M = v[p:].reshape(p, p)
    return np.concatenate([v[:p], ((M + M.T) / 2).ravel()])


def check_quadratic_oracle(count: int = 20, seed: int = 0, max_p: int = 8) -> float:
    """Largest H-norm gap between the closed form and the generic limit over
    random small configurations."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in range(count):
        p = int(rng.integers(1, max_p + 1))
        n = int(rng.integers(1, p + 1))
        a1, a2 = rng.uniform(0.3, 3.0, 2)
        y = rng.standard_normal(n)
        eps = 10 ** rng.uniform(-3, -1)
        lam = 0.0 if t % 4 == 0 else eps * eps * 10 ** rng.uniform(-2, 2)
        closed = closed_form_quadratic(y, a1, a2, lam, eps, p).g_lam.features
        worst = max(worst, float(np.linalg.norm(closed - generic_quadratic_features(y, a1, a2, lam, eps, p))))
    return worst


def interpolant_bias(y, a1: float, a2: float, law: str, p: int) -> float:
    """Second moment of (interpolant - linear target) from its coordinates
    (a2^2/s)[-y, diag(y)], expanded with the fourth-moment identity."""
    y = np.asarray(y, float)
    mc = moment_constants(law, p)
    c = a2 * a2 / (a1 * a1 + a2 * a2)
    return float(c * c * (mc.C1 * y @ y + mc.cross * (y.sum() ** 2 + 2 * y @ y)))


def run_quadratic_identity(cfg: ScenarioConfig | None = None) -> ScenarioReport:
    """x_i = e_i, y_i i.i.d., linear target sum y_i x_i; exact unit-ball Lip
    and population MSE of the closed-form limits at the regime proxies."""
    cfg = cfg or default_config("quadratic")
    ker = cfg.kernel
    if ker.get("type") != "quadratic":
        raise ScenarioError("the quadratic identity scenario needs a quadratic kernel")
    a1, a2 = float(ker.get("a1", 1.0)), float(ker.get("a2", 1.0))
    n, p, eps = cfg.n_train, cfg.p, cfg.eps
    if n > p:
        raise ScenarioError("need n_train <= p")
    if cfg.y_law not in ("normal", "uniform", "rademacher"):
        raise ScenarioError(f"unsupported y law {cfg.y_law!r}")
    shift = cfg.y_shift or 0.0
    margin = cfg.lip_margin or 1.9
    law = cfg.mse_law or "uniform_ball"
    mc = moment_constants(law, p)
    lams = cfg.lambda_grid or regime_lambdas(eps)

    def cell(rep):
        seed = cell_seed(cfg.seed, rep)
        rng = np.random.default_rng(seed)
        if cfg.y_law == "normal":
            y = rng.standard_normal(n)
        elif cfg.y_law == "uniform":
            y = rng.uniform(-np.sqrt(3), np.sqrt(3), n)
        else:
            y = rng.choice([-1.0, 1.0], n)
        y = y + shift
        fstar_b = np.zeros(p)
        fstar_b[:n] = y
        out = []

        def rec(name, lam, fit):
            lip, _ = quadratic_lip_unit_ball(fit.b, fit.B)
            mse = quadratic_generalization(fit.b - fstar_b, fit.B, mc)
            out.append(_record(cfg, name, lam, rep, mse, lip, fit.hnorm, seed))

        base = closed_form_quadratic(y, a1, a2, 0.0, eps, p)
        rec("standard", 0.0, base.f_hat_0)
        rec("limit", 0.0, base.g_0)
        for lam in lams:
            rec("limit", lam, closed_form_quadratic(y, a1, a2, lam, eps, p).g_lam)
        return out

    report = ScenarioReport("quadratic", cfg)
    for rows in _map_cells(cell, cfg.reps):
        report.records.extend(rows)
    if len(lams) == 3:
        l1, l2, l3 = lams
        by = {}
        for r_ in report.records:
            by.setdefault((r_["estimator"], r_["lambda"]), []).append(r_)
        lip1 = np.array([r_["lip"] for r_ in by[("limit", l1)]])
        lip2 = np.array([r_["lip"] for r_ in by[("limit", l2)]])
        lip3 = np.array([r_["lip"] for r_ in by[("limit", l3)]])
        lip0 = np.array([r_["lip"] for r_ in by[("standard", 0.0)]])
        mse1 = np.array([r_["mse"] for r_ in by[("limit", l1)]])
        mse2 = np.array([r_["mse"] for r_ in by[("limit", l2)]])
        mse3 = np.array([r_["mse"] for r_ in by[("limit", l3)]])
        frac = float(np.mean(lip1 > margin * lip2))
        report.aggregates.update({
            "lip_ratio_median": float(np.median(lip1 / lip2)),
            "lip_ratio_fraction": frac,
            "lip_lam2_vs_standard": float(np.median(lip2 / lip0)),
            "hnorm_ratio_median": float(np.median(
                np.array([r_["hnorm"] for r_ in by[("limit", l1)]])
                / np.array([r_["hnorm"] for r_ in by[("limit", l2)]]))),
        })
        report.verdicts.append(Verdict(
            "lip_ratio", frac >= 0.95, frac - 0.95,
            f"Lip(lam1) > {margin} Lip(lam2) on {frac:.0%} of repetitions (n={n})"))
        ok = (mse1 > mse2) & (mse2 > mse3)
        report.verdicts.append(Verdict(
            "mse_order", bool(ok.all()), float(np.min(np.minimum(mse1 - mse2, mse2 - mse3))),
            f"MSE(lam1) > MSE(lam2) > MSE(lam3) on {ok.mean():.0%} of repetitions"))
        ok3 = lip2 > lip3
        report.verdicts.append(Verdict(
            "lip_lam3_below_lam2", bool(ok3.all()), float(np.min(lip2 - lip3)),
            f"Lip(lam2) > Lip(lam3) on {ok3.mean():.0%} of repetitions"))
    return report


# -- synthetic sweeps ---------------------------------------------------------------

def _curves(report, estimator):
    lams = report.config.lambda_grid
    out = {}
    for key in ("mse", "lip"):
        out[key] = [float(np.mean([r["lip" if key == "lip" else "mse"] for r in report.records
                                   if r["estimator"] == estimator and r["lambda"] == lam]))
                    for lam in lams]
    return out


def _sweep_cell(cfg, ker, rep, data_fn, ridgeless=False):
    seed = cell_seed(cfg.seed, rep)
    rng = np.random.default_rng(seed)
    train, test = data_fn(rng)
    deltas = perturbation_sets(train.n, cfg.K, train.p, rng)
    aug = AugmentationModel.finite(cfg.eps, deltas)
    rows = []
    pts = test.X
    for est, fits in (("standard", standard_path(train, ker, cfg.lambda_grid)),
                      ("augmented", augmented_path(train, ker, cfg.lambda_grid, aug))):
        for fr in fits:
            rows.append(_record(cfg, est, fr.lam, rep, empirical_mse(fr.f, test),
                                empirical_lip(fr.f, pts), norm(fr.f), seed))
    if ridgeless:
        f = fit_standard(train, ker, 0.0).f
        rows.append(_record(cfg, "standard_ridgeless", 0.0, rep, empirical_mse(f, test),
                            empirical_lip(f, pts), norm(f), seed))
    return rows


def run_generic(cfg: ScenarioConfig | None = None) -> ScenarioReport:
    """Standard and augmented ridge over a lambda grid on synthetic sphere data."""
    cfg = cfg or default_config("generic", 1)
    if not cfg.lambda_grid:
        raise ScenarioError("generic sweeps need a lambda grid")
    ker = _kernel(cfg)

    def data_fn(rng):
        return gen_synthetic(SyntheticSpec(cfg.p, cfg.n_train, cfg.n_test, 0), rng)

    report = ScenarioReport("generic", cfg)
    for rows in _map_cells(lambda rep: _sweep_cell(cfg, ker, rep, data_fn), cfg.reps):
        report.records.extend(rows)
    aug, std = _curves(report, "augmented"), _curves(report, "standard")
    report.aggregates.update({"augmented": aug, "standard": std})
    for key in ("mse", "lip"):
        ok, gap = has_interior_minimum(aug[key])
        report.verdicts.append(Verdict(f"augmented_{key}_interior_min", ok, gap,
                                       f"argmin at lambda={cfg.lambda_grid[int(np.argmin(aug[key]))]:.3g}"))
    ok, gap = no_dip_below_start(std["mse"])
    report.verdicts.append(Verdict("standard_mse_no_dip", ok, SHAPE_MARGIN - gap,
                                   f"largest dip below the smallest-lambda value: {gap:.3%}"))
    return report


def _render_table(lams, rows) -> str:
    """Markdown table; per-row minima in bold, ties to the smaller lambda."""
    head = "| | " + " | ".join(f"{l:.0e}" for l in lams) + " |"
    lines = [head, "|---" * (len(lams) + 1) + "|"]
    for name, vals in rows:
        i = int(np.argmin(vals))
        cells = [f"**{v:.4f}**" if j == i else f"{v:.4f}" for j, v in enumerate(vals)]
        lines.append(f"| {name} | " + " | ".join(cells) + " |")
    return "\n".join(lines)


def run_mnist(cfg: ScenarioConfig | None = None) -> ScenarioReport:
    """Binary digit task: standard vs augmented ridge over a lambda grid."""
    cfg = cfg or default_config("mnist")
    missing = [k for k in ("train_images", "train_labels") if not getattr(cfg, k)]
    if missing:
        raise ScenarioError(f"missing MNIST file path(s): {', '.join(missing)}")
    ker = _kernel(cfg)

    def data_fn(rng):
        return load_mnist_pair(cfg.train_images, cfg.train_labels, cfg.digits, cfg.n_train,
                               cfg.n_test, int(rng.integers(2 ** 63)), cfg.test_images,
                               cfg.test_labels, cfg.pixel_scale or 255.0,
                               True if cfg.balanced_test is None else cfg.balanced_test)

    report = ScenarioReport("mnist", cfg)
    for rows in _map_cells(lambda rep: _sweep_cell(cfg, ker, rep, data_fn, ridgeless=True), cfg.reps):
        report.records.extend(rows)
    aug, std = _curves(report, "augmented"), _curves(report, "standard")
    ridgeless = [r for r in report.records if r["estimator"] == "standard_ridgeless"]
    std0_mse = float(np.mean([r["mse"] for r in ridgeless]))
    std0_lip = float(np.mean([r["lip"] for r in ridgeless]))
    best = int(np.argmin(aug["mse"]))
    report.aggregates.update({"augmented": aug, "standard": std, "standard_ridgeless_mse": std0_mse,
                              "standard_ridgeless_lip": std0_lip, "best_lambda": cfg.lambda_grid[best],
                              "best_augmented_mse": aug["mse"][best],
                              "augmented_lip_at_best": aug["lip"][best]})
    report.table = _render_table(cfg.lambda_grid, [("MSE augment", aug["mse"]), ("MSE standard", std["mse"]),
                                                   ("Lip augment", aug["lip"]), ("Lip standard", std["lip"])])
    r1 = aug["mse"][best] / std0_mse
    r2 = aug["lip"][best] / std0_lip
    report.verdicts.append(Verdict("augmented_mse_gain", r1 < 0.8, 0.8 - r1, f"best aug MSE / standard MSE = {r1:.3f}"))
    report.verdicts.append(Verdict("augmented_lip_gain", r2 < 0.7, 0.7 - r2, f"aug Lip at best / standard Lip = {r2:.3f}"))
    return report


# -- adversarial training trajectories -------------------------------------------------

def _adv_label(k: int) -> str:
    return f"adversarial_gd@{k}"


def run_adv_iterations(cfg: ScenarioConfig | None = None, snapshots: str = "metrics") -> ScenarioReport:
    """Ridgeless adversarial gradient descent over finite candidate sets,
    with test MSE and Lip recorded at the checkpoints.

    With ``snapshots="full"`` the coefficient vectors at each checkpoint are
    kept in ``aggregates["snapshots"]`` as ``{rep: [(iteration, coeffs), ...]}``.
    """
    cfg = cfg or default_config("adv_train")
    ker = _kernel(cfg)
    cps = cfg.checkpoints or [10, 30, 100, 300, 1000, 3000, 10000, 30000]
    lam = cfg.lambda_grid[0] if cfg.lambda_grid else 0.0

    def cell(rep):
        seed = cell_seed(cfg.seed, rep)
        rng = np.random.default_rng(seed)
        train, test = gen_synthetic(SyntheticSpec(cfg.p, cfg.n_train, cfg.n_test, 0), rng)
        attacks = AugmentationModel.finite(cfg.eps, perturbation_sets(train.n, cfg.K, train.p, rng))

        def monitor(k, f):
            return {"mse": empirical_mse(f, test), "lip": empirical_lip(f, test.X), "hnorm": norm(f)}

        try:
            fr = fit_adversarial_gd(train, ker, lam, attacks, max(max(cps), 1), record_at=cps,
                                    monitor=monitor, snapshots=snapshots)
        except DivergenceError:
            return None
        rows = [_record(cfg, _adv_label(e["iteration"]), lam, rep, e["mse"], e["lip"], e["hnorm"], seed)
                for e in fr.trajectory]
        return rows, [(e["iteration"], e["coeffs"]) for e in fr.trajectory if "coeffs" in e]

    report = ScenarioReport("adv_train", cfg)
    snaps = {}
    for rep, out in enumerate(_map_cells(cell, cfg.reps)):
        if out is None:
            report.excluded += 1
        else:
            report.records.extend(out[0])
            if snapshots == "full":
                snaps[rep] = out[1]
    if not report.records:
        raise ScenarioError("every repetition diverged")
    curves = {key: [float(np.mean([r[key] for r in report.records if r["estimator"] == _adv_label(k)]))
                    for k in cps] for key in ("mse", "lip")}
    report.aggregates.update({"checkpoints": cps, **curves, "excluded": report.excluded})
    if snapshots == "full":
        report.aggregates["snapshots"] = snaps
    for key in ("mse", "lip"):
        ok, gap = has_interior_minimum(curves[key])
        at = cps[int(np.argmin(curves[key]))]
        in_window = 300 <= at <= 3000
        report.verdicts.append(Verdict(f"{key}_u_shape", ok and in_window, gap,
                                       f"minimum at iteration {at}"))
    return report


def run(cfg: ScenarioConfig) -> ScenarioReport:
    runners = {"two_point": run_two_point, "quadratic": run_quadratic_identity,
               "generic": run_generic, "mnist": run_mnist, "adv_train": run_adv_iterations}
    return runners[cfg.scenario](cfg)
