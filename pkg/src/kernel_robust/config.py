"""Scenario configuration records and their per-scenario defaults."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

SCENARIOS = ("two_point", "quadratic", "generic", "mnist", "adv_train")
ESTIMATORS = ("adversarial", "augmented")


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    scenario: str
    kernel: dict
    p: int
    n_train: int
    n_test: int = 0
    eps: float = 0.0
    lambda_grid: list = field(default_factory=list)
    reps: int = 1
    seed: int = 0
    K: int = 40
    setting: int | None = None
    # two-point
    r: float | None = None
    estimator: str | None = None
    # quadratic identity
    y_law: str | None = None
    y_shift: float | None = None
    lip_margin: float | None = None
    mse_law: str | None = None
    # mnist
    digits: list | None = None
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    pixel_scale: float | None = None
    balanced_test: bool | None = None
    # adversarial iterations
    checkpoints: list | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario: unknown value {self.scenario!r}; choose from {SCENARIOS}")
        if not isinstance(self.kernel, dict) or "type" not in self.kernel:
            raise ConfigError("kernel: expected a table with a 'type' key")
        for name in ("p", "n_train", "n_test", "reps", "K"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise ConfigError(f"{name}: expected an integer, got {v!r}")
        if self.p < 1 or self.n_train < 1 or self.n_test < 0 or self.K < 1:
            raise ConfigError("p, n_train and K must be >= 1 and n_test >= 0")
        if self.reps < 1:
            raise ConfigError("reps: must be >= 1")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) \
                or not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed: expected an unsigned 64-bit integer")
        if not (isinstance(self.eps, (int, float)) and math.isfinite(self.eps) and self.eps >= 0):
            raise ConfigError("eps: expected a finite number >= 0")
        grid = [float(v) for v in self.lambda_grid]
        if any(not math.isfinite(v) or v < 0 for v in grid):
            raise ConfigError("lambda_grid: entries must be finite and >= 0")
        if any(b < a for a, b in zip(grid, grid[1:])):
            raise ConfigError("lambda_grid: must be sorted ascending")
        self.lambda_grid = grid
        if self.estimator is not None and self.estimator not in ESTIMATORS:
            raise ConfigError(f"estimator: unknown value {self.estimator!r}")
        if self.checkpoints is not None:
            cps = [int(c) for c in self.checkpoints]
            if any(c < 0 for c in cps) or any(b <= a for a, b in zip(cps, cps[1:])):
                raise ConfigError("checkpoints: must be increasing and >= 0")
            self.checkpoints = cps
        if self.digits is not None:
            if len(self.digits) != 2 or any(int(d) not in range(10) for d in self.digits):
                raise ConfigError("digits: expected two digits in 0..9")
            self.digits = [int(d) for d in self.digits]

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        missing = [k for k in ("scenario", "kernel", "p", "n_train") if k not in data]
        if missing:
            raise ConfigError(f"missing config key(s): {', '.join(missing)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def updated(self, **changes) -> "ScenarioConfig":
        data = self.to_dict()
        data.update({k: v for k, v in changes.items() if v is not None})
        return ScenarioConfig.from_dict(data)


def regime_lambdas(eps: float) -> list[float]:
    """eps^2/100, eps^2 and 10 eps^2 (the last capped at eps/10)."""
    return [eps * eps / 100.0, eps * eps, min(10.0 * eps * eps, eps / 10.0)]


def default_config(scenario: str, setting: int = 1) -> ScenarioConfig:
    if scenario == "two_point":
        return ScenarioConfig("two_point", {"type": "gaussian", "gamma": 1.0}, p=1, n_train=2,
                              eps=0.01, r=0.1, estimator="adversarial", seed=0)
    if scenario == "quadratic":
        return ScenarioConfig("quadratic", {"type": "quadratic", "a1": 1.0, "a2": math.sqrt(10.0)},
                              p=60, n_train=60, eps=0.01, reps=40, seed=0, y_law="normal",
                              y_shift=0.0, lip_margin=1.9, mse_law="uniform_ball")
    if scenario == "generic":
        grid = [float(v) for v in np.logspace(-8, -1, 15)]
        if setting == 1:
            return ScenarioConfig("generic", {"type": "gaussian", "gamma": 10.0}, p=3, n_train=50,
                                  n_test=500, eps=0.05, lambda_grid=grid, reps=25, seed=0, K=40,
                                  setting=1)
        if setting == 2:
            return ScenarioConfig("generic", {"type": "quadratic", "a1": 1.0, "a2": math.sqrt(10.0)},
                                  p=20, n_train=150, n_test=500, eps=0.1, lambda_grid=grid,
                                  reps=25, seed=0, K=40, setting=2)
        raise ConfigError(f"setting: unknown value {setting!r}")
    if scenario == "mnist":
        return ScenarioConfig("mnist", {"type": "gaussian", "gamma": 1.0 / 768.0}, p=784,
                              n_train=100, n_test=2000, eps=0.01,
                              lambda_grid=[10.0 ** k for k in range(-14, -6)], reps=5, seed=0,
                              K=40, digits=[2, 7], pixel_scale=255.0, balanced_test=True)
    if scenario == "adv_train":
        return ScenarioConfig("adv_train", {"type": "gaussian", "gamma": 10.0}, p=3, n_train=50,
                              n_test=500, eps=0.3, lambda_grid=[0.0], reps=50, seed=0, K=40,
                              setting=1, checkpoints=[10, 30, 100, 300, 1000, 3000, 10000, 30000])
    raise ConfigError(f"unknown scenario {scenario!r}")
