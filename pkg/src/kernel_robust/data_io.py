"""Synthetic data, MNIST IDX parsing, report CSVs and TOML configs."""
from __future__ import annotations

import csv
import gzip
import struct
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, ScenarioConfig
from .estimators import Dataset

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

CSV_COLUMNS = ("scenario", "estimator", "lambda", "repetition", "mse", "lip", "hnorm", "seed")
IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class DataError(ValueError):
    pass


class IdxFormatError(DataError):
    pass


class IdxTruncatedError(DataError):
    pass


class InsufficientSamplesError(DataError):
    pass


# -- synthetic data ---------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    p: int
    n_train: int
    n_test: int
    seed: int


def sample_unit_sphere(p: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform directions in R^p (normalized Gaussian draws)."""
    if p < 1:
        raise DataError("dimension must be >= 1")
    Z = rng.standard_normal((count, p))
    nrm = np.linalg.norm(Z, axis=1, keepdims=True)
    # a zero Gaussian draw has probability zero; redraw just in case
    while np.any(nrm == 0):
        bad = nrm[:, 0] == 0
        Z[bad] = rng.standard_normal((int(bad.sum()), p))
        nrm = np.linalg.norm(Z, axis=1, keepdims=True)
    return Z / nrm


def synthetic_target(X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, float))
    return X[:, 0] + X[:, 1] ** 2


def gen_synthetic(spec: SyntheticSpec, rng: np.random.Generator | None = None):
    """Train and test sets with x uniform on the unit sphere and y = x_1 + x_2^2."""
    if spec.p < 2:
        raise DataError("the target x_1 + x_2^2 needs p >= 2")
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    X = sample_unit_sphere(spec.p, spec.n_train + spec.n_test, rng)
    y = synthetic_target(X)
    k = spec.n_train
    test = Dataset(X[k:], y[k:]) if spec.n_test else None
    return Dataset(X[:k], y[:k]), test


def perturbation_sets(n: int, K: int, p: int, rng: np.random.Generator) -> list[np.ndarray]:
    """K random unit vectors for each of n points."""
    return list(sample_unit_sphere(p, n * K, rng).reshape(n, K, p))


# -- IDX files --------------------------------------------------------------

@dataclass(frozen=True)
class IdxFile:
    magic: int
    dims: tuple
    payload: np.ndarray


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def parse_idx(raw: bytes, expected_magic: int | None = None, name: str = "<bytes>") -> IdxFile:
    """Parse an unsigned-byte IDX blob (big-endian header)."""
    if len(raw) < 4:
        raise IdxTruncatedError(f"{name}: file ends inside the magic number at offset 0")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in (IMAGE_MAGIC, LABEL_MAGIC) or (expected_magic is not None and magic != expected_magic):
        want = f"0x{expected_magic:08x}" if expected_magic is not None else "0x00000801 or 0x00000803"
        raise IdxFormatError(f"{name}: bad magic 0x{magic:08x} at offset 0 (expected {want})")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{name}: header needs {header} bytes, file has {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header != size:
        raise IdxTruncatedError(f"{name}: payload at offset {header} has {len(raw) - header} bytes, "
                                f"dims {dims} need {size}")
    payload = np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)
    return IdxFile(magic, tuple(dims), payload)


def read_idx(path, expected_magic: int | None = None) -> IdxFile:
    return parse_idx(_read_bytes(path), expected_magic, str(path))


def _load_images_labels(image_path, label_path):
    images = read_idx(image_path, IMAGE_MAGIC)
    labels = read_idx(label_path, LABEL_MAGIC)
    if len(images.dims) != 3 or len(labels.dims) != 1:
        raise IdxFormatError("image file must be 3-d and label file 1-d")
    if images.dims[0] != labels.dims[0]:
        raise IdxFormatError(f"{image_path} has {images.dims[0]} images but {label_path} "
                             f"has {labels.dims[0]} labels")
    X = images.payload.reshape(images.dims[0], -1)
    return X, labels.payload


def _pick(labels, digits, count, rng, balanced, exclude=None):
    a, b = digits
    pools = [np.flatnonzero(labels == a), np.flatnonzero(labels == b)]
    if exclude is not None:
        pools = [np.setdiff1d(pool, exclude) for pool in pools]
    if balanced:
        want = [count - count // 2, count // 2]
        for d, pool, w in zip(digits, pools, want):
            if len(pool) < w:
                raise InsufficientSamplesError(f"digit {d}: need {w} samples, found {len(pool)}")
        chosen = [rng.choice(pool, w, replace=False) for pool, w in zip(pools, want)]
        idx = np.concatenate(chosen)
    else:
        pool = np.concatenate(pools)
        if len(pool) < count:
            raise InsufficientSamplesError(f"digits {a},{b}: need {count} samples, found {len(pool)}")
        idx = rng.choice(pool, count, replace=False)
    return np.sort(idx)


def load_mnist_pair(image_path, label_path, digits, n_train: int, n_test: int, seed: int,
                    test_image_path=None, test_label_path=None, pixel_scale: float = 255.0,
                    balanced_test: bool = True):
    """Binary task from two digits: ``digits[0]`` -> +1 and ``digits[1]`` -> -1.

    Training rows are drawn without replacement from the first file pair. Test
    rows come from the separate test files when given, otherwise from the
    remaining rows of the first pair.
    """
    digits = tuple(int(d) for d in digits)
    if len(digits) != 2:
        raise DataError("need exactly two digits")
    rng = np.random.default_rng(seed)
    X, lab = _load_images_labels(image_path, label_path)
    tr = _pick(lab, digits, n_train, rng, balanced=False)

    def dataset(Xs, ls, idx):
        if len(idx) == 0:
            return None
        x = Xs[idx].astype(np.float64) / pixel_scale
        return Dataset(x, np.where(ls[idx] == digits[0], 1.0, -1.0))

    train = dataset(X, lab, tr)
    if test_image_path is not None:
        Xt, lt = _load_images_labels(test_image_path, test_label_path)
        te = _pick(lt, digits, n_test, rng, balanced_test) if n_test else np.array([], int)
        return train, dataset(Xt, lt, te)
    te = _pick(lab, digits, n_test, rng, balanced_test, exclude=tr) if n_test else np.array([], int)
    return train, dataset(X, lab, te)


# -- reports and configs ------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_report_csv(report, path) -> None:
    """Write report records; floats keep 17 significant digits."""
    records = report.records if hasattr(report, "records") else report
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rec in records:
            w.writerow([_fmt(rec.get(c)) for c in CSV_COLUMNS])


def read_report_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for c in ("lambda", "mse", "lip", "hnorm"):
            row[c] = float(row[c]) if row[c] != "" else None
    return rows


def read_config(path) -> ScenarioConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        return ScenarioConfig.from_dict(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def write_config(cfg: ScenarioConfig, path) -> None:
    with open(path, "wb") as fh:
        tomli_w.dump(cfg.to_dict(), fh)
