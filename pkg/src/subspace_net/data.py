"""Planted synthetic generators, strict CSV ingestion, and seeded splitting.

All generators draw from named substreams of one seed (one substream per
matrix), so adding a new matrix later cannot perturb earlier draws and a
depth-1 deep instance is bit-identical to the single-layer generator.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionError,
    EmptyInputError,
    InvalidArgumentError,
    ParseError,
)


@dataclass
class Dataset:
    """Feature matrix X (N x D) and nonnegative target matrix Y (N x T)."""

    X: np.ndarray
    Y: np.ndarray
    feature_names: list[str] | None = None
    target_names: list[str] | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.X.ndim != 2 or self.Y.ndim != 2:
            raise DimensionError("X and Y must be 2-D")
        if self.X.shape[0] != self.Y.shape[0]:
            raise DimensionError(
                f"X has {self.X.shape[0]} rows but Y has {self.Y.shape[0]}")
        if self.X.shape[0] < 1:
            raise EmptyInputError("dataset must contain at least one sample")
        if not (np.isfinite(self.X).all() and np.isfinite(self.Y).all()):
            raise InvalidArgumentError("dataset contains non-finite entries")
        if np.any(self.Y < 0):
            raise InvalidArgumentError("targets must be nonnegative")
        if self.feature_names is not None and len(self.feature_names) != self.X.shape[1]:
            raise DimensionError("feature_names length does not match X")
        if self.target_names is not None and len(self.target_names) != self.Y.shape[1]:
            raise DimensionError("target_names length does not match Y")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def t(self) -> int:
        return self.Y.shape[1]


@dataclass
class PlantedTruth:
    """Ground-truth factors behind a generated dataset.

    ``us[k]`` and ``vs[k]`` are the basis / sketch pair of planted layer k
    (layer 0 maps the raw features; deeper layers map the previous layer's
    output). ``sigma`` holds the per-task noise scales used at every layer.
    """

    us: list[np.ndarray] = field(default_factory=list)
    vs: list[np.ndarray] = field(default_factory=list)
    sigma: np.ndarray = field(default_factory=lambda: np.array([]))
    depth: int = 1

    def weights(self, layer: int = 0) -> np.ndarray:
        """Planted coefficient matrix ``U V`` of one layer."""
        return self.us[layer] @ self.vs[layer]


def _stream(seed: int, *key: int) -> np.random.Generator:
    """Named substream of ``seed``; distinct keys never share state."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def _check_rank(r: int, t: int, d: int):
    if not 1 <= r <= min(t, d):
        raise InvalidArgumentError(
            f"rank must satisfy 1 <= r <= min(t={t}, d={d}), got {r}")


def _generate(n, d, t, r, sigma_row, depth, seed):
    if n < 1 or d < 1 or t < 1:
        raise InvalidArgumentError("n, d, t must all be >= 1")
    if depth < 1:
        raise InvalidArgumentError(f"depth must be >= 1, got {depth}")
    _check_rank(r, t, d)
    x = _stream(seed, 0).standard_normal((n, d))
    truth = PlantedTruth(sigma=np.array(sigma_row, dtype=np.float64), depth=depth)
    h = x
    for k in range(1, depth + 1):
        d_in = d if k == 1 else t
        u = _stream(seed, 1, k).standard_normal((t, r))
        v = _stream(seed, 2, k).standard_normal((r, d_in))
        eps = _stream(seed, 3, k).standard_normal((n, t)) * sigma_row
        h = np.maximum(h @ v.T @ u.T + eps, 0.0)
        truth.us.append(u)
        truth.vs.append(v)
    return Dataset(X=x, Y=h), truth


def gen_single_layer(n: int, d: int, t: int, r: int, sigma: float,
                     seed: int) -> tuple[Dataset, PlantedTruth]:
    """Plant ``Y = ReLU(X V' U' + E)`` with i.i.d. standard Gaussian factors.

    ``sigma`` is the shared noise scale of E. Deterministic per seed.
    """
    if sigma < 0:
        raise InvalidArgumentError(f"sigma must be nonnegative, got {sigma}")
    sigma_row = np.full(t, float(sigma))
    return _generate(n, d, t, r, sigma_row, 1, seed)


def gen_deep(n: int, d: int, t: int, r: int, sigma: float, depth: int,
             seed: int) -> tuple[Dataset, PlantedTruth]:
    """Compose the single-layer generator ``depth`` times.

    Each planted layer feeds its ReLU output straight into the next (no skip
    concatenation in generation); the first layer consumes D features, later
    layers consume the T outputs of the previous one.
    """
    if sigma < 0:
        raise InvalidArgumentError(f"sigma must be nonnegative, got {sigma}")
    sigma_row = np.full(t, float(sigma))
    return _generate(n, d, t, r, sigma_row, depth, seed)


def gen_heteroscedastic(n: int, d: int, t: int, r: int, sigma_set,
                        seed: int) -> tuple[Dataset, PlantedTruth]:
    """Single-layer plant with per-task noise scales drawn from ``sigma_set``.

    With a singleton set this is bit-identical to `gen_single_layer`.
    """
    sigma_set = np.asarray(sigma_set, dtype=np.float64)
    if sigma_set.size == 0:
        raise EmptyInputError("sigma_set must be nonempty")
    if np.any(sigma_set <= 0):
        raise InvalidArgumentError("sigma_set entries must be positive")
    sigma_row = _stream(seed, 4).choice(sigma_set, size=t)
    return _generate(n, d, t, r, sigma_row, 1, seed)


def split(data: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle then partition; train gets ``floor(fraction * N)`` rows.

    The returned datasets keep the shuffled row order, so streaming over the
    training split already consumes samples in seeded random order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise InvalidArgumentError(
            f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_train = int(math.floor(train_fraction * data.n))
    if n_train < 1:
        raise InvalidArgumentError(
            f"train_fraction {train_fraction} leaves an empty training set")
    perm = np.random.default_rng(seed).permutation(data.n)
    names = dict(feature_names=data.feature_names, target_names=data.target_names)
    train = Dataset(X=data.X[perm[:n_train]], Y=data.Y[perm[:n_train]], **names)
    valid = Dataset(X=data.X[perm[n_train:]], Y=data.Y[perm[n_train:]], **names)
    return train, valid


def parse_numeric_csv(path, *, nonnegative: bool = False):
    """Read one strict CSV: header row, every cell a finite decimal number.

    Returns ``(header, matrix)``; any malformed cell rejects the whole file
    with its location.
    """
    problems = []
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: file is empty (header row required)") from None
        width = len(header)
        for line_no, raw in enumerate(reader, start=2):
            if len(raw) != width:
                problems.append(f"{path}:{line_no}: expected {width} cells, got {len(raw)}")
                continue
            row = np.empty(width)
            for col, tok in enumerate(raw, start=1):
                tok = tok.strip()
                if tok == "":
                    problems.append(f"{path}:{line_no}:{col}: missing cell")
                    break
                try:
                    val = float(tok)
                except ValueError:
                    problems.append(f"{path}:{line_no}:{col}: non-numeric cell {tok!r}")
                    break
                if not math.isfinite(val):
                    problems.append(f"{path}:{line_no}:{col}: non-finite cell {tok!r}")
                    break
                if nonnegative and val < 0:
                    problems.append(f"{path}:{line_no}:{col}: negative target {tok!r}")
                    break
                row[col - 1] = val
            else:
                rows.append(row)
    if problems:
        raise ParseError("rejected rows:\n" + "\n".join(problems))
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return header, np.vstack(rows)


def load_csv(features_path, targets_path) -> Dataset:
    """Load a feature table and a target table into one Dataset.

    Both files are comma-separated UTF-8 with a header row and plain decimal
    numbers. Any missing, non-numeric, or non-finite cell, and any negative
    target, rejects the load with the exact file/line/column; nothing is
    imputed.
    """
    feature_names, x = parse_numeric_csv(features_path)
    target_names, y = parse_numeric_csv(targets_path, nonnegative=True)
    if x.shape[0] != y.shape[0]:
        raise ParseError(
            f"row-count mismatch: {features_path} has {x.shape[0]} data rows, "
            f"{targets_path} has {y.shape[0]}")
    return Dataset(X=x, Y=y, feature_names=feature_names, target_names=target_names)


def _write_table(path, header, matrix):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in matrix:
            writer.writerow([f"{v:.17g}" for v in row])


def save_csv(data: Dataset, features_path, targets_path):
    """Write a Dataset as the CSV pair `load_csv` reads.

    Values are formatted with 17 significant digits, so a round trip
    reproduces the float64 matrices exactly.
    """
    feature_names = data.feature_names or [f"x{j}" for j in range(data.d)]
    target_names = data.target_names or [f"y{j}" for j in range(data.t)]
    _write_table(features_path, feature_names, data.X)
    _write_table(targets_path, target_names, data.Y)
