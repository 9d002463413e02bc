"""Observations ``(x, y, z)``, class weights and two-fold splits."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

#: Permutations tried before giving up on folds that each contain both labels.
FOLD_RETRY_BUDGET = 100


class DataError(ValueError):
    """Invalid input data; the message names the offending row/column."""


class WeightMode(str, enum.Enum):
    INVERSE_PROPORTION = "inverse-proportion"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=float)
        y = np.ascontiguousarray(self.y, dtype=float)
        z = np.ascontiguousarray(self.z, dtype=float)
        if z.ndim != 2:
            raise DataError(f"z must be a 2-d array, got shape {z.shape}")
        if x.ndim != 1 or y.ndim != 1 or not (x.shape[0] == y.shape[0] == z.shape[0]):
            raise DataError(f"row counts differ: x {x.shape}, y {y.shape}, z {z.shape}")
        if x.shape[0] < 4:
            raise DataError(f"need at least 4 observations, got {x.shape[0]}")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise DataError("labels must be -1 or +1")
        for name, arr in (("x", x), ("z", z)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contains non-finite values")
        for arr in (x, y, z):
            arr.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.z.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.x[idx], self.y[idx], self.z[idx])

    def standardized(self) -> "Dataset":
        """Copy with every covariate column centred and scaled to unit variance."""
        sd = self.z.std(axis=0)
        sd[sd == 0] = 1.0
        return Dataset(self.x, self.y, (self.z - self.z.mean(axis=0)) / sd)


@dataclass(frozen=True)
class WeightFn:
    w_plus: float
    w_minus: float
    mode: WeightMode

    def __call__(self, y):
        return np.where(np.asarray(y) > 0, self.w_plus, self.w_minus)


@dataclass(frozen=True)
class FoldPair:
    fold1: np.ndarray
    fold2: np.ndarray
    seed: int

    def swapped(self) -> "FoldPair":
        return FoldPair(self.fold2, self.fold1, self.seed)


def empirical_weights(data: Dataset, mode: WeightMode | str = WeightMode.INVERSE_PROPORTION) -> WeightFn:
    mode = WeightMode(mode)
    if mode is WeightMode.UNIFORM:
        return WeightFn(0.5, 0.5, mode)
    n_plus = int(np.sum(data.y > 0))
    if n_plus == 0 or n_plus == data.n:
        raise DataError("degenerate labels: inverse-proportion weights need both classes")
    pi = n_plus / data.n
    return WeightFn(1.0 / pi, 1.0 / (1.0 - pi), mode)


def _has_both_labels(y) -> bool:
    return bool(np.any(y > 0) and np.any(y < 0))


def split_two_folds(data: Dataset, seed: int) -> FoldPair:
    """Random halves; the first ``ceil(n/2)`` permuted indices form fold 1.

    Redraws the permutation (same generator, up to ``FOLD_RETRY_BUDGET`` times)
    while a fold misses one of the labels.
    """
    rng = np.random.default_rng(seed)
    n1 = math.ceil(data.n / 2)
    for _ in range(FOLD_RETRY_BUDGET):
        perm = rng.permutation(data.n)
        f1, f2 = np.sort(perm[:n1]), np.sort(perm[n1:])
        if _has_both_labels(data.y[f1]) and _has_both_labels(data.y[f2]):
            return FoldPair(f1, f2, seed)
    raise DataError(f"could not split into folds containing both labels after {FOLD_RETRY_BUDGET} draws")


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise DataError(f"row {row}, column {col}: non-numeric value {cell!r}") from None
    if not math.isfinite(value):
        raise DataError(f"row {row}, column {col}: non-finite value {cell!r}")
    return value


def load_csv(path, standardize: bool = False) -> Dataset:
    """Read ``y,x,z1,...,zd`` columns. ``y`` may be coded {-1,1} or {0,1}.

    Rows are numbered from 1 after the header in error messages.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        for required in ("y", "x"):
            if required not in header:
                raise DataError(f"{path}: missing column {required!r}")
        zcols = [h for h in header if h not in ("y", "x")]
        if not zcols:
            raise DataError(f"{path}: no covariate columns")
        pos = {h: i for i, h in enumerate(header)}
        xs, ys, zs = [], [], []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {row_no} has {len(row)} fields, header has {len(header)}")
            yv = _parse_float(row[pos["y"]], row_no, "y")
            if yv == 0.0:
                yv = -1.0
            if yv not in (-1.0, 1.0):
                raise DataError(f"row {row_no}, column y: label {row[pos['y']]!r} not in {{-1, 0, 1}}")
            ys.append(yv)
            xs.append(_parse_float(row[pos["x"]], row_no, "x"))
            zs.append([_parse_float(row[pos[c]], row_no, c) for c in zcols])
    if not xs:
        raise DataError(f"{path}: no data rows")
    data = Dataset(np.array(xs), np.array(ys), np.array(zs))
    return data.standardized() if standardize else data


def write_csv(data: Dataset, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "x"] + [f"z{j + 1}" for j in range(data.d)])
        for i in range(data.n):
            w.writerow([int(data.y[i]), repr(float(data.x[i]))] + [repr(float(v)) for v in data.z[i]])
