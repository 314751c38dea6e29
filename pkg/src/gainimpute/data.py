"""Tabular datasets with a mask grid: CSV ingestion, min-max scaling, MCAR
masking, fold splitting and a synthetic correlated generator.

Missing cells carry the sentinel value 0 alongside mask 0. Anything reading
``values`` must gate on ``mask``.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

CONTINUOUS = "continuous"
BINARY = "binary"


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str = CONTINUOUS
    observed_min: float = 0.0
    observed_max: float = 1.0

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, BINARY):
            raise DataError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if not self.observed_min <= self.observed_max:
            raise DataError(f"feature {self.name!r}: min > max")


@dataclass(frozen=True)
class NormalizationParams:
    mins: np.ndarray
    maxs: np.ndarray
    constant: np.ndarray  # bool; constant continuous features map to 0.5

    @classmethod
    def identity(cls, d: int) -> "NormalizationParams":
        return cls(np.zeros(d), np.ones(d), np.zeros(d, dtype=bool))

    @property
    def scale(self) -> np.ndarray:
        return np.where(self.constant, 1.0, self.maxs - self.mins)

    def apply(self, raw: np.ndarray) -> np.ndarray:
        out = (raw - self.mins) / self.scale
        return np.where(self.constant, 0.5, out)

    def invert(self, scaled: np.ndarray) -> np.ndarray:
        out = scaled * self.scale + self.mins
        return np.where(self.constant, self.mins, out)


@dataclass(frozen=True)
class Dataset:
    values: np.ndarray  # (n, d) float64, 0 where mask == 0
    mask: np.ndarray  # (n, d) float64 in {0, 1}
    features: tuple[FeatureSpec, ...]
    ground_truth: np.ndarray | None = None
    # None means ``values`` are on the raw scale
    normalization: NormalizationParams | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=np.float64)
        if values.ndim != 2 or values.shape != mask.shape:
            raise DataError(f"values {values.shape} and mask {mask.shape} must be equal 2-D shapes")
        if len(self.features) != values.shape[1]:
            raise DataError("one FeatureSpec per column required")
        if not np.isin(mask, (0.0, 1.0)).all():
            raise DataError("mask entries must be 0 or 1")
        values = np.where(mask == 1.0, values, 0.0)
        if not np.isfinite(values).all():
            raise DataError("non-finite observed value")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "features", tuple(self.features))
        if self.ground_truth is not None:
            gt = np.asarray(self.ground_truth, dtype=np.float64)
            if gt.shape != values.shape:
                raise DataError("ground truth shape mismatch")
            if not np.array_equal(gt[mask == 1], values[mask == 1]):
                raise DataError("ground truth disagrees with observed cells")
            object.__setattr__(self, "ground_truth", gt)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def binary(self) -> np.ndarray:
        return np.array([f.kind == BINARY for f in self.features])

    @property
    def missing_fraction(self) -> float:
        return float(1.0 - self.mask.mean()) if self.mask.size else 0.0

    def subset(self, rows: Sequence[int] | np.ndarray) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        gt = None if self.ground_truth is None else self.ground_truth[rows]
        return replace(self, values=self.values[rows], mask=self.mask[rows], ground_truth=gt)

    def columns(self, cols: Sequence[int]) -> "Dataset":
        cols = list(cols)
        gt = None if self.ground_truth is None else self.ground_truth[:, cols]
        norm = self.normalization
        if norm is not None:
            norm = NormalizationParams(norm.mins[cols], norm.maxs[cols], norm.constant[cols])
        return Dataset(self.values[:, cols], self.mask[:, cols], tuple(self.features[c] for c in cols), gt, norm)

    def drop(self, name: str) -> tuple["Dataset", np.ndarray]:
        """Split off column ``name``; returns (rest, that column's raw values)."""
        if name not in self.names:
            raise DataError(f"no column named {name!r}")
        j = self.names.index(name)
        if self.ground_truth is None and (self.mask[:, j] != 1).any():
            raise DataError(f"column {name!r} has missing cells and no ground truth")
        src = self.ground_truth if self.ground_truth is not None else self.values
        if self.normalization is not None:
            src = self.normalization.invert(src)
        keep = [c for c in range(self.d) if c != j]
        return self.columns(keep), src[:, j].copy()

    def with_truth_as_values(self) -> "Dataset":
        """Fully observed copy built from the ground truth."""
        if self.ground_truth is None:
            raise DataError("dataset has no ground truth")
        return replace(self, values=self.ground_truth, mask=np.ones_like(self.mask))


def _infer_kind(col: np.ndarray, obs: np.ndarray) -> str:
    v = col[obs]
    return BINARY if v.size and np.isin(v, (0.0, 1.0)).all() else CONTINUOUS


def read_table(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file, header row required")
    header, body = rows[0], rows[1:]
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: line {i} has {len(row)} fields, header has {len(header)}")
    return header, body


def parse_tokens(header: Sequence[str], body: Sequence[Sequence[str]], missing_token: str = "",
                 feature_kinds: dict[str, str] | Sequence[str] | None = None, where: str = "<table>") -> Dataset:
    n, d = len(body), len(header)
    raw = np.zeros((n, d))
    mask = np.ones((n, d))
    for i, row in enumerate(body):
        for j, tok in enumerate(row):
            if tok.strip() == missing_token.strip():
                mask[i, j] = 0.0
                continue
            try:
                raw[i, j] = float(tok)
            except ValueError:
                raise DataError(f"{where}: row {i + 1}, column {header[j]!r}: cannot parse {tok!r}") from None
            if not np.isfinite(raw[i, j]):
                raise DataError(f"{where}: row {i + 1}, column {header[j]!r}: non-finite value")
    if isinstance(feature_kinds, dict):
        kinds = [feature_kinds.get(h) for h in header]
    elif feature_kinds is not None:
        kinds = list(feature_kinds)
        if len(kinds) != d:
            raise DataError("feature_kinds length must match column count")
    else:
        kinds = [None] * d
    features = []
    for j, name in enumerate(header):
        kind = kinds[j] or _infer_kind(raw[:, j], mask[:, j] == 1)
        obs = raw[mask[:, j] == 1, j]
        if kind == BINARY and not np.isin(obs, (0.0, 1.0)).all():
            bad = obs[~np.isin(obs, (0.0, 1.0))][0]
            raise DataError(f"{where}: binary column {name!r} contains {bad!r}")
        lo, hi = (float(obs.min()), float(obs.max())) if obs.size else (0.0, 1.0)
        features.append(FeatureSpec(name, kind, lo, hi))
    return Dataset(raw, mask, tuple(features))


def load_csv(path: str | Path, missing_token: str = "",
             feature_kinds: dict[str, str] | Sequence[str] | None = None, normalized: bool = True) -> Dataset:
    """Read a headed CSV; cells equal to ``missing_token`` become mask 0.

    Columns whose observed values are all 0/1 are typed binary unless
    ``feature_kinds`` says otherwise.
    """
    header, body = read_table(path)
    ds = parse_tokens(header, body, missing_token, feature_kinds, where=str(path))
    return normalize(ds)[0] if normalized else ds


def format_value(v: float) -> str:
    return repr(float(v))


def save_csv(ds: Dataset, path: str | Path, raw: bool = True, missing_token: str = "") -> None:
    """Write values (denormalized when ``raw``) with missing cells as
    ``missing_token``; ``repr`` formatting makes the roundtrip exact."""
    values = raw_values(ds) if raw else ds.values
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ds.names)
        for row, mrow in zip(values, ds.mask):
            w.writerow([format_value(v) if m else missing_token for v, m in zip(row, mrow)])


def save_mask(ds: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ds.names)
        for mrow in ds.mask:
            w.writerow([str(int(m)) for m in mrow])


def load_mask(path: str | Path) -> np.ndarray:
    header, body = read_table(path)
    try:
        return np.array([[float(t) for t in row] for row in body]).reshape(len(body), len(header))
    except ValueError as exc:
        raise DataError(f"{path}: mask file must hold 0/1 entries") from exc


def raw_values(ds: Dataset) -> np.ndarray:
    if ds.normalization is None:
        return ds.values
    return np.where(ds.mask == 1, ds.normalization.invert(ds.values), 0.0)


def fit_normalization(ds: Dataset) -> NormalizationParams:
    if ds.normalization is not None:
        raise DataError("dataset is already normalized")
    mins = np.zeros(ds.d)
    maxs = np.ones(ds.d)
    constant = np.zeros(ds.d, dtype=bool)
    for j, f in enumerate(ds.features):
        if f.kind == BINARY:
            continue
        obs = ds.values[ds.mask[:, j] == 1, j]
        if obs.size == 0:
            continue
        mins[j], maxs[j] = obs.min(), obs.max()
        if mins[j] == maxs[j]:
            constant[j] = True
            warnings.warn(f"feature {f.name!r} is constant; mapped to 0.5", stacklevel=3)
    return NormalizationParams(mins, maxs, constant)


def normalize(ds: Dataset, params: NormalizationParams | None = None) -> tuple[Dataset, NormalizationParams]:
    """Min-max scale continuous columns to [0, 1] from observed cells only.
    Pass ``params`` to reuse a previously fitted map."""
    if params is None:
        params = fit_normalization(ds)
    elif ds.normalization is not None:
        raise DataError("dataset is already normalized")
    values = params.apply(ds.values)
    gt = None if ds.ground_truth is None else params.apply(ds.ground_truth)
    return Dataset(values, ds.mask, ds.features, gt, params), params


def denormalize(ds: Dataset, params: NormalizationParams | None = None) -> Dataset:
    params = params if params is not None else ds.normalization
    if params is None:
        return ds
    gt = None if ds.ground_truth is None else params.invert(ds.ground_truth)
    return Dataset(params.invert(ds.values), ds.mask, ds.features, gt, None)


def introduce_mcar(ds: Dataset, rate: float, rng: np.random.Generator, exact: bool = False,
                   columns: Sequence[int] | None = None) -> Dataset:
    """Hide cells completely at random. Each cell is dropped independently
    with probability ``rate``; ``exact=True`` hides exactly round(rate * cells)
    instead. ``columns`` restricts masking to those columns."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("rate must lie in [0, 1)")
    if (ds.mask != 1).any():
        raise DataError("introduce_mcar needs a fully observed dataset")
    cols = list(range(ds.d)) if columns is None else list(columns)
    drop = np.zeros(ds.mask.shape, dtype=bool)
    if exact:
        cells = ds.n * len(cols)
        pick = rng.choice(cells, size=int(round(rate * cells)), replace=False)
        sub = np.zeros(cells, dtype=bool)
        sub[pick] = True
        drop[:, cols] = sub.reshape(ds.n, len(cols))
    else:
        drop[:, cols] = rng.random((ds.n, len(cols))) < rate
    mask = np.where(drop, 0.0, 1.0)
    return Dataset(ds.values, mask, ds.features, ds.values.copy(), ds.normalization)


def split_folds(ds_or_n: Dataset | int, k: int, rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    """k shuffled (train_rows, test_rows) pairs; test folds partition the rows
    and differ in size by at most one."""
    n = ds_or_n if isinstance(ds_or_n, int) else ds_or_n.n
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise ValueError(f"cannot split {n} rows into {k} folds")
    order = rng.permutation(n)
    folds = np.array_split(order, k)
    out = []
    for i, test in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((np.sort(train), np.sort(test)))
    return out


def synthesize_correlated(n: int, rho: float, rng: np.random.Generator) -> Dataset:
    """Two standardized Gaussian features with correlation ``rho``, min-max
    normalized. With rho = 1 the second feature equals the first."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not -1.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [-1, 1]")
    x1 = rng.standard_normal(n)
    noise = rng.standard_normal(n)
    x2 = rho * x1 + np.sqrt(1.0 - rho * rho) * noise
    cols = []
    for x in (x1, x2):
        sd = x.std()
        cols.append((x - x.mean()) / sd if sd > 0 else x - x.mean())
    raw = np.column_stack(cols)
    feats = tuple(FeatureSpec(f"x{j + 1}", CONTINUOUS, float(raw[:, j].min()), float(raw[:, j].max())) for j in range(2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return normalize(Dataset(raw, np.ones_like(raw), feats))[0]
