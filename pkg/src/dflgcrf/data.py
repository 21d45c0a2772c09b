"""Temporal attributed network datasets and the naive missing-data strategies.

A dataset is a series of snapshots. Each snapshot holds an ``N x m`` feature
matrix whose first ``P`` columns are purchase features (always observed) and
whose last ``D`` columns are demographic features (possibly missing), plus a
response vector of length ``N``.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Base class for dataset problems."""


class ParseError(DataError):
    pass


class SchemaError(DataError):
    pass


class StructureError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    mask: np.ndarray
    purchase_dims: int
    demographic_dims: int

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        mask = np.array(self.mask, dtype=bool)
        if values.ndim != 2 or mask.shape != values.shape:
            raise SchemaError("values and mask must be matching 2-D arrays")
        P, D = self.purchase_dims, self.demographic_dims
        if P < 1 or D < 0 or P + D != values.shape[1]:
            raise SchemaError(
                f"purchase_dims={P}, demographic_dims={D} do not fit m={values.shape[1]}")
        if not mask[:, :P].all():
            raise SchemaError("purchase columns must be fully observed")
        if not np.isfinite(values[mask]).all():
            raise SchemaError("observed entries must be finite")
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def complete_rows(self) -> np.ndarray:
        """Boolean vector, true where every demographic column is observed."""
        return self.mask.all(axis=1)

    def take(self, rows) -> "FeatureMatrix":
        return FeatureMatrix(self.values[rows], self.mask[rows],
                             self.purchase_dims, self.demographic_dims)


@dataclass(frozen=True)
class TemporalDataset:
    """Ordered snapshots ``(features, y)`` over a stable node set."""

    features: tuple
    targets: tuple
    node_ids: tuple = field(default=())

    def __post_init__(self):
        feats = tuple(self.features)
        ys = []
        for y in self.targets:
            y = np.array(y, dtype=float)
            y.setflags(write=False)
            ys.append(y)
        if len(feats) != len(ys) or len(feats) == 0:
            raise StructureError("need one response vector per snapshot")
        N, m = feats[0].values.shape
        P = feats[0].purchase_dims
        for fm, y in zip(feats, ys):
            if fm.values.shape != (N, m) or fm.purchase_dims != P:
                raise StructureError("all snapshots must share N, m and P")
            if y.shape != (N,):
                raise StructureError("response length must equal N")
            if not np.isfinite(y).all():
                raise StructureError("responses must be finite")
        ids = tuple(self.node_ids) if len(self.node_ids) else tuple(str(i) for i in range(N))
        if len(ids) != N:
            raise StructureError("node_ids length must equal N")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "targets", tuple(ys))
        object.__setattr__(self, "node_ids", ids)

    @property
    def n_steps(self) -> int:
        return len(self.features)

    @property
    def n_nodes(self) -> int:
        return self.features[0].n_nodes

    @property
    def purchase_dims(self) -> int:
        return self.features[0].purchase_dims

    @property
    def demographic_dims(self) -> int:
        return self.features[0].demographic_dims

    def snapshots(self):
        return list(zip(self.features, self.targets))

    def take_nodes(self, rows) -> "TemporalDataset":
        rows = np.asarray(rows)
        ids = [self.node_ids[i] for i in np.arange(self.n_nodes)[rows]]
        return TemporalDataset(tuple(fm.take(rows) for fm in self.features),
                               tuple(y[rows] for y in self.targets), tuple(ids))

    def steps(self, start: int, stop: int) -> "TemporalDataset":
        return TemporalDataset(self.features[start:stop], self.targets[start:stop], self.node_ids)


class Mechanism(str, enum.Enum):
    AT_RANDOM = "AtRandom"
    LOWEST_RESPONSE = "LowestResponse"
    HIGHEST_RESPONSE = "HighestResponse"


MAX_MISSING_FRACTION = 0.8


@dataclass(frozen=True)
class MissingnessSpec:
    mechanism: Mechanism
    fraction: float
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mechanism", Mechanism(self.mechanism))
        if not 0.0 <= self.fraction <= MAX_MISSING_FRACTION:
            raise ValueError(f"fraction must lie in [0, {MAX_MISSING_FRACTION}], got {self.fraction}")


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------

def _header(P: int, D: int) -> list[str]:
    return (["node_id", "time"] + [f"p{i + 1}" for i in range(P)]
            + [f"d{i + 1}" for i in range(D)] + ["target"])


def _fmt(x: float) -> str:
    return repr(float(x))


def load_dataset(path, purchase_dims: int | None = None,
                 demographic_dims: int | None = None) -> TemporalDataset:
    """Read a dataset CSV.

    Columns are ``node_id, time, p1..pP, d1..dD, target``; an empty
    demographic cell marks a missing value. If the column counts are not
    given they are inferred from the ``p``/``d`` prefixes of the header.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if header[:2] != ["node_id", "time"] or header[-1] != "target":
            raise ParseError(f"{path}:1: header must start with node_id,time and end with target")
        feat_cols = header[2:-1]
        if purchase_dims is None:
            purchase_dims = sum(c.startswith("p") for c in feat_cols)
        if demographic_dims is None:
            demographic_dims = len(feat_cols) - purchase_dims
        P, D = purchase_dims, demographic_dims
        if P + D != len(feat_cols):
            raise SchemaError(f"{path}: header has {len(feat_cols)} feature columns, expected {P + D}")

        by_step: dict[int, list] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                step = int(row[1])
                vals, obs = [], []
                for j, cell in enumerate(row[2:-1]):
                    if cell.strip() == "":
                        if j < P:
                            raise SchemaError(f"{path}:{lineno}: missing purchase value in column {header[2 + j]}")
                        vals.append(np.nan)
                        obs.append(False)
                    else:
                        vals.append(float(cell))
                        obs.append(True)
                target = float(row[-1])
            except ValueError as exc:
                if isinstance(exc, SchemaError):
                    raise
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            by_step.setdefault(step, []).append((row[0], vals, obs, target))

    if not by_step:
        raise EmptyDatasetError(f"{path}: no data rows")
    steps = sorted(by_step)
    node_ids = [r[0] for r in by_step[steps[0]]]
    feats, ys = [], []
    for s in steps:
        rows = by_step[s]
        ids = [r[0] for r in rows]
        if sorted(ids) != sorted(node_ids) or len(set(ids)) != len(ids):
            raise StructureError(f"{path}: node set at time {s} differs from time {steps[0]}")
        order = {nid: k for k, nid in enumerate(ids)}
        rows = [rows[order[nid]] for nid in node_ids]
        feats.append(FeatureMatrix(np.array([r[1] for r in rows], dtype=float).reshape(len(rows), P + D),
                                   np.array([r[2] for r in rows], dtype=bool).reshape(len(rows), P + D),
                                   P, D))
        ys.append(np.array([r[3] for r in rows]))
    return TemporalDataset(tuple(feats), tuple(ys), tuple(node_ids))


def save_dataset(ds: TemporalDataset, path, mask_path=None, start_time: int = 1) -> None:
    """Write ``ds`` in the CSV layout read by :func:`load_dataset`.

    Missing cells are written empty. If ``mask_path`` is given the masks are
    also written as a parallel 0/1 CSV.
    """
    P, D = ds.purchase_dims, ds.demographic_dims
    header = _header(P, D)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t, (fm, y) in enumerate(ds.snapshots()):
            for i, nid in enumerate(ds.node_ids):
                cells = [_fmt(v) if ok else "" for v, ok in zip(fm.values[i], fm.mask[i])]
                w.writerow([nid, t + start_time] + cells + [_fmt(y[i])])
    if mask_path is not None:
        with Path(mask_path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header[:-1])
            for t, fm in enumerate(ds.features):
                for i, nid in enumerate(ds.node_ids):
                    w.writerow([nid, t + start_time] + [int(b) for b in fm.mask[i]])


# ---------------------------------------------------------------------------
# Splitting, missingness, imputation
# ---------------------------------------------------------------------------

def temporal_split(ds: TemporalDataset, t: int) -> tuple[TemporalDataset, TemporalDataset]:
    """Train on steps ``1..t``, test on step ``t+1``."""
    if not 1 <= t < ds.n_steps:
        raise IndexError(f"split step t={t} outside [1, {ds.n_steps - 1}]")
    return ds.steps(0, t), ds.steps(t, t + 1)


def masked_nodes(ds: TemporalDataset, spec: MissingnessSpec,
                 train_steps: int | None = None) -> np.ndarray:
    """Indices of the nodes whose demographics ``spec`` removes (sorted)."""
    N = ds.n_nodes
    n_mask = round_half_away(spec.fraction * N)
    if n_mask == 0:
        return np.zeros(0, dtype=int)
    if spec.mechanism is Mechanism.AT_RANDOM:
        rng = np.random.default_rng(spec.seed)
        chosen = rng.choice(N, size=n_mask, replace=False)
    else:
        if train_steps is None:
            train_steps = max(ds.n_steps - 1, 1)
        score = np.mean(ds.targets[:train_steps], axis=0)
        if spec.mechanism is Mechanism.HIGHEST_RESPONSE:
            score = -score
        # lexsort: last key is primary
        order = np.lexsort((np.array(ds.node_ids, dtype=object).astype(str), score))
        chosen = order[:n_mask]
    return np.sort(chosen)


def induce_missingness(ds: TemporalDataset, spec: MissingnessSpec,
                       train_steps: int | None = None) -> TemporalDataset:
    """Remove all demographic values of selected nodes in every snapshot.

    Ranking for the response-based mechanisms uses the mean response over the
    first ``train_steps`` snapshots (default: all but the last one).
    """
    D = ds.demographic_dims
    if D == 0:
        raise SchemaError("dataset has no demographic columns to mask")
    if spec.fraction == 0:
        return ds
    rows = masked_nodes(ds, spec, train_steps)
    P = ds.purchase_dims
    feats = []
    for fm in ds.features:
        mask = fm.mask.copy()
        mask[rows, P:] = False
        values = fm.values.copy()
        values[rows, P:] = np.nan
        feats.append(FeatureMatrix(values, mask, P, D))
    return TemporalDataset(tuple(feats), ds.targets, ds.node_ids)


def zero_impute(fm: FeatureMatrix) -> FeatureMatrix:
    values = np.where(fm.mask, fm.values, 0.0)
    return FeatureMatrix(values, np.ones_like(fm.mask), fm.purchase_dims, fm.demographic_dims)


def drop_incomplete(ds: TemporalDataset) -> TemporalDataset:
    """Keep only nodes whose demographics are observed in every snapshot."""
    keep = np.logical_and.reduce([fm.complete_rows() for fm in ds.features])
    if not keep.any():
        raise EmptyDatasetError("no node has complete demographics")
    if keep.all():
        return ds
    return ds.take_nodes(np.flatnonzero(keep))


def stack(ds: TemporalDataset, impute: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Pool all snapshots into one ``(X, y)`` design, zero-filling masked cells."""
    X = np.vstack([np.where(fm.mask, fm.values, 0.0) if impute else fm.values
                   for fm in ds.features])
    return X, np.concatenate(ds.targets)


@dataclass(frozen=True)
class Standardizer:
    """Per-column affine scaling fitted on observed entries only."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, fms: Sequence[FeatureMatrix]) -> "Standardizer":
        V = np.vstack([fm.values for fm in fms])
        M = np.vstack([fm.mask for fm in fms])
        m = V.shape[1]
        mean, scale = np.zeros(m), np.ones(m)
        for j in range(m):
            col = V[M[:, j], j]
            if col.size:
                mean[j] = col.mean()
                sd = col.std()
                scale[j] = sd if sd > 1e-12 else 1.0
        return cls(mean, scale)

    def transform(self, fm: FeatureMatrix) -> np.ndarray:
        """Standardized values with masked cells set to zero (the column mean)."""
        Z = (np.where(fm.mask, fm.values, 0.0) - self.mean) / self.scale
        return np.where(fm.mask, Z, 0.0)

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"], dtype=float), np.array(d["scale"], dtype=float))
