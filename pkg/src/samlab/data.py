"""Seeded dataset generators and a comma-separated loader/writer.

Randomness comes from numpy's PCG64 bit generator seeded through
``SeedSequence(seed, spawn_key=(stream,))``. Uniforms are built directly from
the raw 64-bit outputs (top 53 bits, offset by half a step so they lie in the
open interval (0, 1)) and normals use the Box-Muller transform, so the values
depend only on PCG64 itself and not on numpy's sampling routines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .theory import FeatureModelSpec

_INV_2_53 = 1.0 / 9007199254740992.0


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    task: str = "binary"
    n_classes: int = 2
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y).astype(np.int64)
        if self.x.ndim != 2 or self.x.shape[0] != self.y.shape[0]:
            raise ValueError(f"x {self.x.shape} and y {self.y.shape} do not describe the same rows")
        if self.x.shape[0] < 1:
            raise ValueError("a dataset needs at least one row")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("dataset contains non-finite features")
        if self.task == "binary":
            if not np.all((self.y == 1) | (self.y == -1)):
                raise ValueError("binary labels must be -1 or +1")
        elif self.task == "multiclass":
            if np.any(self.y < 0) or np.any(self.y >= self.n_classes):
                raise ValueError(f"class labels must lie in [0, {self.n_classes})")
        else:
            raise ValueError(f"unknown task {self.task!r}")

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.task, self.n_classes, dict(self.meta))


class Stream:
    """Deterministic uniform/normal source on top of PCG64."""

    def __init__(self, seed: int, stream: int = 0):
        ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
        self._bits = np.random.PCG64(ss)

    def uniform(self, size: int) -> np.ndarray:
        raw = self._bits.random_raw(size)
        return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53

    def normal(self, size: int) -> np.ndarray:
        half = (size + 1) // 2
        u1, u2 = self.uniform(half), self.uniform(half)
        r = np.sqrt(-2.0 * np.log(u1))
        t = 2.0 * math.pi * u2
        return np.concatenate([r * np.cos(t), r * np.sin(t)])[:size]

    def permutation(self, size: int) -> np.ndarray:
        return np.argsort(self.uniform(size), kind="stable")


def sample_feature_model(spec: FeatureModelSpec, n_samples: int, seed: int, stream: int = 0) -> Dataset:
    """Draw ``n_samples`` rows: ``x1 = +-y`` (correct w.p. ``p``), then ``n`` columns of N(eta*y, 1)."""
    if not isinstance(spec, FeatureModelSpec):
        raise TypeError("spec must be a FeatureModelSpec")
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    rs = Stream(seed, stream)
    y = np.where(rs.uniform(n_samples) < 0.5, -1, 1)
    agree = rs.uniform(n_samples) < spec.p
    x1 = np.where(agree, y, -y).astype(np.float64)
    noise = rs.normal(n_samples * spec.n).reshape(n_samples, spec.n)
    x = np.column_stack([x1, spec.eta * y[:, None] + noise])
    meta = {"generator": "feature_model", "p": spec.p, "eta": spec.eta, "n": spec.n,
            "seed": int(seed), "stream": int(stream)}
    return Dataset(x, y, "binary", 2, meta)


def sample_mixture2d(centers, spread, n_samples: int, seed: int, center_labels=None,
                     center_weights=None, stream: int = 0) -> Dataset:
    """Balanced Gaussian blobs.

    ``centers`` is a (K, d) array; ``center_labels`` assigns each center to a
    class (default: one class per center) and ``center_weights`` sets the
    within-class mixing weights. ``spread`` is a scalar or per-axis standard
    deviation. Two classes yield binary {-1, +1} labels.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    k, d = centers.shape
    if k < 2:
        raise ValueError("need at least two centers")
    spread = np.broadcast_to(np.asarray(spread, dtype=np.float64), (d,)).copy()
    if np.any(spread <= 0):
        raise ValueError(f"spread must be positive, got {spread.tolist()}")
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    labels = np.arange(k) if center_labels is None else np.asarray(center_labels, dtype=np.int64)
    if labels.shape != (k,):
        raise ValueError("center_labels must have one entry per center")
    classes = np.unique(labels)
    if len(classes) < 2 or not np.array_equal(classes, np.arange(len(classes))):
        raise ValueError("center_labels must cover classes 0..C-1 with C >= 2")
    weights = np.ones(k) if center_weights is None else np.asarray(center_weights, dtype=np.float64)
    if weights.shape != (k,) or np.any(weights < 0):
        raise ValueError("center_weights must be nonnegative, one per center")

    rs = Stream(seed, stream)
    n_cls = len(classes)
    cls = (np.arange(n_samples) % n_cls)[rs.permutation(n_samples)]
    pick = rs.uniform(n_samples)
    which = np.empty(n_samples, dtype=np.int64)
    for c in range(n_cls):
        members = np.flatnonzero(labels == c)
        w = weights[members]
        if w.sum() <= 0:
            raise ValueError(f"class {c} has zero total weight")
        cdf = np.cumsum(w) / w.sum()
        rows = cls == c
        which[rows] = members[np.minimum(np.searchsorted(cdf, pick[rows], side="right"), len(members) - 1)]
    x = centers[which] + rs.normal(n_samples * d).reshape(n_samples, d) * spread
    meta = {"generator": "mixture2d", "seed": int(seed), "stream": int(stream)}
    if n_cls == 2:
        return Dataset(x, np.where(cls == 1, 1, -1), "binary", 2, meta)
    return Dataset(x, cls, "multiclass", n_cls, meta)


@dataclass(frozen=True)
class DelimitedSchema:
    n_features: int
    task: str = "binary"
    n_classes: int = 2


def load_delimited(path, schema: DelimitedSchema) -> Dataset:
    """Read ``d`` comma-separated reals plus a trailing label per row.

    Blank lines and lines starting with ``#`` are skipped.
    """
    path = Path(path)
    xs, ys = [], []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != schema.n_features + 1:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {schema.n_features + 1} fields, got {len(parts)}")
            try:
                values = [float(v) for v in parts[:-1]]
                label = float(parts[-1])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            if label != int(label):
                raise DataFormatError(f"{path}:{lineno}: label {parts[-1]!r} is not an integer")
            label = int(label)
            if schema.task == "binary" and label not in (-1, 1):
                raise DataFormatError(f"{path}:{lineno}: binary label must be -1 or +1, got {label}")
            if schema.task == "multiclass" and not 0 <= label < schema.n_classes:
                raise DataFormatError(f"{path}:{lineno}: label {label} outside [0, {schema.n_classes})")
            xs.append(values)
            ys.append(label)
    if not ys:
        raise DataFormatError(f"{path}: no data rows")
    return Dataset(np.array(xs), np.array(ys), schema.task, schema.n_classes,
                   {"generator": "delimited", "source": str(path)})


def write_delimited(path, dataset: Dataset, header: str | None = None) -> None:
    lines = [f"# {header}"] if header else []
    for row, label in zip(dataset.x, dataset.y):
        lines.append(",".join(format(v, ".17g") for v in row) + f",{int(label)}")
    Path(path).write_text("\n".join(lines) + "\n")
