"""LIBSVM parsing, standardization and seeded dataset splits."""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterable, Optional, TextIO, Union

import numpy as np

from .core import _index

ROLES = ("behavior_train", "eval_train", "ope", "truth", "cv")


class LibsvmParseError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    """Dense features with 0-based class indices.

    ``label_map`` holds the raw label for each class index when the data came
    from a file.
    """

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    label_map: Optional[tuple] = None

    def __post_init__(self) -> None:
        x = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ValueError("features must be (N, d) and labels (N,)")
        if x.shape[0] < 1:
            raise ValueError("a dataset needs at least one row")
        if y.min() < 0 or y.max() >= self.class_count:
            raise ValueError(f"labels must lie in [0, {self.class_count - 1}]")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    def subset(self, idx) -> "LabeledDataset":
        idx = _index(idx)
        return LabeledDataset(self.features[idx], self.labels[idx], self.class_count, self.label_map)


@dataclass(frozen=True)
class SplitPlan:
    """Ordered partition sizes with role tags, drawn by one seeded shuffle."""

    seed: int
    sizes: tuple[tuple[str, int], ...]

    def __post_init__(self) -> None:
        sizes = tuple((str(role), int(n)) for role, n in self.sizes)
        for role, n in sizes:
            if n < 1:
                raise ValueError(f"partition {role!r} must have size >= 1")
        object.__setattr__(self, "sizes", sizes)

    @property
    def total(self) -> int:
        return sum(n for _, n in self.sizes)

    @classmethod
    def ope2d(cls, seed: int, behavior=1000, evaluation=1000, ope=1000, truth=2000) -> "SplitPlan":
        return cls(seed, (("behavior_train", behavior), ("eval_train", evaluation),
                          ("ope", ope), ("truth", truth)))

    @classmethod
    def opcv(cls, seed: int, behavior=1000, cv=2000, truth=2000) -> "SplitPlan":
        return cls(seed, (("behavior_train", behavior), ("cv", cv), ("truth", truth)))


def _lines(source: Union[str, TextIO, Iterable[str]]) -> Iterable[str]:
    if isinstance(source, str):
        return io.StringIO(source)
    return source


def parse_libsvm(
    source: Union[str, TextIO, Iterable[str]], n_features: Optional[int] = None
) -> LabeledDataset:
    """Parse ``<label> <idx>:<val> ...`` lines into a dense dataset.

    Indices are 1-based and must be strictly increasing within a line. Blank
    lines and ``#`` comments are skipped. Raw labels are remapped to
    contiguous class indices in sorted order of the distinct raw values; the
    remap table is stored on ``label_map``. ``n_features`` overrides the
    inferred dimension (max index seen).
    """
    raw_labels: list[float] = []
    rows: list[tuple[list[int], list[float]]] = []
    max_idx = 0
    for lineno, line in enumerate(_lines(source), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        tokens = text.split()
        try:
            raw_labels.append(float(tokens[0]))
        except ValueError:
            raise LibsvmParseError(f"non-numeric label {tokens[0]!r} at line {lineno}") from None
        idxs: list[int] = []
        vals: list[float] = []
        prev = 0
        for tok in tokens[1:]:
            key, sep, val = tok.partition(":")
            if not sep:
                raise LibsvmParseError(f"malformed token {tok!r} at line {lineno}")
            try:
                j = int(key)
                v = float(val)
            except ValueError:
                raise LibsvmParseError(f"non-numeric token {tok!r} at line {lineno}") from None
            if j < 1:
                raise LibsvmParseError(f"feature index {j} must be >= 1 at line {lineno}")
            if j == prev:
                raise LibsvmParseError(f"duplicate feature index {j} at line {lineno}")
            if j < prev:
                raise LibsvmParseError(f"non-increasing feature index {j} at line {lineno}")
            prev = j
            idxs.append(j)
            vals.append(v)
        max_idx = max(max_idx, prev)
        rows.append((idxs, vals))
    if not rows:
        raise LibsvmParseError("empty LIBSVM input")
    d = max_idx if n_features is None else int(n_features)
    if d < max_idx:
        raise LibsvmParseError(f"feature index {max_idx} exceeds declared dimension {d}")
    x = np.zeros((len(rows), d))
    for i, (idxs, vals) in enumerate(rows):
        if idxs:
            x[i, np.asarray(idxs) - 1] = vals
    distinct = sorted(set(raw_labels))
    remap = {lab: k for k, lab in enumerate(distinct)}
    labels = np.array([remap[lab] for lab in raw_labels], dtype=np.int64)
    label_map = tuple(int(v) if float(v).is_integer() else v for v in distinct)
    return LabeledDataset(x, labels, len(distinct), label_map)


def load_libsvm(path: str, n_features: Optional[int] = None) -> LabeledDataset:
    with open(path) as fh:
        return parse_libsvm(fh, n_features=n_features)


def serialize_libsvm(data: LabeledDataset) -> str:
    """Write ``data`` in LIBSVM format; zeros are omitted, floats use 17 significant digits."""
    out = []
    for row, lab in zip(data.features, data.labels):
        raw = data.label_map[lab] if data.label_map is not None else int(lab) + 1
        nz = np.flatnonzero(row)
        feats = " ".join(f"{j + 1}:{row[j]:.17g}" for j in nz)
        out.append(f"{raw} {feats}".rstrip())
    return "\n".join(out) + "\n"


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    def apply(self, features) -> np.ndarray:
        return (np.asarray(features, dtype=float) - self.mean) / self.scale


def standardize(data: LabeledDataset) -> tuple[LabeledDataset, Standardizer]:
    """Center every column and divide by its population standard deviation.

    Zero-variance columns are centered and keep scale 1.
    """
    if len(data) < 2:
        raise ValueError("standardize needs at least two rows")
    mean = data.features.mean(axis=0)
    scale = data.features.std(axis=0)
    scale = np.where(scale > 0.0, scale, 1.0)
    record = Standardizer(mean, scale)
    return (
        LabeledDataset(record.apply(data.features), data.labels, data.class_count, data.label_map),
        record,
    )


def split(data: LabeledDataset, plan: SplitPlan) -> list[LabeledDataset]:
    """Disjoint partitions in plan order from one seeded uniform shuffle."""
    if plan.total > len(data):
        raise ValueError(f"split plan needs {plan.total} rows but the dataset has {len(data)}")
    perm = np.random.default_rng(plan.seed).permutation(len(data))
    parts, start = [], 0
    for _, n in plan.sizes:
        parts.append(data.subset(np.sort(perm[start:start + n])))
        start += n
    return parts


def split_indices(n: int, plan: SplitPlan) -> list[np.ndarray]:
    if plan.total > n:
        raise ValueError(f"split plan needs {plan.total} rows but only {n} are available")
    perm = np.random.default_rng(plan.seed).permutation(n)
    out, start = [], 0
    for _, size in plan.sizes:
        out.append(np.sort(perm[start:start + size]))
        start += size
    return out
