"""UCR-style dataset ingestion, min-max normalization and domain ranges.

Files hold one series per line, ``label<TAB>v1<TAB>...<TAB>vT`` (commas are
accepted too). Multivariate files declare ``#D=<int>`` in a header line and
interleave the D features of each time step.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DataError, DatasetFormatError, DimensionError, EmptyDatasetError

_DIRECTIVE = re.compile(r"^#\s*D\s*=\s*(\d+)\s*$")
_SPLIT_SUFFIXES = ("_TRAIN", "_TEST")
_EXTENSIONS = (".tsv", ".txt", ".csv", "")


@dataclass(frozen=True)
class TimeSeries:
    values: np.ndarray  # (T, D)
    label: int

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise DimensionError(f"series must be T x D with T, D >= 1, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError("series contains NaN or Inf")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "label", int(self.label))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def D(self) -> int:
        return self.values.shape[1]


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Dataset:
    """Train/test splits stored as ``(N, T, D)`` arrays with contiguous labels.

    ``label_names[c]`` is the label of class ``c`` as written in the source
    file (UCR labels are sometimes ``{-1, 1}``).
    """

    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    num_classes: int
    label_names: tuple = ()
    name: str = "dataset"

    def __post_init__(self):
        Xtr, Xte = _frozen(self.X_train), _frozen(self.X_test)
        ytr, yte = _frozen(self.y_train, int), _frozen(self.y_test, int)
        for X, y, split in ((Xtr, ytr, "train"), (Xte, yte, "test")):
            if X.ndim != 3:
                raise DimensionError(f"{split} split must be (N, T, D), got {X.shape}")
            if X.shape[0] != y.shape[0]:
                raise DimensionError(f"{split} split has {X.shape[0]} series but {y.shape[0]} labels")
            if not np.all(np.isfinite(X)):
                raise DataError(f"{split} split contains NaN or Inf")
            if y.size and (y.min() < 0 or y.max() >= self.num_classes):
                raise DataError(f"{split} labels outside [0, {self.num_classes})")
        if Xtr.shape[0] == 0 and Xte.shape[0] == 0:
            raise EmptyDatasetError("dataset has no series")
        if Xtr.shape[0] and Xte.shape[0] and Xtr.shape[1:] != Xte.shape[1:]:
            raise DimensionError(f"train series are {Xtr.shape[1:]} but test series are {Xte.shape[1:]}")
        if Xtr.shape[0]:
            missing = sorted(set(range(self.num_classes)) - set(ytr.tolist()))
            if missing:
                raise DataError(f"classes {missing} never appear in the train split")
        names = tuple(self.label_names) or tuple(str(c) for c in range(self.num_classes))
        if len(names) != self.num_classes:
            raise DataError("label_names must have one entry per class")
        object.__setattr__(self, "X_train", Xtr)
        object.__setattr__(self, "X_test", Xte)
        object.__setattr__(self, "y_train", ytr)
        object.__setattr__(self, "y_test", yte)
        object.__setattr__(self, "label_names", names)

    @property
    def series_length(self) -> int:
        return (self.X_train if self.X_train.shape[0] else self.X_test).shape[1]

    @property
    def feature_dim(self) -> int:
        return (self.X_train if self.X_train.shape[0] else self.X_test).shape[2]

    T = series_length
    D = feature_dim

    @cached_property
    def train(self) -> list[TimeSeries]:
        return [TimeSeries(x, y) for x, y in zip(self.X_train, self.y_train)]

    @cached_property
    def test(self) -> list[TimeSeries]:
        return [TimeSeries(x, y) for x, y in zip(self.X_test, self.y_test)]

    def replace(self, **changes) -> "Dataset":
        fields = dict(
            X_train=self.X_train, y_train=self.y_train, X_test=self.X_test, y_test=self.y_test,
            num_classes=self.num_classes, label_names=self.label_names, name=self.name,
        )
        fields.update(changes)
        return Dataset(**fields)

    def describe(self) -> dict:
        return {
            "name": self.name,
            "k": self.num_classes,
            "T": self.series_length,
            "D": self.feature_dim,
            "n_train": int(self.X_train.shape[0]),
            "n_test": int(self.X_test.shape[0]),
        }


@dataclass(frozen=True)
class NormalizationStats:
    offset: np.ndarray  # (D,)
    scale: np.ndarray  # (D,), strictly positive
    degenerate: np.ndarray = field(default=None)  # (D,) bool, True where max == min

    def __post_init__(self):
        offset, scale = _frozen(self.offset), _frozen(self.scale)
        if np.any(scale <= 0):
            raise DataError("normalization scale must be positive")
        deg = np.zeros(offset.shape, bool) if self.degenerate is None else self.degenerate
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "degenerate", _frozen(deg, bool))

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.offset) / self.scale

    def invert(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) * self.scale + self.offset

    def to_dict(self) -> dict:
        return {
            "offset": [repr(float(v)) for v in self.offset],
            "scale": [repr(float(v)) for v in self.scale],
            "degenerate": [bool(v) for v in self.degenerate],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "NormalizationStats":
        return cls(
            offset=[float(v) for v in obj["offset"]],
            scale=[float(v) for v in obj["scale"]],
            degenerate=obj.get("degenerate"),
        )


@dataclass(frozen=True)
class DomainRanges:
    """Per-step and per-feature extrema of the test split."""

    step_min: np.ndarray  # (T, D)
    step_max: np.ndarray  # (T, D)
    feature_min: np.ndarray  # (D,)
    feature_max: np.ndarray  # (D,)

    @property
    def per_step_range(self) -> list[list[tuple[float, float]]]:
        return [
            [(float(lo), float(hi)) for lo, hi in zip(lo_row, hi_row)]
            for lo_row, hi_row in zip(self.step_min, self.step_max)
        ]

    @property
    def per_feature_range(self) -> list[tuple[float, float]]:
        return [(float(lo), float(hi)) for lo, hi in zip(self.feature_min, self.feature_max)]

    @property
    def step_width(self) -> np.ndarray:
        return self.step_max - self.step_min

    @property
    def feature_width(self) -> np.ndarray:
        return self.feature_max - self.feature_min


# ---------------------------------------------------------------------------
# parsing


def _parse_number(token: str, path, lineno: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise DatasetFormatError(f"{path}:{lineno}: non-numeric token {token!r}") from None


def _label_key(raw: float):
    return int(raw) if float(raw).is_integer() else raw


def read_split(path) -> tuple[list, np.ndarray]:
    """Parse one UCR file into ``(raw_labels, X)`` with ``X`` of shape (N, T, D)."""
    path = Path(path)
    D = 1
    labels, rows, width, first_line = [], [], None, None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                m = _DIRECTIVE.match(line)
                if m:
                    if rows:
                        raise DatasetFormatError(f"{path}:{lineno}: #D directive must precede the data")
                    D = int(m.group(1))
                    if D < 1:
                        raise DatasetFormatError(f"{path}:{lineno}: D must be >= 1")
                continue
            tokens = [t.strip() for t in (line.split("\t") if "\t" in line else line.split(","))]
            tokens = [t for t in tokens if t]
            if len(tokens) < 2:
                raise DatasetFormatError(f"{path}:{lineno}: row has a label but no values")
            if width is None:
                width, first_line = len(tokens), lineno
            elif len(tokens) != width:
                raise DatasetFormatError(
                    f"{path}:{lineno}: ragged row with {len(tokens) - 1} values, "
                    f"line {first_line} has {width - 1}"
                )
            values = [_parse_number(t, path, lineno) for t in tokens]
            if not all(math.isfinite(v) for v in values):
                raise DatasetFormatError(f"{path}:{lineno}: NaN or Inf value")
            labels.append(_label_key(values[0]))
            rows.append(values[1:])
    if not rows:
        raise EmptyDatasetError(f"{path}: no series found")
    n_values = width - 1
    if n_values % D:
        raise DatasetFormatError(f"{path}: {n_values} values per row is not a multiple of D={D}")
    X = np.asarray(rows, dtype=float).reshape(len(rows), n_values // D, D)
    return labels, X


def _find_splits(path: Path) -> tuple[Path, Path, str]:
    if path.is_dir():
        found = {}
        for suffix in _SPLIT_SUFFIXES:
            hits = sorted(p for p in path.iterdir() if p.is_file() and p.stem.endswith(suffix))
            if not hits:
                raise DataError(f"{path}: no *{suffix} file")
            found[suffix] = hits[0]
        name = found["_TRAIN"].stem[: -len("_TRAIN")]
        return found["_TRAIN"], found["_TEST"], name
    if not path.exists():
        raise DataError(f"{path}: no such file")
    for suffix, other in (("_TRAIN", "_TEST"), ("_TEST", "_TRAIN")):
        if path.stem.endswith(suffix):
            base = path.stem[: -len(suffix)]
            for ext in (path.suffix,) + _EXTENSIONS:
                sibling = path.with_name(base + other + ext)
                if sibling.exists():
                    pair = (path, sibling) if suffix == "_TRAIN" else (sibling, path)
                    return pair[0], pair[1], base
            raise DataError(f"{path}: sibling {base}{other} file not found")
    return path, path, path.stem


def load_dataset(path, format: str = "ucr-tsv") -> Dataset:
    """Load a dataset from a UCR directory, one of its split files, or a lone file.

    A lone file (no ``_TRAIN``/``_TEST`` suffix) serves as both splits.
    """
    if format != "ucr-tsv":
        raise DataError(f"unsupported dataset format {format!r}")
    train_path, test_path, name = _find_splits(Path(path))
    raw_train, X_train = read_split(train_path)
    raw_test, X_test = (raw_train, X_train) if test_path == train_path else read_split(test_path)
    if X_train.shape[1:] != X_test.shape[1:]:
        raise DatasetFormatError(
            f"train series are {X_train.shape[1:]} but test series are {X_test.shape[1:]} (T, D)"
        )
    classes = sorted(set(raw_train) | set(raw_test))
    index = {c: i for i, c in enumerate(classes)}
    return Dataset(
        X_train=X_train,
        y_train=np.array([index[c] for c in raw_train]),
        X_test=X_test,
        y_test=np.array([index[c] for c in raw_test]),
        num_classes=len(classes),
        label_names=tuple(str(c) for c in classes),
        name=name,
    )


def _write_split(path: Path, X: np.ndarray, y: np.ndarray, names) -> None:
    N, T, D = X.shape
    with open(path, "w") as fh:
        if D > 1:
            fh.write(f"#D={D}\n")
        for x, label in zip(X.reshape(N, T * D), y):
            fh.write("\t".join([names[label]] + [repr(float(v)) for v in x]) + "\n")


def save_dataset(d: Dataset, directory) -> Path:
    """Write ``<name>_TRAIN.tsv`` and ``<name>_TEST.tsv`` under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _write_split(directory / f"{d.name}_TRAIN.tsv", d.X_train, d.y_train, d.label_names)
    _write_split(directory / f"{d.name}_TEST.tsv", d.X_test, d.y_test, d.label_names)
    return directory


# ---------------------------------------------------------------------------
# statistics


def fit_normalization(d: Dataset) -> NormalizationStats:
    X = np.concatenate([d.X_train, d.X_test]).reshape(-1, d.feature_dim)
    lo, hi = X.min(axis=0), X.max(axis=0)
    degenerate = hi == lo
    return NormalizationStats(offset=lo, scale=np.where(degenerate, 1.0, hi - lo), degenerate=degenerate)


def normalize(d: Dataset) -> tuple[Dataset, NormalizationStats]:
    """Min-max scale every feature to [0, 1] using train and test together."""
    stats = fit_normalization(d)
    return d.replace(X_train=stats.apply(d.X_train), X_test=stats.apply(d.X_test)), stats


def domain_ranges(d: Dataset) -> DomainRanges:
    if d.X_test.shape[0] == 0:
        raise EmptyDatasetError("domain ranges need a non-empty test split")
    X = d.X_test
    return DomainRanges(
        step_min=X.min(axis=0),
        step_max=X.max(axis=0),
        feature_min=X.min(axis=(0, 1)),
        feature_max=X.max(axis=(0, 1)),
    )


def class_subset(d: Dataset, label: int, split: str = "test") -> np.ndarray:
    X, y = (d.X_test, d.y_test) if split == "test" else (d.X_train, d.y_train)
    return X[y == label]
