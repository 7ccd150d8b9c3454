"""Intervalized weighted finite automaton (i-WFA) extracted from an LSTM.

Inputs are abstracted by snapping each normalized feature to a bin of width
``interval_width``; hidden states are abstracted by the top-K labels of the
per-step softmax output and their confidences quantized to ``T_res`` levels.
Executing the automaton left-multiplies a one-hot state vector by one transfer
matrix per time step and finally by the output matrix.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import rnn
from .data import Dataset, NormalizationStats, TimeSeries, fit_normalization
from .errors import ConfigError, DataError, DimensionError, EmptyDatasetError

FORMAT = "tsfool-iwfa"
VERSION = 1


@dataclass(frozen=True)
class ExtractionConfig:
    K: int = 2
    T_res: int = 10
    F: float = 10.0

    def validate(self, num_classes: int) -> None:
        if not 1 <= self.K <= num_classes:
            raise ConfigError(f"K must lie in [1, {num_classes}], got {self.K}")
        if self.T_res < 1:
            raise ConfigError("T_res must be >= 1")
        if not self.F > 1:
            raise ConfigError("F must be > 1")


@dataclass(frozen=True, order=True)
class AbstractState:
    top_labels: tuple
    quant_conf: tuple

    def to_dict(self) -> dict:
        return {"labels": list(self.top_labels), "conf": list(self.quant_conf)}


def abstract_state(probs: np.ndarray, K: int, T_res: int) -> AbstractState:
    """Top-K labels by descending confidence (ties to the smaller label), confidences floored to T_res levels."""
    order = np.argsort(-probs, kind="stable")[:K]
    conf = np.floor(probs[order] * T_res).astype(int)
    return AbstractState(tuple(int(c) for c in order), tuple(int(q) for q in np.clip(conf, 0, T_res)))


def interval_indices(Xn: np.ndarray, width: float) -> np.ndarray:
    """Bin index of every normalized feature value (same shape, int64)."""
    return np.floor(np.asarray(Xn) / width).astype(np.int64)


def imperceptible_distance(d: Dataset, F: float, stats: Optional[NormalizationStats] = None) -> float:
    """Mean l2 distance between consecutive normalized feature vectors of the test split, over F."""
    if d.X_test.shape[0] == 0:
        raise EmptyDatasetError("imperceptible distance needs a non-empty test split")
    if d.series_length < 2:
        raise DimensionError("imperceptible distance is undefined for series of length 1")
    stats = stats or fit_normalization(d)
    Xn = stats.apply(d.X_test)
    steps = np.linalg.norm(np.diff(Xn, axis=1), axis=2)
    return float(steps.mean() / F)


@dataclass
class IWfa:
    """States list slot 0 is the initial pseudo-state (``None``)."""

    interval_width: float
    normalization: NormalizationStats
    states: list
    init_vector: np.ndarray
    transfer: dict  # interval tuple -> (|S|, |S|) matrix
    output: np.ndarray  # (|S|, k)
    num_classes: int
    config: ExtractionConfig = field(default_factory=ExtractionConfig)
    fallback: str = "nearest"

    def __post_init__(self):
        self.init_vector = np.asarray(self.init_vector, dtype=float)
        self.output = np.asarray(self.output, dtype=float)
        self.transfer = {tuple(int(i) for i in key): np.asarray(m, dtype=float) for key, m in self.transfer.items()}
        self._keys = sorted(self.transfer)
        self._flat_keys = [k[0] for k in self._keys] if self._keys and len(self._keys[0]) == 1 else None

    @property
    def intervals(self) -> list:
        return list(self._keys)

    @property
    def num_states(self) -> int:
        return len(self.states)

    def resolve(self, key: tuple) -> tuple:
        """Map an interval to itself if seen, else to the nearest seen interval (ties to the smaller)."""
        if key in self.transfer:
            return key
        if not self._keys:
            raise DataError("automaton has no intervals")
        if self._flat_keys is not None:
            v = key[0]
            pos = bisect_left(self._flat_keys, v)
            lo = self._flat_keys[pos - 1] if pos > 0 else None
            hi = self._flat_keys[pos] if pos < len(self._flat_keys) else None
            if hi is None or (lo is not None and v - lo <= hi - v):
                return (lo,)
            return (hi,)
        dist = [sum(abs(a - b) for a, b in zip(k, key)) for k in self._keys]
        return self._keys[int(np.argmin(dist))]

    def interval_path(self, x) -> list:
        values = x.values if isinstance(x, TimeSeries) else np.asarray(x, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[1] != self.normalization.offset.shape[0]:
            raise DimensionError(f"expected {self.normalization.offset.shape[0]} features, got {values.shape[1]}")
        idx = interval_indices(self.normalization.apply(values), self.interval_width)
        return [tuple(int(i) for i in row) for row in idx]

    def run_path(self, keys) -> tuple[np.ndarray, bool]:
        """Execute over a sequence of intervals. Returns ``(probs, dead_path)``."""
        v = self.init_vector
        for key in keys:
            v = v @ self.transfer[self.resolve(tuple(key))]
            if not v.any():
                return np.full(self.num_classes, 1.0 / self.num_classes), True
        out = v @ self.output
        total = out.sum()
        if total <= 0:
            return np.full(self.num_classes, 1.0 / self.num_classes), True
        # mass lost on zero rows of partially visited states is renormalized away
        return (out if total == 1.0 else out / total), False

    def run(self, x) -> tuple[np.ndarray, bool]:
        return self.run_path(self.interval_path(x))

    def to_dict(self) -> dict:
        def sparse(m):
            rows = []
            for r, row in enumerate(m):
                nz = np.flatnonzero(row)
                if nz.size:
                    rows.append([r, [[int(c), repr(float(row[c]))] for c in nz]])
            return rows

        return {
            "format": FORMAT,
            "version": VERSION,
            "interval_width": repr(float(self.interval_width)),
            "num_classes": self.num_classes,
            "config": {"K": self.config.K, "T_res": self.config.T_res, "F": repr(float(self.config.F))},
            "fallback": self.fallback,
            "normalization": self.normalization.to_dict(),
            "states": [None if s is None else s.to_dict() for s in self.states],
            "init": [repr(float(v)) for v in self.init_vector],
            "transfer": [{"interval": list(k), "rows": sparse(self.transfer[k])} for k in self._keys],
            "output": [[repr(float(v)) for v in row] for row in self.output],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "IWfa":
        if obj.get("format") != FORMAT:
            raise DataError("not an i-WFA document")
        if obj.get("version") != VERSION:
            raise DataError(f"unsupported i-WFA version {obj.get('version')}")
        n = len(obj["states"])
        transfer = {}
        for entry in obj["transfer"]:
            m = np.zeros((n, n))
            for r, cols in entry["rows"]:
                for c, w in cols:
                    m[r, c] = float(w)
            transfer[tuple(entry["interval"])] = m
        cfg = obj["config"]
        return cls(
            interval_width=float(obj["interval_width"]),
            normalization=NormalizationStats.from_dict(obj["normalization"]),
            states=[None if s is None else AbstractState(tuple(s["labels"]), tuple(s["conf"])) for s in obj["states"]],
            init_vector=[float(v) for v in obj["init"]],
            transfer=transfer,
            output=[[float(v) for v in row] for row in obj["output"]],
            num_classes=int(obj["num_classes"]),
            config=ExtractionConfig(int(cfg["K"]), int(cfg["T_res"]), float(cfg["F"])),
            fallback=obj.get("fallback", "nearest"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "IWfa":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(obj)


def _row_normalize(m: np.ndarray) -> np.ndarray:
    sums = m.sum(axis=1, keepdims=True)
    return np.divide(m, sums, out=np.zeros_like(m), where=sums != 0)


def extract(p: rnn.LstmParams, d: Dataset, cfg: ExtractionConfig = ExtractionConfig()) -> IWfa:
    """Build the automaton from the classifier's behaviour on the test split."""
    if d.X_test.shape[0] == 0:
        raise EmptyDatasetError("extraction needs a non-empty test split")
    cfg.validate(d.num_classes)
    stats = fit_normalization(d)
    width = imperceptible_distance(d, cfg.F, stats)
    if not width > 0:
        width = 1.0 / (cfg.F * cfg.T_res)
    keys = interval_indices(stats.apply(d.X_test), width)

    _, step_out = rnn.forward_batch(p, d.X_test)
    final_pred = np.argmax(step_out[:, -1], axis=1)

    states: list = [None]
    index: dict = {}
    seq = np.zeros((d.X_test.shape[0], d.series_length + 1), dtype=int)
    for n in range(step_out.shape[0]):
        for t in range(step_out.shape[1]):
            s = abstract_state(step_out[n, t], cfg.K, cfg.T_res)
            if s not in index:
                index[s] = len(states)
                states.append(s)
            seq[n, t + 1] = index[s]

    S = len(states)
    counts: dict = {}
    out_counts = np.zeros((S, d.num_classes))
    for n in range(seq.shape[0]):
        np.add.at(out_counts, (seq[n], final_pred[n]), 1.0)
        for t in range(seq.shape[1] - 1):
            key = tuple(int(v) for v in keys[n, t])
            m = counts.get(key)
            if m is None:
                m = counts[key] = np.zeros((S, S))
            m[seq[n, t], seq[n, t + 1]] += 1.0

    init = np.zeros(S)
    init[0] = 1.0
    return IWfa(
        interval_width=width,
        normalization=stats,
        states=states,
        init_vector=init,
        transfer={k: _row_normalize(m) for k, m in counts.items()},
        output=_row_normalize(out_counts),
        num_classes=d.num_classes,
        config=cfg,
    )


def execute(a: IWfa, x) -> np.ndarray:
    return a.run(x)[0]


def predict(a: IWfa, x) -> int:
    return int(np.argmax(execute(a, x)))


def predict_batch(a: IWfa, X) -> np.ndarray:
    return np.array([predict(a, x) for x in np.asarray(X, dtype=float)], dtype=int)


def fidelity(a: IWfa, p: rnn.LstmParams, X) -> float:
    """Fraction of series on which automaton and classifier agree."""
    return float(np.mean(predict_batch(a, X) == rnn.predict(p, X)))
