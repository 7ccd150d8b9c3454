"""Attack-quality metrics: success rate, perturbation ratios, camouflage coefficient and DTW."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .attack import AdversarialBatch
from .data import Dataset, DomainRanges, domain_ranges
from .errors import ConfigError, DataError, DatasetFormatError, DimensionError, UndefinedMetricError

NORMS = ("l1", "l2", "linf")
SUMMARY_COLUMNS = ["dataset", "method", "asr", "n", "time_s", "rho", "rho_star", "cc", "dtw", "norm", "scope", "seed"]


def vector_norm(v, norm: str = "l2") -> float:
    v = np.asarray(v, dtype=float).ravel()
    if norm == "l1":
        return float(np.abs(v).sum())
    if norm == "l2":
        return float(np.linalg.norm(v))
    if norm == "linf":
        return float(np.abs(v).max()) if v.size else 0.0
    raise ConfigError(f"unknown norm {norm!r}; choose from {NORMS}")


@dataclass(frozen=True)
class ClassStats:
    centers: np.ndarray  # (k, T, D)
    radii: np.ndarray  # (k,) mean l2 distance of members to their center


def class_stats(d: Dataset, split: str = "test") -> ClassStats:
    X, y = (d.X_test, d.y_test) if split == "test" else (d.X_train, d.y_train)
    centers, radii = [], []
    for c in range(d.num_classes):
        members = X[y == c]
        if members.shape[0] == 0:
            raise DataError(f"class {c} has no {split} samples; its center is undefined")
        m = members.mean(axis=0)
        centers.append(m)
        radii.append(np.linalg.norm((members - m).reshape(members.shape[0], -1), axis=1).mean())
    return ClassStats(np.stack(centers), np.array(radii))


def camouflage_coefficient(x, true_class: int, adv_class: int, stats: ClassStats) -> float:
    """Relative closeness to the true class versus the adversarial class; below 1 means better hidden."""
    if true_class == adv_class:
        raise ValueError("camouflage is undefined when the adversarial class equals the true class")
    ri, rj = stats.radii[true_class], stats.radii[adv_class]
    if ri == 0 or rj == 0:
        raise UndefinedMetricError(f"class radius is zero (classes {true_class}, {adv_class})")
    x = np.asarray(x, dtype=float)
    di = np.linalg.norm((x - stats.centers[true_class]).ravel()) / ri
    dj = np.linalg.norm((x - stats.centers[adv_class]).ravel()) / rj
    if dj == 0:
        return math.inf
    return float(di / dj)


def perturbation_ratio(x, x_adv, norm: str = "l2") -> float:
    base = vector_norm(x, norm)
    if base == 0:
        raise UndefinedMetricError("perturbation ratio is undefined for an all-zero original")
    return vector_norm(np.asarray(x_adv, dtype=float) - np.asarray(x, dtype=float), norm) / base


def domain_perturbation_ratio(x, x_adv, ranges: DomainRanges, norm: str = "l2") -> float:
    """Perturbation size relative to the summed per-step width of the value domain."""
    denom = sum(vector_norm(w, norm) for w in ranges.step_width)
    if denom == 0:
        raise UndefinedMetricError("value domain has zero width at every step")
    return vector_norm(np.asarray(x_adv, dtype=float) - np.asarray(x, dtype=float), norm) / denom


def dtw(a, b, point_dist: str = "l2") -> tuple[float, list[tuple[int, int]]]:
    """Dynamic time warping between equal-length series. Returns ``(distance, path)``.

    The path runs from (0, 0) to (T1-1, T2-1); ties between predecessors prefer
    the diagonal, then (i, j-1), then (i-1, j).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape != b.shape:
        raise DimensionError(f"dtw needs equal shapes, got {a.shape} and {b.shape}")
    n, m = a.shape[0], b.shape[0]
    if n == 0:
        raise DimensionError("dtw needs non-empty series")
    diff = a[:, None, :] - b[None, :, :]
    if point_dist == "l1":
        cost = np.abs(diff).sum(axis=2)
    elif point_dist == "l2":
        cost = np.linalg.norm(diff, axis=2)
    else:
        raise ConfigError(f"unknown point distance {point_dist!r}; choose l1 or l2")
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        prev, row, c = acc[i - 1], acc[i], cost[i - 1]
        for j in range(1, m + 1):
            row[j] = c[j - 1] + min(prev[j - 1], row[j - 1], prev[j])
    path = [(n - 1, m - 1)]
    i, j = n, m
    while (i, j) != (1, 1):
        options = ((acc[i - 1, j - 1], i - 1, j - 1), (acc[i, j - 1], i, j - 1), (acc[i - 1, j], i - 1, j))
        best = min(o[0] for o in options)
        _, i, j = next(o for o in options if o[0] == best)
        path.append((i - 1, j - 1))
    path.reverse()
    return float(acc[n, m]), path


def dtw_distance(a, b, point_dist: str = "l2") -> float:
    return dtw(a, b, point_dist)[0]


def attack_success_rate(batch: AdversarialBatch, p=None) -> float:
    """Fraction of candidates the classifier gets wrong (or assigns to the target class)."""
    if not batch.candidates:
        raise UndefinedMetricError("success rate of an empty batch is undefined")
    if p is None:
        return float(batch.successes().mean())
    from . import rnn

    pred = rnn.predict(p, batch.values())
    if batch.target is not None:
        return float(np.mean(pred == batch.target))
    return float(np.mean(pred != np.array([c.true_label for c in batch.candidates])))


@dataclass
class AttackReport:
    dataset: str
    method: str
    asr: Optional[float]
    generated: int
    n_successful: int
    mean_time_per_sample: float
    rho: Optional[float]
    rho_star: Optional[float]
    cc: Optional[float]
    dtw: Optional[float]
    norm: str = "l2"
    scope: str = "tps"
    seed: Optional[int] = None
    target: Optional[int] = None
    dtw_point_dist: str = "l2"
    averaged_over: str = "successful"
    cc_infinite: int = 0
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "AttackReport":
        return cls(**obj)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, allow_nan=False))

    @classmethod
    def load(cls, path) -> "AttackReport":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (json.JSONDecodeError, TypeError) as exc:
            raise DatasetFormatError(f"{path}: not an attack report ({exc})") from None

    def summary_row(self) -> list:
        return [self.dataset, self.method, self.asr, self.generated, self.mean_time_per_sample,
                self.rho, self.rho_star, self.cc, self.dtw, self.norm, self.scope, self.seed]

    def close_to(self, other: "AttackReport", tol: float = 1e-9) -> bool:
        for key, mine in self.to_dict().items():
            theirs = getattr(other, key)
            if key in ("mean_time_per_sample", "warnings"):
                continue
            if isinstance(mine, float) and isinstance(theirs, float):
                if not math.isclose(mine, theirs, rel_tol=tol, abs_tol=tol):
                    return False
            elif mine != theirs:
                return False
        return True


def append_summary(report: AttackReport, path) -> None:
    path = Path(path)
    fresh = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if fresh:
            w.writerow(SUMMARY_COLUMNS)
        w.writerow(["" if v is None else v for v in report.summary_row()])


def _mean(values) -> Optional[float]:
    return float(np.mean(values)) if values else None


def build_report(batch: AdversarialBatch, d: Dataset, norm: str = "l2", scope: str = "tps",
                 stats: Optional[ClassStats] = None, ranges: Optional[DomainRanges] = None,
                 seed: Optional[int] = None, point_dist: str = "l2") -> AttackReport:
    """Average every metric over the successful candidates of ``batch``.

    Originals are the test samples each candidate was derived from. ``scope``
    only labels which originals the batch covered and is recorded as given.
    """
    if norm not in NORMS:
        raise ConfigError(f"unknown norm {norm!r}; choose from {NORMS}")
    if scope not in ("tps", "all"):
        raise ConfigError(f"unknown scope {scope!r}")
    n = len(batch)
    report = AttackReport(
        dataset=d.name, method=batch.method, asr=None, generated=n, n_successful=0,
        mean_time_per_sample=float(np.mean([c.seconds for c in batch.candidates])) if n else 0.0,
        rho=None, rho_star=None, cc=None, dtw=None, norm=norm, scope=scope, dtw_point_dist=point_dist,
        seed=seed if seed is not None else batch.config.get("seed"), target=batch.target,
        warnings=list(batch.warnings),
    )
    if n == 0:
        report.warnings.append("empty batch: every metric is undefined")
        return report
    success = batch.successes()
    report.asr = float(success.mean())
    report.n_successful = int(success.sum())
    stats = stats or class_stats(d)
    ranges = ranges or domain_ranges(d)
    sources = batch.source_indices()
    rho, rho_star, cc, warp = [], [], [], []
    for c, src, ok in zip(batch.candidates, sources, success):
        if not ok:
            continue
        x = d.X_test[src]
        rho.append(perturbation_ratio(x, c.values, norm))
        rho_star.append(domain_perturbation_ratio(x, c.values, ranges, norm))
        value = camouflage_coefficient(c.values, c.true_label, c.rnn_pred, stats)
        if math.isinf(value):
            report.cc_infinite += 1
        else:
            cc.append(value)
        warp.append(dtw_distance(x, c.values, point_dist))
    report.rho, report.rho_star, report.cc, report.dtw = _mean(rho), _mean(rho_star), _mean(cc), _mean(warp)
    if report.n_successful == 0:
        report.warnings.append("no successful candidates: averaged metrics are null")
    return report
