"""Vulnerable-sample guided attack plus FGSM/PGD baselines.

The attack pairs every vulnerable negative sample (VNS: the automaton is right,
the classifier is wrong) with the nearest correctly classified sample of the
same class (TPS), walks from the TPS towards the VNS until just before the
prediction flips, then adds randomly masked noise along the same direction.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from . import iwfa as iwfa_mod
from . import rnn
from .data import Dataset, domain_ranges
from .errors import ConfigError, DatasetFormatError, DimensionError, EmptyDatasetError

log = logging.getLogger(__name__)

Classifier = Union[rnn.LstmParams, Callable[[np.ndarray], np.ndarray]]

CSV_FIXED = ["pair_id", "candidate_id", "true_label", "rnn_pred", "success"]


@dataclass
class AttackConfig:
    eps: float = 0.01
    P: float = 0.9
    n: int = 20
    mode: str = "standard"  # or "extended"
    target: Optional[int] = None
    seed: int = 0
    max_sampling_iters: int = 100
    interior_points: int = 9

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigError("eps must be > 0")
        if not 0 < self.P <= 1:
            raise ConfigError("P must lie in (0, 1]")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.mode not in ("standard", "extended"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.interior_points < 1 or self.max_sampling_iters < 1:
            raise ConfigError("interior_points and max_sampling_iters must be >= 1")


@dataclass
class VnsTpsPair:
    pair_id: int
    tps_index: int
    vns_index: Optional[int]
    true_class: int
    adversarial_class: Optional[int]
    boundary: Optional[np.ndarray] = None  # x_m
    lam: Optional[float] = None
    iterations: int = 0
    seconds: float = 0.0

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "boundary"}
        out["lam"] = None if self.lam is None else repr(float(self.lam))
        out["seconds"] = repr(float(self.seconds))
        return out


@dataclass
class Candidate:
    pair_id: int
    candidate_id: int
    values: np.ndarray  # (T, D)
    true_label: int
    rnn_pred: int
    mask: Optional[np.ndarray] = None  # (T,) bool, True where the noise row was kept
    draw_id: Optional[int] = None
    seconds: float = 0.0


@dataclass
class AdversarialBatch:
    method: str
    candidates: list = field(default_factory=list)
    pairs: list = field(default_factory=list)
    target: Optional[int] = None
    config: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    generation_seconds: float = 0.0

    def __len__(self):
        return len(self.candidates)

    def pair(self, pair_id: int) -> VnsTpsPair:
        return self._pair_index()[pair_id]

    def _pair_index(self) -> dict:
        return {p.pair_id: p for p in self.pairs}

    def successes(self) -> np.ndarray:
        pred = np.array([c.rnn_pred for c in self.candidates], dtype=int)
        if self.target is not None:
            return pred == self.target
        return pred != np.array([c.true_label for c in self.candidates], dtype=int)

    def values(self) -> np.ndarray:
        return np.stack([c.values for c in self.candidates])

    def source_indices(self) -> np.ndarray:
        index = self._pair_index()
        return np.array([index[c.pair_id].tps_index for c in self.candidates], dtype=int)

    def warn(self, message: str) -> None:
        log.warning(message)
        self.warnings.append(message)


class SamplingAborted(Exception):
    """Interpolation sampling could not bracket a decision boundary."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass
class SamplingResult:
    boundary: np.ndarray  # x_m, TPS side
    lam: float
    negative: np.ndarray  # x_neg, other side
    lam_negative: float
    negative_label: int
    iterations: int


def _predictor(model: Classifier) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(model, rnn.LstmParams):
        return partial(rnn.predict, model)
    return model


def feature_scale(d: Dataset) -> np.ndarray:
    """Per-feature width of the test split, the unit of every eps in this module."""
    return domain_ranges(d).feature_width


def capture_vns(p: rnn.LstmParams, a: iwfa_mod.IWfa, d: Dataset, target: Optional[int] = None,
                rnn_pred=None, wfa_pred=None) -> list[int]:
    rnn_pred = rnn.predict(p, d.X_test) if rnn_pred is None else np.asarray(rnn_pred)
    wfa_pred = iwfa_mod.predict_batch(a, d.X_test) if wfa_pred is None else np.asarray(wfa_pred)
    keep = (wfa_pred == d.y_test) & (rnn_pred != d.y_test)
    if target is not None:
        keep &= rnn_pred == target
    return [int(i) for i in np.flatnonzero(keep)]


def pick_tps(d: Dataset, p: Optional[rnn.LstmParams], vns: int, rnn_pred=None) -> Optional[int]:
    """Nearest (l2) correctly classified test sample sharing the VNS's true class; None if there is none."""
    rnn_pred = rnn.predict(p, d.X_test) if rnn_pred is None else np.asarray(rnn_pred)
    label = d.y_test[vns]
    eligible = np.flatnonzero((d.y_test == label) & (rnn_pred == d.y_test))
    if eligible.size == 0:
        return None
    diff = (d.X_test[eligible] - d.X_test[vns]).reshape(eligible.size, -1)
    return int(eligible[np.argmin(np.linalg.norm(diff, axis=1))])


def _segment_fits(lo_point: np.ndarray, hi_point: np.ndarray, eps_step: np.ndarray) -> bool:
    return bool(np.all(np.abs(hi_point - lo_point).max(axis=0) < eps_step))


def interpolation_sampling(model: Classifier, tps, vns, eps_step, interior_points: int = 9,
                           max_iters: int = 100, tps_label=None, vns_label=None) -> SamplingResult:
    """Shrink the TPS→VNS segment around its first prediction change until it is narrower than ``eps_step``.

    Every point is kept in the parametrisation ``tps + lam * (vns - tps)``.
    Raises :class:`SamplingAborted` when there is no boundary to find or the
    iteration budget runs out.
    """
    predict = _predictor(model)
    tps = np.atleast_1d(np.asarray(tps, dtype=float))
    vns = np.atleast_1d(np.asarray(vns, dtype=float))
    if tps.ndim == 1:
        tps, vns = tps[:, None], vns[:, None]
    if tps.shape != vns.shape:
        raise DimensionError("tps and vns must have the same shape")
    direction = vns - tps
    if not direction.any():
        raise ValueError("tps and vns coincide")
    eps_step = np.broadcast_to(np.asarray(eps_step, dtype=float), (tps.shape[1],))
    if tps_label is None or vns_label is None:
        tps_label, vns_label = (int(v) for v in predict(np.stack([tps, vns])))
    if tps_label == vns_label:
        raise SamplingAborted("no-boundary")
    eps_step = np.where(np.abs(direction).max(axis=0) == 0, np.inf, eps_step)  # flat features never block

    lo, hi, hi_label = 0.0, 1.0, int(vns_label)
    fractions = np.arange(interior_points + 2) / (interior_points + 1)
    iterations = 0
    while not _segment_fits(tps + lo * direction, tps + hi * direction, eps_step):
        if iterations >= max_iters:
            raise SamplingAborted("max-iterations")
        iterations += 1
        lams = lo + (hi - lo) * fractions
        lams[0], lams[-1] = lo, hi
        inner = predict(tps[None] + lams[1:-1, None, None] * direction[None])
        labels = np.concatenate([[tps_label], inner, [hi_label]])
        a = int(np.flatnonzero(labels[1:] != tps_label)[0])
        lo, hi, hi_label = lams[a], lams[a + 1], int(labels[a + 1])
    return SamplingResult(
        boundary=tps + lo * direction,
        lam=float(lo),
        negative=tps + hi * direction,
        lam_negative=float(hi),
        negative_label=hi_label,
        iterations=iterations,
    )


def noise_vector(direction, eps_step) -> np.ndarray:
    """Noise along ``direction`` whose largest magnitude per feature is ``eps_step``."""
    direction = np.asarray(direction, dtype=float)
    peak = np.abs(direction).max(axis=0)
    eps_step = np.broadcast_to(np.asarray(eps_step, dtype=float), peak.shape)
    scale = np.divide(eps_step, peak, out=np.zeros_like(peak), where=peak > 0)
    return direction * scale


def add_random_masking_noise(x_m, direction, eps_step, n: int, P: float, seed=None):
    """Return ``(candidates, masks)``; each time step keeps its noise row with probability P."""
    x_m = np.asarray(x_m, dtype=float)
    direction = np.asarray(direction, dtype=float)
    if x_m.ndim == 1:
        x_m, direction = x_m[:, None], direction[:, None]
    if not direction.any():
        raise ValueError("noise direction must be non-zero")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    v = noise_vector(direction, eps_step)
    shifted = x_m + v
    masks = rng.random((n, x_m.shape[0])) < P
    candidates = np.where(masks[:, :, None], shifted[None], x_m[None])
    return candidates, masks


def _emit(batch, pair, values, masks, p, true_label, seconds):
    preds = rnn.predict(p, values)
    per = seconds / len(values)
    for c, (x, m, y) in enumerate(zip(values, masks, preds)):
        batch.candidates.append(Candidate(pair.pair_id, c, x, true_label, int(y), m, c, per))


def _attack_pair(batch, pair_id, p, d, tps, vns, vns_pred, eps_step, cfg, n, rng_seed):
    start = time.perf_counter()
    tps_label = int(d.y_test[tps])
    try:
        res = interpolation_sampling(
            p, d.X_test[tps], d.X_test[vns], eps_step,
            interior_points=cfg.interior_points, max_iters=cfg.max_sampling_iters,
            tps_label=tps_label, vns_label=int(vns_pred),
        )
    except SamplingAborted as exc:
        batch.warn(f"pair tps={tps} vns={vns} skipped: {exc.reason}")
        return
    values, masks = add_random_masking_noise(
        res.boundary, d.X_test[vns] - d.X_test[tps], eps_step, n, cfg.P, np.random.default_rng(rng_seed)
    )
    pair = VnsTpsPair(pair_id, tps, vns, tps_label, int(vns_pred), res.boundary, res.lam, res.iterations)
    seconds = time.perf_counter() - start
    _emit(batch, pair, values, masks, p, tps_label, seconds)
    pair.seconds = time.perf_counter() - start
    batch.pairs.append(pair)


def _setup(p, a, d, cfg):
    if d.X_test.shape[0] == 0:
        raise EmptyDatasetError("attack needs a non-empty test split")
    if p.D != d.feature_dim or p.k != d.num_classes:
        raise ConfigError("model does not match the dataset's feature dimension or class count")
    if cfg.target is not None and not 0 <= cfg.target < d.num_classes:
        raise ConfigError(f"target class {cfg.target} outside [0, {d.num_classes})")
    eps_step = cfg.eps * feature_scale(d)
    rnn_pred = rnn.predict(p, d.X_test)
    vns = capture_vns(p, a, d, cfg.target, rnn_pred=rnn_pred)
    return eps_step, rnn_pred, vns


def _config_dict(cfg: AttackConfig) -> dict:
    return asdict(cfg)


def tsfool(p: rnn.LstmParams, a: iwfa_mod.IWfa, d: Dataset, cfg: AttackConfig = AttackConfig()) -> AdversarialBatch:
    """Standard mode: one TPS per captured VNS, ``cfg.n`` candidates per pair."""
    if cfg.mode == "extended":
        return tsfool_extended(p, a, d, cfg)
    started = time.perf_counter()
    batch = AdversarialBatch("tsfool", target=cfg.target, config=_config_dict(cfg))
    eps_step, rnn_pred, vns_list = _setup(p, a, d, cfg)
    if not vns_list:
        batch.warn("no vulnerable negative samples captured; batch is empty")
    for pair_id, vns in enumerate(vns_list):
        tps = pick_tps(d, None, vns, rnn_pred=rnn_pred)
        if tps is None:
            batch.warn(f"vns={vns} skipped: no correctly classified sample of class {d.y_test[vns]}")
            continue
        _attack_pair(batch, pair_id, p, d, tps, vns, rnn_pred[vns], eps_step, cfg, cfg.n, cfg.seed ^ pair_id)
    batch.generation_seconds = time.perf_counter() - started
    return batch


def tsfool_extended(p: rnn.LstmParams, a: iwfa_mod.IWfa, d: Dataset, cfg: AttackConfig = AttackConfig()) -> AdversarialBatch:
    """Every correctly classified test sample becomes a TPS for its nearest same-class VNS; one candidate each."""
    started = time.perf_counter()
    batch = AdversarialBatch("tsfool-ext", target=cfg.target, config={**_config_dict(cfg), "mode": "extended", "n": 1})
    eps_step, rnn_pred, vns_list = _setup(p, a, d, cfg)
    if not vns_list:
        batch.warn("no vulnerable negative samples captured; batch is empty")
        return batch
    vns_arr = np.array(vns_list)
    flat = d.X_test.reshape(d.X_test.shape[0], -1)
    pair_id = 0
    for tps in np.flatnonzero(rnn_pred == d.y_test):
        same = vns_arr[d.y_test[vns_arr] == d.y_test[tps]]
        if same.size == 0:
            continue
        vns = int(same[np.argmin(np.linalg.norm(flat[same] - flat[tps], axis=1))])
        _attack_pair(batch, pair_id, p, d, int(tps), vns, rnn_pred[vns], eps_step, cfg, 1, cfg.seed ^ pair_id)
        pair_id += 1
    batch.generation_seconds = time.perf_counter() - started
    return batch


# ---------------------------------------------------------------------------
# gradient baselines


def fgsm_batch(p: rnn.LstmParams, X, y, eps: float, scale=1.0, target: Optional[int] = None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    step = eps * np.asarray(scale, dtype=float)
    if target is None:
        return X + step * np.sign(rnn.input_gradients(p, X, y))
    return X - step * np.sign(rnn.input_gradients(p, X, target))


def fgsm(p: rnn.LstmParams, x, y: int, eps: float, scale=1.0, target: Optional[int] = None) -> np.ndarray:
    """One signed-gradient step of size ``eps * scale`` per feature (sign(0) = 0)."""
    return fgsm_batch(p, np.asarray(x, dtype=float)[None], [y], eps, scale, target)[0]


def pgd_batch(p: rnn.LstmParams, X, y, eps: float, eps_step: float, max_iter: int, scale=1.0,
              target: Optional[int] = None) -> np.ndarray:
    if eps_step > eps:
        raise ConfigError("eps_step must not exceed eps")
    if max_iter < 1:
        raise ConfigError("max_iter must be >= 1")
    X = np.asarray(X, dtype=float)
    radius = eps * np.asarray(scale, dtype=float)
    lower, upper = X - radius, X + radius
    adv = X
    for _ in range(max_iter):
        adv = np.clip(fgsm_batch(p, adv, y, eps_step, scale, target), lower, upper)
    return adv


def pgd(p: rnn.LstmParams, x, y: int, eps: float, eps_step: float, max_iter: int, scale=1.0,
        target: Optional[int] = None) -> np.ndarray:
    """Iterated FGSM steps, each projected onto the l∞ ball of radius ``eps * scale`` around ``x``."""
    return pgd_batch(p, np.asarray(x, dtype=float)[None], [y], eps, eps_step, max_iter, scale, target)[0]


def baseline_attack(p: rnn.LstmParams, d: Dataset, method: str, eps: float, eps_step: Optional[float] = None,
                    max_iter: int = 1, indices=None, target: Optional[int] = None) -> AdversarialBatch:
    """Run FGSM or PGD on the given test indices (all of them by default)."""
    if method not in ("fgsm", "pgd"):
        raise ConfigError(f"unknown baseline {method!r}")
    indices = np.arange(d.X_test.shape[0]) if indices is None else np.asarray(indices, dtype=int)
    scale = feature_scale(d)
    config = {"eps": eps, "eps_step": eps_step, "max_iter": max_iter, "target": target}
    batch = AdversarialBatch(method, target=target, config=config)
    if indices.size == 0:
        batch.warn("no source samples to attack; batch is empty")
        return batch
    X, y = d.X_test[indices], d.y_test[indices]
    start = time.perf_counter()
    if method == "fgsm":
        adv = fgsm_batch(p, X, y, eps, scale, target)
    else:
        adv = pgd_batch(p, X, y, eps, eps if eps_step is None else eps_step, max_iter, scale, target)
    preds = rnn.predict(p, adv)
    batch.generation_seconds = time.perf_counter() - start
    per = batch.generation_seconds / len(indices)
    for pair_id, (src, x, label, pred) in enumerate(zip(indices, adv, y, preds)):
        batch.pairs.append(VnsTpsPair(pair_id, int(src), None, int(label), None, seconds=per))
        batch.candidates.append(Candidate(pair_id, 0, x, int(label), int(pred), seconds=per))
    return batch


def tps_indices(p: rnn.LstmParams, a: iwfa_mod.IWfa, d: Dataset, target: Optional[int] = None) -> list[int]:
    """TPS set of the standard attack, used to restrict baselines to the same originals."""
    rnn_pred = rnn.predict(p, d.X_test)
    picked = (pick_tps(d, None, v, rnn_pred=rnn_pred) for v in capture_vns(p, a, d, target, rnn_pred=rnn_pred))
    return sorted({t for t in picked if t is not None})


# ---------------------------------------------------------------------------
# persistence


def _mask_str(mask) -> Optional[str]:
    return None if mask is None else "".join("1" if m else "0" for m in mask)


def write_batch(batch: AdversarialBatch, csv_path, sidecar_path=None, only_successful: bool = False,
                extra: Optional[dict] = None) -> None:
    csv_path = Path(csv_path)
    sidecar_path = Path(sidecar_path) if sidecar_path else csv_path.with_suffix(".json")
    success = batch.successes() if batch.candidates else np.zeros(0, bool)
    keep = [c for c, s in zip(batch.candidates, success) if s or not only_successful]
    T, D = (keep[0].values.shape if keep else (0, 0))
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIXED + [f"v{i}" for i in range(T * D)])
        for c, s in zip(batch.candidates, success):
            if only_successful and not s:
                continue
            w.writerow([c.pair_id, c.candidate_id, c.true_label, c.rnn_pred, int(bool(s))]
                       + [repr(float(v)) for v in c.values.ravel()])
    sidecar = {
        "method": batch.method,
        "target": batch.target,
        "config": batch.config,
        "seed": batch.config.get("seed"),
        "shape": [T, D],
        "export": "successful" if only_successful else "all",
        "generation_seconds": repr(float(batch.generation_seconds)),
        "warnings": batch.warnings,
        "pairs": [p.to_dict() for p in batch.pairs],
        "candidates": [
            {"pair_id": c.pair_id, "candidate_id": c.candidate_id, "mask": _mask_str(c.mask),
             "draw_id": c.draw_id, "seconds": repr(float(c.seconds))}
            for c in keep
        ],
    }
    if extra:
        sidecar.update(extra)
    sidecar_path.write_text(json.dumps(sidecar, indent=1))


def read_batch(csv_path, sidecar_path=None) -> AdversarialBatch:
    csv_path = Path(csv_path)
    sidecar_path = Path(sidecar_path) if sidecar_path else csv_path.with_suffix(".json")
    try:
        meta = json.loads(sidecar_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"{sidecar_path}: unreadable batch sidecar ({exc})") from None
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise EmptyDatasetError(f"{csv_path}: empty batch file")
    header = rows[0]
    if header[:len(CSV_FIXED)] != CSV_FIXED:
        raise DatasetFormatError(f"{csv_path}: expected columns {CSV_FIXED}, got {header[:len(CSV_FIXED)]}")
    T, D = meta["shape"]
    if len(header) - len(CSV_FIXED) != T * D:
        raise DatasetFormatError(f"{csv_path}: {len(header) - len(CSV_FIXED)} value columns, sidecar says {T}x{D}")
    info = {(c["pair_id"], c["candidate_id"]): c for c in meta["candidates"]}
    batch = AdversarialBatch(meta["method"], target=meta["target"], config=meta["config"],
                             warnings=list(meta["warnings"]), generation_seconds=float(meta["generation_seconds"]))
    for p in meta["pairs"]:
        batch.pairs.append(VnsTpsPair(
            p["pair_id"], p["tps_index"], p["vns_index"], p["true_class"], p["adversarial_class"],
            lam=None if p["lam"] is None else float(p["lam"]), iterations=p["iterations"], seconds=float(p["seconds"]),
        ))
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DatasetFormatError(f"{csv_path}:{lineno}: expected {len(header)} columns, got {len(row)}")
        try:
            pair_id, cand_id, label, pred = (int(v) for v in row[:4])
            values = np.array([float(v) for v in row[len(CSV_FIXED):]]).reshape(T, D)
        except ValueError:
            raise DatasetFormatError(f"{csv_path}:{lineno}: non-numeric field") from None
        c = info.get((pair_id, cand_id), {})
        mask = c.get("mask")
        batch.candidates.append(Candidate(
            pair_id, cand_id, values, label, pred,
            mask=None if mask is None else np.array([ch == "1" for ch in mask]),
            draw_id=c.get("draw_id"), seconds=float(c.get("seconds", "0.0")),
        ))
    if not batch.candidates:
        raise EmptyDatasetError(f"{csv_path}: batch has no candidates")
    return batch
