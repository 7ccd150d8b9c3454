"""Single-layer LSTM classifier in numpy with hand-written BPTT.

The softmax readout is applied to every hidden state so that the per-step
probabilistic outputs are available to the automaton extraction. Only the
final step enters the classification and the training loss.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .data import Dataset, TimeSeries
from .errors import ConfigError, DataError, DimensionError, EmptyDatasetError, TrainingError

log = logging.getLogger(__name__)

MAGIC = b"TSFLSTM1"
_HEADER = struct.Struct("<8sqqq")


@dataclass(frozen=True)
class LstmParams:
    """Gate weights stacked as ``[input, forget, cell, output]``.

    ``W`` is ``(4H, H + D)`` acting on ``[h_{t-1}; x_t]``, ``b`` is ``(4H,)``,
    the readout is ``Wy`` ``(k, H)`` plus ``by`` ``(k,)``.
    """

    W: np.ndarray
    b: np.ndarray
    Wy: np.ndarray
    by: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("W", "b", "Wy", "by"):
            a = np.array(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(a)):
                raise DataError(f"parameter {name} has non-finite entries")
            a.flags.writeable = False
            arrays[name] = a
        W, b, Wy, by = arrays["W"], arrays["b"], arrays["Wy"], arrays["by"]
        if W.ndim != 2 or W.shape[0] % 4:
            raise DimensionError(f"W must be (4H, H+D), got {W.shape}")
        H = W.shape[0] // 4
        if W.shape[1] <= H or b.shape != (4 * H,) or Wy.ndim != 2 or Wy.shape[1] != H or by.shape != (Wy.shape[0],):
            raise DimensionError("inconsistent LSTM parameter shapes")
        for name, a in arrays.items():
            object.__setattr__(self, name, a)

    @property
    def H(self) -> int:
        return self.W.shape[0] // 4

    @property
    def D(self) -> int:
        return self.W.shape[1] - self.H

    @property
    def k(self) -> int:
        return self.Wy.shape[0]

    @classmethod
    def zeros(cls, H: int, D: int, k: int) -> "LstmParams":
        return cls(np.zeros((4 * H, H + D)), np.zeros(4 * H), np.zeros((k, H)), np.zeros(k))

    @classmethod
    def init(cls, H: int, D: int, k: int, seed: int = 0, scale: float = 0.1) -> "LstmParams":
        rng = np.random.default_rng(seed)
        return cls(
            rng.uniform(-scale, scale, (4 * H, H + D)),
            rng.uniform(-scale, scale, 4 * H),
            rng.uniform(-scale, scale, (k, H)),
            rng.uniform(-scale, scale, k),
        )

    def gate_blocks(self) -> list[np.ndarray]:
        """Per-gate ``[W_gate | b_gate]`` in persistence order."""
        H = self.H
        return [(self.W[j * H:(j + 1) * H], self.b[j * H:(j + 1) * H]) for j in range(4)]

    def flat(self) -> np.ndarray:
        parts = []
        for Wg, bg in self.gate_blocks():
            parts += [Wg.ravel(), bg]
        parts += [self.Wy.ravel(), self.by]
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, flat: np.ndarray, H: int, D: int, k: int) -> "LstmParams":
        flat = np.asarray(flat, dtype=np.float64)
        expected = 4 * (H * (H + D) + H) + k * H + k
        if flat.size != expected:
            raise DimensionError(f"expected {expected} parameters for H={H}, D={D}, k={k}, got {flat.size}")
        W, b, pos = [], [], 0
        for _ in range(4):
            W.append(flat[pos:pos + H * (H + D)].reshape(H, H + D))
            pos += H * (H + D)
            b.append(flat[pos:pos + H])
            pos += H
        Wy = flat[pos:pos + k * H].reshape(k, H)
        by = flat[pos + k * H:]
        return cls(np.vstack(W), np.concatenate(b), Wy, by)


@dataclass(frozen=True)
class StepTrace:
    hidden: np.ndarray  # (T, H)
    step_output: np.ndarray  # (T, k), rows on the probability simplex


@dataclass
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 0.01
    seed: int = 0
    hidden_size: int = 16
    patience: Optional[int] = None
    # plain "gd" stalls on long series from the small uniform init
    optimizer: str = "adam"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning rate must be > 0")
        if self.hidden_size < 1:
            raise ConfigError("hidden_size must be >= 1")
        if self.optimizer not in ("gd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}; expected 'gd' or 'adam'")


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(p: LstmParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[2] != p.D:
        raise DimensionError(f"expected input of shape (N, T, {p.D}), got {X.shape}")
    if X.shape[1] < 1:
        raise DimensionError("series length must be >= 1")
    return X


def _run(p: LstmParams, X: np.ndarray, keep_cache: bool = False):
    N, T, _ = X.shape
    H = p.H
    h = np.zeros((N, H))
    c = np.zeros((N, H))
    hidden = np.empty((N, T, H))
    cache = []
    for t in range(T):
        z = np.concatenate([h, X[:, t]], axis=1)
        a = z @ p.W.T + p.b
        i = _sigmoid(a[:, :H])
        f = _sigmoid(a[:, H:2 * H])
        g = np.tanh(a[:, 2 * H:3 * H])
        o = _sigmoid(a[:, 3 * H:])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hidden[:, t] = h
        if keep_cache:
            cache.append((z, i, f, g, o, c_prev, tc))
    return hidden, cache


def forward_batch(p: LstmParams, X) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(hidden, step_output)`` of shapes (N, T, H) and (N, T, k)."""
    X = _as_batch(p, X)
    hidden, _ = _run(p, X)
    return hidden, _softmax(hidden @ p.Wy.T + p.by)


def predict_proba(p: LstmParams, X) -> np.ndarray:
    """Final-step class probabilities, (N, k)."""
    X = _as_batch(p, X)
    hidden, _ = _run(p, X)
    return _softmax(hidden[:, -1] @ p.Wy.T + p.by)


def predict(p: LstmParams, X) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the smaller class
    return np.argmax(predict_proba(p, X), axis=1)


def forward(p: LstmParams, x) -> tuple[StepTrace, int]:
    values = x.values if isinstance(x, TimeSeries) else x
    hidden, out = forward_batch(p, values)
    return StepTrace(hidden[0], out[0]), int(np.argmax(out[0, -1]))


def _backward(p: LstmParams, X: np.ndarray, dlogits: np.ndarray, need_params: bool = True):
    """BPTT from a gradient on the final-step logits. Returns (param grads, dX)."""
    hidden, cache = _run(p, X, keep_cache=True)
    H = p.H
    dh = dlogits @ p.Wy
    dc = np.zeros_like(dh)
    dW = np.zeros_like(p.W) if need_params else None
    db = np.zeros_like(p.b) if need_params else None
    dX = np.empty_like(X)
    for t in range(X.shape[1] - 1, -1, -1):
        z, i, f, g, o, c_prev, tc = cache[t]
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        da = np.concatenate(
            [dc * g * i * (1.0 - i), dc * c_prev * f * (1.0 - f), dc * i * (1.0 - g * g), do * o * (1.0 - o)],
            axis=1,
        )
        if need_params:
            dW += da.T @ z
            db += da.sum(axis=0)
        dz = da @ p.W
        dh = dz[:, :H]
        dX[:, t] = dz[:, H:]
        dc = dc * f
    grads = None
    if need_params:
        grads = (dW, db, dlogits.T @ hidden[:, -1], dlogits.sum(axis=0))
    return grads, dX


def _final_logits_grad(p: LstmParams, X: np.ndarray, y: np.ndarray):
    probs = predict_proba(p, X)
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(y)), y] = 1.0
    loss = -np.log(np.clip(probs[np.arange(len(y)), y], 1e-300, None))
    return probs - onehot, loss


def input_gradients(p: LstmParams, X, y) -> np.ndarray:
    """Per-sample ∂L/∂x of the cross-entropy at labels ``y``; shape (N, T, D)."""
    X = _as_batch(p, X)
    y = np.broadcast_to(np.asarray(y, dtype=int), (X.shape[0],))
    dlogits, _ = _final_logits_grad(p, X, y)
    _, dX = _backward(p, X, dlogits, need_params=False)
    return dX


def input_gradient(p: LstmParams, x, y: int) -> np.ndarray:
    values = x.values if isinstance(x, TimeSeries) else x
    return input_gradients(p, values, [y])[0]


def loss(p: LstmParams, X, y) -> float:
    X = _as_batch(p, X)
    _, losses = _final_logits_grad(p, X, np.asarray(y, dtype=int))
    return float(losses.mean())


def loss_and_grads(p: LstmParams, X, y):
    X = _as_batch(p, X)
    y = np.asarray(y, dtype=int)
    dlogits, losses = _final_logits_grad(p, X, y)
    grads, _ = _backward(p, X, dlogits / len(y))
    return float(losses.mean()), grads


def _plain(theta, lr):
    def step(grads):
        for a, g in zip(theta, grads):
            a -= lr * g
    return step


def _adam(theta, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    m = [np.zeros_like(a) for a in theta]
    v = [np.zeros_like(a) for a in theta]
    t = [0]

    def step(grads):
        t[0] += 1
        c1, c2 = 1.0 - beta1 ** t[0], 1.0 - beta2 ** t[0]
        for a, g, m_, v_ in zip(theta, grads, m, v):
            m_ *= beta1
            m_ += (1.0 - beta1) * g
            v_ *= beta2
            v_ += (1.0 - beta2) * g * g
            a -= lr * (m_ / c1) / (np.sqrt(v_ / c2) + eps)
    return step


def train(
    d: Dataset,
    cfg: TrainConfig,
    init: Optional[LstmParams] = None,
    callback: Optional[Callable[[int, LstmParams], None]] = None,
) -> LstmParams:
    """Full-batch descent on the final-step cross-entropy of the train split.

    ``cfg.optimizer`` selects plain gradient descent or Adam steps.

    ``callback(epoch, params)`` runs after every epoch (1-based).
    """
    if d.X_train.shape[0] == 0:
        raise EmptyDatasetError("cannot train on an empty train split")
    p = init or LstmParams.init(cfg.hidden_size, d.feature_dim, d.num_classes, seed=cfg.seed)
    if p.D != d.feature_dim or p.k != d.num_classes:
        raise DimensionError("initial parameters do not match the dataset")
    W, b, Wy, by = theta = [np.array(a) for a in (p.W, p.b, p.Wy, p.by)]
    step = _adam(theta, cfg.learning_rate) if cfg.optimizer == "adam" else _plain(theta, cfg.learning_rate)
    best, stale = np.inf, 0
    for epoch in range(1, cfg.epochs + 1):
        current = LstmParams(W, b, Wy, by) if epoch > 1 else p
        value, grads = loss_and_grads(current, d.X_train, d.y_train)
        if not np.isfinite(value):
            raise TrainingError(f"loss became {value} at epoch {epoch}; try a smaller learning rate")
        step(grads)
        if not all(np.all(np.isfinite(a)) for a in (W, b, Wy, by)):
            raise TrainingError(f"parameters diverged at epoch {epoch}; try a smaller learning rate")
        if callback is not None:
            callback(epoch, LstmParams(W, b, Wy, by))
        if cfg.patience is not None:
            if value < best - 1e-12:
                best, stale = value, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    log.info("early stop at epoch %d (loss %.6f)", epoch, value)
                    break
    return LstmParams(W, b, Wy, by)


def evaluate(p: LstmParams, split) -> float:
    """Accuracy on a list of TimeSeries or an ``(X, y)`` pair."""
    if isinstance(split, tuple):
        X, y = split
    else:
        split = list(split)
        if not split:
            raise EmptyDatasetError("cannot evaluate on an empty split")
        X = np.stack([s.values for s in split])
        y = np.array([s.label for s in split])
    if len(y) == 0:
        raise EmptyDatasetError("cannot evaluate on an empty split")
    return float(np.mean(predict(p, X) == np.asarray(y)))


def save_params(p: LstmParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, p.H, p.D, p.k))
        fh.write(p.flat().astype("<f8").tobytes())


def load_params(path) -> LstmParams:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated model file")
    magic, H, D, k = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path}: not a model file (bad magic {magic!r})")
    flat = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    return LstmParams.from_flat(flat, H, D, k)
