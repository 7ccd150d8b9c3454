"""Seeded toy datasets.

``ecg_like`` mimics the shape of the UCR ECG200 benchmark (two classes,
96 steps, 100 train and 100 test heartbeats, per-series z-normalization) for
runs where the archive itself is not available. Abnormal beats (class 0,
label ``-1``) carry an elevated ST segment, a flattened or inverted T wave and
a wider QRS complex; a latent severity score with overlapping class
distributions keeps the task from being separable.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset


def _bump(t, centre, width, amp):
    return amp * np.exp(-0.5 * ((t - centre) / width) ** 2)


def _beat(t, severity, rng):
    shift = rng.normal(0.0, 0.02)
    stretch = rng.uniform(0.92, 1.08)
    u = (t - 0.36 - shift) / stretch + 0.36
    qrs = 0.012 * (1.0 + 0.35 * severity)
    x = (
        _bump(u, 0.20, 0.030, rng.uniform(0.10, 0.20))
        + _bump(u, 0.33, qrs, -rng.uniform(0.10, 0.20))
        + _bump(u, 0.36, qrs, rng.uniform(0.85, 1.15))
        + _bump(u, 0.395, qrs, -rng.uniform(0.15, 0.30))
        + _bump(u, 0.62, 0.05, rng.uniform(0.25, 0.35) * (1.0 - 1.1 * severity))
    )
    st = 0.15 * severity / (1.0 + np.exp(-(u - 0.41) / 0.01)) / (1.0 + np.exp((u - 0.55) / 0.02))
    wander = rng.uniform(0.0, 0.05) * np.sin(2 * np.pi * (rng.uniform(0.3, 1.0) * t + rng.uniform()))
    return x + st + wander + rng.normal(0.0, 0.02, t.shape)


def ecg_like(
    seed: int = 0,
    n_train: int = 100,
    n_test: int = 100,
    length: int = 96,
    abnormal_fraction: float = 0.33,
    overlap: float = 0.45,
) -> Dataset:
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, length)

    def split(n):
        abnormal = rng.uniform(size=n) < abnormal_fraction
        severity = np.where(abnormal, rng.normal(1.0, overlap, n), rng.normal(0.0, overlap, n))
        X = np.stack([_beat(t, s, rng) for s in severity])
        X = (X - X.mean(axis=1, keepdims=True)) / X.std(axis=1, keepdims=True)
        # class 0 is "-1" (abnormal) so that a save/load round trip keeps the label order
        return X[:, :, None], (~abnormal).astype(int)

    X_train, y_train = split(n_train)
    X_test, y_test = split(n_test)
    return Dataset(X_train, y_train, X_test, y_test, num_classes=2, label_names=("-1", "1"), name="ECGLike")


def separable_toy(n_per_class: int = 10, length: int = 8, seed: int = 0, noise: float = 0.0) -> Dataset:
    """Class 0 is the constant 0-series, class 1 the constant 1-series."""
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n_per_class)
    X = np.repeat(y.astype(float), length).reshape(-1, length, 1)
    X = X + noise * rng.normal(size=X.shape)
    y2 = y.copy()
    X2 = np.repeat(y2.astype(float), length).reshape(-1, length, 1) + noise * rng.normal(size=X.shape)
    return Dataset(X, y, X2, y2, num_classes=2, name="Separable")
