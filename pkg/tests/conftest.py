from __future__ import annotations

import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from tsfool import attack, iwfa, metrics, rnn, synthetic
from tsfool.data import Dataset, load_dataset


def ecg_dataset() -> tuple[Dataset, str]:
    """Real ECG200 when ``ECG200_DIR`` points at it, otherwise the seeded look-alike."""
    root = os.environ.get("ECG200_DIR")
    if root and Path(root).exists():
        return load_dataset(root), "ECG200"
    return synthetic.ecg_like(seed=0), "ECGLike (surrogate)"


@dataclass
class Pipeline:
    dataset: Dataset
    source: str
    model: rnn.LstmParams
    automaton: iwfa.IWfa
    batch: attack.AdversarialBatch
    report: metrics.AttackReport
    pgd: attack.AdversarialBatch
    pgd_report: metrics.AttackReport
    test_accuracy: float
    seconds: float


@pytest.fixture(scope="session")
def ecg_pipeline() -> Pipeline:
    started = time.perf_counter()
    d, source = ecg_dataset()
    p = rnn.train(d, rnn.TrainConfig(epochs=300, hidden_size=16, seed=0))
    acc = rnn.evaluate(p, (d.X_test, d.y_test))
    a = iwfa.extract(p, d)
    batch = attack.tsfool(p, a, d, attack.AttackConfig(eps=0.01, P=0.9, n=20, seed=0))
    report = metrics.build_report(batch, d)
    # library-default PGD (eps 0.3, step 0.1, 100 iterations in absolute units) expressed
    # as fractions of the test feature range, attacking the same originals as the TPS set
    width = float(attack.feature_scale(d).max())
    pgd = attack.baseline_attack(p, d, "pgd", eps=0.3 / width, eps_step=0.1 / width, max_iter=100,
                                 indices=attack.tps_indices(p, a, d))
    pgd_report = metrics.build_report(pgd, d)
    return Pipeline(d, source, p, a, batch, report, pgd, pgd_report, acc, time.perf_counter() - started)


def _random_toy(seed: int, n: int = 12, T: int = 6) -> Dataset:
    rng = np.random.default_rng(seed)
    y = np.tile([0, 1], n // 2)
    X = rng.normal(0.0, 0.3, (n, T, 1)) + y[:, None, None] * np.linspace(0, 1, T)[None, :, None]
    y2 = np.tile([0, 1], n // 2)
    X2 = rng.normal(0.0, 0.3, (n, T, 1)) + y2[:, None, None] * np.linspace(0, 1, T)[None, :, None]
    return Dataset(X, y, X2, y2, num_classes=2, name=f"toy{seed}")


@pytest.fixture(scope="session")
def toy_models() -> list[tuple[Dataset, rnn.LstmParams]]:
    out = []
    for seed in range(5):
        d = _random_toy(seed)
        out.append((d, rnn.train(d, rnn.TrainConfig(epochs=60, hidden_size=4, seed=seed, learning_rate=0.05))))
    return out


@pytest.fixture(scope="session")
def separable():
    d = synthetic.separable_toy(n_per_class=10, length=8, noise=0.05)
    p = rnn.train(d, rnn.TrainConfig(epochs=200, hidden_size=4, seed=0, learning_rate=0.05))
    return d, p


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def accept(capsys):
    """Print and remember one pass/fail line per acceptance criterion."""

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"[criterion {number}] {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
