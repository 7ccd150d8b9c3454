import csv
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tsfool import metrics
from tsfool.attack import AdversarialBatch, Candidate, VnsTpsPair
from tsfool.data import Dataset, domain_ranges
from tsfool.errors import DataError, DimensionError, UndefinedMetricError


def one_d(values, labels):
    X = np.asarray(values, dtype=float).reshape(len(values), 1, 1)
    return Dataset(X, labels, X, labels, num_classes=max(labels) + 1)


def test_class_stats_examples():
    s = metrics.class_stats(one_d([0, 2], [0, 0]))
    assert s.centers[0, 0, 0] == 1.0 and s.radii[0] == 1.0
    single = metrics.class_stats(one_d([5, 0, 2], [0, 1, 1]))
    assert single.centers[0, 0, 0] == 5.0 and single.radii[0] == 0.0
    dup = metrics.class_stats(one_d([0, 2, 0, 2], [0, 0, 0, 0]))
    assert dup.centers[0, 0, 0] == 1.0 and dup.radii[0] == 1.0


def test_class_stats_empty_class():
    X = np.zeros((2, 1, 1))
    d = Dataset(X, [0, 1], X, [0, 0], num_classes=2)
    with pytest.raises(DataError, match="class 1"):
        metrics.class_stats(d)


def test_camouflage_examples():
    s = metrics.class_stats(one_d([0, 2, 10, 12], [0, 0, 1, 1]))
    assert metrics.camouflage_coefficient([[2.0]], 0, 1, s) == pytest.approx(1 / 9, abs=1e-15)
    assert metrics.camouflage_coefficient([[1.0]], 0, 1, s) == 0.0
    assert math.isinf(metrics.camouflage_coefficient([[11.0]], 0, 1, s))
    zero = metrics.class_stats(one_d([1, 10, 12], [0, 1, 1]))
    with pytest.raises(UndefinedMetricError):
        metrics.camouflage_coefficient([[2.0]], 0, 1, zero)
    with pytest.raises(ValueError):
        metrics.camouflage_coefficient([[2.0]], 1, 1, s)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 20), st.floats(-50, 50), st.booleans())
def test_camouflage_affine_invariance(seed, a, b, negate):
    a = -a if negate else a
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(8, 5, 2))
    y = np.array([0, 1] * 4)
    d = Dataset(X, y, X, y, num_classes=2)
    x = rng.normal(size=(5, 2))
    base = metrics.camouflage_coefficient(x, 0, 1, metrics.class_stats(d))
    moved = d.replace(X_train=a * X + b, X_test=a * X + b)
    after = metrics.camouflage_coefficient(a * x + b, 0, 1, metrics.class_stats(moved))
    assert abs(after - base) <= 1e-9 * max(1.0, base)


def test_perturbation_ratio():
    assert metrics.perturbation_ratio([3, 4], [3, 4]) == 0
    assert metrics.perturbation_ratio([3, 4], [3, 4.5]) == pytest.approx(0.1, abs=1e-15)
    assert metrics.perturbation_ratio([6, 8], [6, 9]) == pytest.approx(0.1, abs=1e-15)
    with pytest.raises(UndefinedMetricError):
        metrics.perturbation_ratio([0, 0], [1, 0])


def test_domain_perturbation_ratio():
    X = np.array([[[0.0], [0.0]], [[2.0], [1.0]]])
    r = domain_ranges(Dataset(X, [0, 0], X, [0, 0], num_classes=1))
    x = np.array([[1.0], [0.5]])
    assert metrics.domain_perturbation_ratio(x, x + [[0.3], [0.0]], r, "l1") == pytest.approx(0.1, abs=1e-15)
    assert metrics.domain_perturbation_ratio(x, x, r) == 0
    shifted = domain_ranges(Dataset(X + 7, [0, 0], X + 7, [0, 0], num_classes=1))
    assert metrics.domain_perturbation_ratio(x + 7, x + 7 + [[0.3], [0.0]], shifted, "l1") == pytest.approx(0.1)
    flat = domain_ranges(Dataset(np.ones((2, 2, 1)), [0, 0], np.ones((2, 2, 1)), [0, 0], num_classes=1))
    with pytest.raises(UndefinedMetricError):
        metrics.domain_perturbation_ratio(x, x, flat)


def test_multivariate_norm_tags():
    X = np.array([[[0.0, 0.0]], [[3.0, 4.0]]])
    r = domain_ranges(Dataset(X, [0, 0], X, [0, 0], num_classes=1))
    x, adv = np.zeros((1, 2)), np.array([[3.0, 4.0]])
    assert [metrics.domain_perturbation_ratio(x, adv, r, n) for n in ("l1", "l2", "linf")] == [1.0, 1.0, 1.0]


def brute_force_dtw(a, b, dist):
    """Minimum cost over every monotone warping path (small inputs only)."""
    n = len(a)
    best = math.inf
    moves = [(1, 1), (0, 1), (1, 0)]

    def walk(i, j, cost):
        nonlocal best
        cost += dist(a[i], b[j])
        if cost >= best:
            return
        if (i, j) == (n - 1, n - 1):
            best = cost
            return
        for di, dj in moves:
            if i + di < n and j + dj < n:
                walk(i + di, j + dj, cost)

    walk(0, 0, 0.0)
    return best


def test_dtw_fixtures():
    value, path = metrics.dtw([0.0, 0.0], [1.0, 1.0], "l1")
    assert value == 2.0 and path == [(0, 0), (1, 1)]
    x = np.random.default_rng(0).normal(size=(7, 2))
    value, path = metrics.dtw(x, x)
    assert value == 0.0 and path == [(i, i) for i in range(7)]
    with pytest.raises(DimensionError):
        metrics.dtw([0.0, 1.0], [0.0, 1.0, 2.0])


def test_dtw_tie_order():
    # every predecessor of the last cell costs the same; the diagonal must win
    _, path = metrics.dtw(np.zeros(3), np.zeros(3))
    assert path == [(0, 0), (1, 1), (2, 2)]
    # a=[0,1,1], b=[0,0,1]: reaching (1,1) from the left or from below costs the same
    value, path = metrics.dtw([0.0, 1.0, 1.0], [0.0, 0.0, 1.0], "l1")
    assert value == 0.0 and path == [(0, 0), (0, 1), (1, 2), (2, 2)]


@settings(max_examples=40, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 5), st.integers(1, 2)), elements=st.floats(-5, 5)),
       st.integers(0, 1000), st.sampled_from(["l1", "l2"]))
def test_dtw_properties(a, seed, dist):
    b = np.random.default_rng(seed).normal(size=a.shape)
    fwd, path = metrics.dtw(a, b, dist)
    back, _ = metrics.dtw(b, a, dist)
    assert abs(fwd - back) <= 1e-9 * max(1.0, fwd)
    point = (lambda u, v: np.abs(u - v).sum()) if dist == "l1" else (lambda u, v: np.linalg.norm(u - v))
    assert fwd >= 0
    assert fwd <= sum(point(u, v) for u, v in zip(a, b)) + 1e-9
    assert abs(fwd - brute_force_dtw(a, b, point)) <= 1e-9 * max(1.0, fwd)
    assert path[0] == (0, 0) and path[-1] == (len(a) - 1, len(a) - 1)
    assert abs(sum(point(a[i], b[j]) for i, j in path) - fwd) <= 1e-9 * max(1.0, fwd)
    for (i0, j0), (i1, j1) in zip(path, path[1:]):
        assert (i1 - i0, j1 - j0) in ((1, 1), (0, 1), (1, 0))


def hand_batch(X_test, values, labels, preds, sources):
    batch = AdversarialBatch("tsfool")
    for k, (v, y, p, s) in enumerate(zip(values, labels, preds, sources)):
        batch.pairs.append(VnsTpsPair(k, s, None, y, None))
        batch.candidates.append(Candidate(k, 0, np.asarray(v, float).reshape(X_test.shape[1:]), y, p, seconds=0.5))
    return batch


def cluster_dataset():
    return one_d([0, 2, 10, 12], [0, 0, 1, 1])


def test_attack_success_rate():
    d = cluster_dataset()
    batch = hand_batch(d.X_test, [0, 2, 10, 12], [0, 0, 1, 1], [1, 1, 0, 1], [0, 1, 2, 3])
    assert metrics.attack_success_rate(batch) == 0.75
    copies = hand_batch(d.X_test, [0, 2], [0, 0], [0, 0], [0, 1])
    assert metrics.attack_success_rate(copies) == 0.0
    with pytest.raises(UndefinedMetricError):
        metrics.attack_success_rate(AdversarialBatch("tsfool"))


def test_report_without_success():
    d = cluster_dataset()
    r = metrics.build_report(hand_batch(d.X_test, [0, 2], [0, 0], [0, 0], [0, 1]), d)
    assert r.asr == 0.0 and r.generated == 2
    assert (r.rho, r.rho_star, r.cc, r.dtw) == (None, None, None, None)


def test_report_single_and_pair_means():
    d = cluster_dataset()
    one = metrics.build_report(hand_batch(d.X_test, [3.0], [0], [1], [1]), d)
    s = metrics.class_stats(d)
    r = domain_ranges(d)
    assert one.cc == metrics.camouflage_coefficient([[3.0]], 0, 1, s)
    assert one.rho == metrics.perturbation_ratio([[2.0]], [[3.0]])
    assert one.rho_star == metrics.domain_perturbation_ratio([[2.0]], [[3.0]], r)
    assert one.dtw == 1.0
    two = metrics.build_report(hand_batch(d.X_test, [3.0, 9.0, 0.0], [0, 1, 0], [1, 0, 0], [1, 2, 0]), d)
    assert two.asr == pytest.approx(2 / 3) and two.n_successful == 2
    assert two.rho == pytest.approx((1 / 2 + 1 / 10) / 2)
    assert two.dtw == pytest.approx((1 + 1) / 2)
    assert two.rho_star == pytest.approx((1 / 12 + 1 / 12) / 2)
    assert two.cc == pytest.approx(((2 / 1) / (8 / 1) + (2 / 1) / (8 / 1)) / 2)
    assert two.mean_time_per_sample == 0.5


def test_summary_csv(tmp_path):
    d = cluster_dataset()
    r = metrics.build_report(hand_batch(d.X_test, [3.0], [0], [1], [1]), d, seed=4)
    metrics.append_summary(r, tmp_path / "s.csv")
    metrics.append_summary(r, tmp_path / "s.csv")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == metrics.SUMMARY_COLUMNS and len(rows) == 3
    assert rows[1][0] == d.name and rows[1][-1] == "4"


def test_report_json_round_trip(tmp_path):
    d = cluster_dataset()
    r = metrics.build_report(hand_batch(d.X_test, [3.0], [0], [1], [1]), d)
    r.save(tmp_path / "r.json")
    back = metrics.AttackReport.load(tmp_path / "r.json")
    assert back == r and back.close_to(r)
