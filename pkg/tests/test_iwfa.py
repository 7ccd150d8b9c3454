from fractions import Fraction as Fr

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsfool import iwfa, rnn
from tsfool.data import Dataset, NormalizationStats
from tsfool.errors import ConfigError, DimensionError, EmptyDatasetError

# Worked three-step instance: initial vector, three transfer matrices, output matrix.
E1 = [[Fr(1, 4), 0, Fr(3, 4)], [0, 0, 0], [0, 0, 0]]
E2 = [[Fr(1, 4), Fr(1, 4), Fr(1, 2)], [1, 0, 0], [Fr(1, 2), Fr(1, 2), 0]]
E3 = [[0, 1, 0], [0, Fr(1, 4), Fr(3, 4)], [Fr(1, 4), Fr(1, 2), Fr(1, 4)]]
TOUT = [[Fr(1, 2), Fr(1, 2)], [0, 1], [Fr(3, 4), Fr(1, 4)]]
EXPECTED = [73 / 256, 183 / 256]  # frozen from the exact rational product below


def rational_product():
    v = [Fr(1), Fr(0), Fr(0)]
    for m in (E1, E2, E3):
        v = [sum(v[i] * Fr(m[i][j]) for i in range(3)) for j in range(3)]
    return [sum(v[i] * Fr(TOUT[i][c]) for i in range(3)) for c in range(2)]


def instance() -> iwfa.IWfa:
    f = lambda m: np.array([[float(v) for v in row] for row in m])
    return iwfa.IWfa(
        interval_width=1.0,
        normalization=NormalizationStats([0.0], [1.0]),
        states=[None, iwfa.AbstractState((0, 1), (5, 5)), iwfa.AbstractState((1, 0), (9, 0))],
        init_vector=[1.0, 0.0, 0.0],
        transfer={(1,): f(E1), (2,): f(E2), (3,): f(E3)},
        output=f(TOUT),
        num_classes=2,
    )


def test_rational_oracle_is_frozen_value():
    assert rational_product() == [Fr(73, 256), Fr(183, 256)]


def test_worked_instance():
    probs, dead = instance().run_path([(1,), (2,), (3,)])
    assert not dead
    assert np.max(np.abs(probs - EXPECTED)) <= 1e-12
    # the same path through values snapped to intervals 1, 2, 3
    a = instance()
    np.testing.assert_allclose(iwfa.execute(a, [1.5, 2.2, 3.9]), EXPECTED, atol=1e-12)
    assert iwfa.predict(a, [1.5, 2.2, 3.9]) == 1


def test_identity_dynamics():
    a = iwfa.IWfa(1.0, NormalizationStats([0.0], [1.0]), [None], [1.0], {(0,): np.eye(1), (4,): np.eye(1)},
                  np.array([[0.25, 0.75]]), num_classes=2)
    for x in ([0.1, 4.2], [10.0], [-3.0, 0.0, 2.0]):
        np.testing.assert_array_equal(iwfa.execute(a, x), [0.25, 0.75])


def test_dead_path_uniform_and_flagged():
    a = iwfa.IWfa(1.0, NormalizationStats([0.0], [1.0]), [None, iwfa.AbstractState((1, 0), (9, 0))], [1.0, 0.0],
                  {(0,): np.array([[0.0, 1.0], [0.0, 0.0]])}, np.array([[0.5, 0.5], [0.0, 1.0]]), num_classes=2)
    assert a.run_path([(0,)]) == (pytest.approx([0.0, 1.0]), False)
    probs, dead = a.run_path([(0,), (0,)])
    assert dead and probs.tolist() == [0.5, 0.5]
    assert iwfa.predict(a, [0.2, 0.4]) == 0


def test_unseen_interval_falls_back_to_nearest():
    a = instance()
    assert a.resolve((0,)) == (1,)
    assert a.resolve((7,)) == (3,)
    b = iwfa.IWfa(1.0, NormalizationStats([0.0], [1.0]), [None], [1.0], {(1,): np.eye(1), (3,): np.eye(1)},
                  np.array([[1.0]]), num_classes=1)
    assert b.resolve((2,)) == (1,)  # equidistant: smaller index wins


def test_abstract_state():
    s = iwfa.abstract_state(np.array([0.2, 0.5, 0.3]), K=2, T_res=10)
    assert s == iwfa.AbstractState((1, 2), (5, 3))
    assert iwfa.abstract_state(np.array([0.5, 0.5]), 2, 10).top_labels == (0, 1)
    assert iwfa.abstract_state(np.array([1.0, 0.0]), 1, 10).quant_conf == (10,)


def test_imperceptible_distance_examples():
    X = np.array([[[0.0], [1.0], [2.0]]])
    d = Dataset(X, [0], X, [0], num_classes=1)
    assert iwfa.imperceptible_distance(d, 10) == pytest.approx(0.05, abs=1e-15)
    assert iwfa.imperceptible_distance(d, 1) == pytest.approx(0.5, abs=1e-15)
    one = Dataset(X[:, :1], [0], X[:, :1], [0], num_classes=1)
    with pytest.raises(DimensionError):
        iwfa.imperceptible_distance(one, 10)


def test_constant_series_uses_width_floor():
    X = np.full((2, 4, 1), 3.0)
    d = Dataset(X, [0, 1], X, [0, 1], num_classes=2)
    a = iwfa.extract(rnn.LstmParams.init(2, 1, 2, seed=0), d, iwfa.ExtractionConfig(K=2, T_res=10, F=10))
    assert a.interval_width == pytest.approx(1 / 100)


def test_identical_samples_give_one_hot_rows():
    X = np.random.default_rng(0).normal(size=(1, 6, 1)).repeat(2, axis=0)
    d = Dataset(X, [0, 1], X, [0, 1], num_classes=2)
    a = iwfa.extract(rnn.LstmParams.init(3, 1, 2, seed=1, scale=1.0), d)
    for m in a.transfer.values():
        for row in m:
            assert row.sum() == 0 or sorted(row.tolist())[-1] == 1.0


def test_uniform_outputs_give_single_state():
    X = np.random.default_rng(1).normal(size=(3, 5, 1))
    d = Dataset(X, [0, 1, 0], X, [0, 1, 0], num_classes=2)
    a = iwfa.extract(rnn.LstmParams.zeros(2, 1, 2), d)
    assert a.num_states == 2


def test_extract_rejects_bad_config_and_empty_test():
    X = np.zeros((2, 3, 1))
    d = Dataset(X, [0, 1], X, [0, 1], num_classes=2)
    p = rnn.LstmParams.zeros(2, 1, 2)
    with pytest.raises(ConfigError):
        iwfa.extract(p, d, iwfa.ExtractionConfig(K=3))
    with pytest.raises(EmptyDatasetError):
        iwfa.extract(p, d.replace(X_test=np.zeros((0, 3, 1)), y_test=[]))


@settings(max_examples=200)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(1e-3, 0.5))
def test_interval_soundness(a, b, width):
    if abs(a - b) > width:
        ia, ib = iwfa.interval_indices(np.array([a, b]), width)
        assert ia != ib


def check_structure(a: iwfa.IWfa, p, X):
    for m in a.transfer.values():
        sums = m.sum(axis=1)
        assert np.all((sums == 0) | (np.abs(sums - 1) <= 1e-9))
    np.testing.assert_allclose(a.output.sum(axis=1), 1.0, atol=1e-9)
    assert a.init_vector[0] == 1.0 and a.init_vector.sum() == 1.0
    for x in X:
        v = a.init_vector
        for key in a.interval_path(x):
            m = a.transfer[a.resolve(key)]
            if np.any(m[v > 0].sum(axis=1) == 0):
                break  # the path leaves the normalized rows
            v = v @ m
            assert np.all(v >= 0) and abs(v.sum() - 1) <= 1e-9
        probs = iwfa.execute(a, x)
        assert np.all(probs >= 0) and abs(probs.sum() - 1) <= 1e-9
    first = iwfa.predict_batch(a, X)
    assert np.array_equal(first, iwfa.predict_batch(a, X))


def test_structure_on_trained_toys(toy_models):
    for d, p in toy_models:
        a = iwfa.extract(p, d)
        check_structure(a, p, d.X_test)
        assert iwfa.fidelity(a, p, d.X_test) >= 0.5


def test_multivariate_extraction_and_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    X = rng.normal(size=(6, 7, 2))
    d = Dataset(X, [0, 1, 2] * 2, X, [0, 1, 2] * 2, num_classes=3)
    p = rnn.LstmParams.init(4, 2, 3, seed=3, scale=1.0)
    a = iwfa.extract(p, d, iwfa.ExtractionConfig(K=3, T_res=5, F=4))
    check_structure(a, p, X + 0.3)  # shifted inputs exercise the fallback
    a.save(tmp_path / "a.json")
    b = iwfa.IWfa.load(tmp_path / "a.json")
    assert b.interval_width == a.interval_width and b.states == a.states
    assert a.transfer.keys() == b.transfer.keys()
    for key in a.transfer:
        assert np.array_equal(a.transfer[key], b.transfer[key])
    assert np.array_equal(a.output, b.output)
    b.save(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_text() == (tmp_path / "b.json").read_text()
    for x in X:
        assert np.array_equal(iwfa.execute(a, x), iwfa.execute(b, x))
