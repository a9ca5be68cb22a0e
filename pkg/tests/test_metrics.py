import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldnet.metrics import (CorrelationError, EvalReport, LevelMetrics, aggregate_seeds, evaluate, lcc, mse,
                           read_report_rows, srcc, system_aggregate, write_report_rows)


def py_pearson(a, b):
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    va = sum((x - ma) ** 2 for x in a)
    vb = sum((y - mb) ** 2 for y in b)
    return cov / math.sqrt(va * vb)


def py_ranks(values):
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def py_spearman(a, b):
    return py_pearson(py_ranks(a), py_ranks(b))


scores = st.lists(st.integers(1, 9).map(lambda v: v / 2), min_size=3, max_size=40)


def test_known_values():
    assert lcc([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert lcc([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert srcc([1, 2, 3, 4], [10, 20, 30, 1000]) == pytest.approx(1.0)
    assert mse([1, 2], [2, 4]) == pytest.approx(2.5)


def test_ties_use_average_ranks():
    a, b = [1, 2, 2, 3], [1, 2, 3, 4]
    assert srcc(a, b) == pytest.approx(py_spearman(a, b), abs=1e-12)


@pytest.mark.parametrize("fn", [lcc, srcc])
def test_constant_input_rejected(fn):
    with pytest.raises(CorrelationError):
        fn([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])


@pytest.mark.parametrize("fn", [lcc, srcc, mse])
def test_length_mismatch_rejected(fn):
    with pytest.raises(ValueError):
        fn([1.0, 2.0], [1.0, 2.0, 3.0])


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_correlations_match_pure_python(data):
    a = data.draw(scores)
    b = data.draw(st.lists(st.integers(1, 9).map(lambda v: v / 2), min_size=len(a), max_size=len(a)))
    if len(set(a)) < 2 or len(set(b)) < 2:
        return
    assert lcc(a, b) == pytest.approx(py_pearson(a, b), abs=1e-9)
    assert srcc(a, b) == pytest.approx(py_spearman(a, b), abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(scores, st.floats(0.1, 10), st.floats(-5, 5))
def test_invariance_under_increasing_maps(a, scale, shift):
    if len(set(a)) < 2:
        return
    b = [x ** 3 for x in a]
    assert srcc([scale * x + shift for x in a], b) == pytest.approx(srcc(a, b), abs=1e-9)
    assert lcc([scale * x + shift for x in a], a) == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(scores)
def test_symmetry_and_bounds(a):
    b = a[::-1]
    if len(set(a)) < 2:
        return
    for fn in (lcc, srcc):
        assert fn(a, b) == pytest.approx(fn(b, a), abs=1e-12)
        assert -1.0 <= fn(a, b) <= 1.0


def test_system_aggregate_means_per_system():
    preds = {"x1": 1.0, "x2": 3.0, "y1": 4.0}
    out = system_aggregate(preds, {"x1": "X", "x2": "X", "y1": "Y"})
    assert out == {"X": 2.0, "Y": 4.0}


def test_evaluate_and_missing_prediction():
    truth = {f"u{i}": float(i % 5 + 1) for i in range(10)}
    systems = {f"u{i}": f"s{i % 3}" for i in range(10)}
    rep = evaluate(truth, truth, systems)
    assert rep.utterance.mse == 0 and rep.utterance.lcc == pytest.approx(1.0)
    assert rep.n_utterances == 10 and rep.n_systems == 3
    with pytest.raises(KeyError):
        evaluate({"u0": 1.0}, truth, systems)


def test_report_round_trips(tmp_path):
    rep = EvalReport(LevelMetrics(0.5, 0.8, 0.7), LevelMetrics(0.1, 0.9, 0.95), 40, 4)
    assert EvalReport.from_text(rep.to_text()) == rep
    assert EvalReport.from_flat(rep.flat()) == rep
    write_report_rows(tmp_path / "r.csv", [({"seed": 1}, rep), ({"seed": 2}, rep)])
    rows = read_report_rows(tmp_path / "r.csv")
    assert [t["seed"] for t, _ in rows] == ["1", "2"]
    assert rows[0][1] == rep


def test_aggregate_seeds_averages():
    r1 = EvalReport(LevelMetrics(0.0, 0.5, 0.5), LevelMetrics(0.0, 0.6, 0.6), 4, 2)
    r2 = EvalReport(LevelMetrics(1.0, 0.7, 0.9), LevelMetrics(2.0, 0.8, 1.0), 4, 2)
    agg = aggregate_seeds([r1, r2])
    assert agg.utterance.mse == pytest.approx(0.5) and agg.system.srcc == pytest.approx(0.8)


def test_random_instances_against_scipy_free_oracle():
    rng = random.Random(3)
    for _ in range(50):
        n = rng.randint(2, 50)
        a = [rng.randint(1, 5) for _ in range(n)]
        b = [rng.random() for _ in range(n)]
        if len(set(a)) < 2:
            continue
        assert srcc(a, b) == pytest.approx(py_spearman(a, b), abs=1e-9)


def test_undefined_correlation_in_reports():
    truth = {"a": 1.0, "b": 2.0, "c": 3.0}
    systems = {"a": "x", "b": "y", "c": "z"}
    rep = evaluate({"a": 2.0, "b": 2.0, "c": 2.0}, truth, systems)
    assert math.isnan(rep.utterance.lcc) and math.isnan(rep.system.srcc)
    assert rep.utterance.mse == pytest.approx(2 / 3)
    with pytest.raises(CorrelationError):
        evaluate({"a": 2.0, "b": 2.0, "c": 2.0}, truth, systems, strict=True)
