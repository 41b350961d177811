import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from utmos.errors import CoverageError, MetricError, UndefinedCorrelationError
from utmos.metrics import (
    all_metrics,
    average_ranks,
    evaluate,
    ktau,
    lcc,
    metric_report,
    mse,
    srcc,
    system_aggregate,
)
from utmos.dataset import write_predictions, write_ratings


# brute-force references, written without numpy vectorization

def pearson_ref(x, y):
    n = len(x)
    mx, my = math.fsum(x) / n, math.fsum(y) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def ranks_ref(x):
    # rank = 1 + (#smaller) + (#equal - 1) / 2
    return [1 + sum(b < a for b in x) + (sum(b == a for b in x) - 1) / 2 for a in x]


def kendall_ref(x, y):
    conc = disc = tx = ty = 0
    for i, j in combinations(range(len(x)), 2):
        dx, dy = x[i] - x[j], y[i] - y[j]
        if dx == 0 and dy == 0:
            continue
        if dx == 0:
            tx += 1
        elif dy == 0:
            ty += 1
        elif dx * dy > 0:
            conc += 1
        else:
            disc += 1
    return (conc - disc) / math.sqrt((conc + disc + tx) * (conc + disc + ty))


def test_mse_examples():
    assert mse([1, 2], [1, 2]) == 0.0
    assert mse([0, 0], [1, 1]) == 1.0
    assert mse([3.0], [3.5]) == 0.25


def test_mse_argument_errors():
    with pytest.raises(MetricError):
        mse([1, 2], [1])
    with pytest.raises(MetricError):
        mse([], [])


def test_lcc_examples():
    assert lcc([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-15)
    assert lcc([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-15)
    assert lcc([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)


def test_constant_vector_is_undefined():
    for fn in (lcc, srcc, ktau):
        with pytest.raises(UndefinedCorrelationError):
            fn([1, 1, 1], [1, 2, 3])
        with pytest.raises(UndefinedCorrelationError):
            fn([1, 2, 3], [2, 2, 2])


def test_srcc_examples():
    x = np.array([0.3, 1.2, -0.4, 2.2, 0.9])
    assert srcc(np.exp(x), x) == 1.0
    assert srcc([1, 2, 3, 5], [1, 2, 4, 3]) == pytest.approx(0.8, abs=1e-12)
    assert srcc(x, -x) == pytest.approx(-1.0, abs=1e-15)


def test_ktau_examples():
    assert ktau([1, 2, 3, 4], [1, 2, 3, 4]) == pytest.approx(1.0)
    assert ktau([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(2 / 3, abs=1e-12)
    assert ktau([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)


def test_average_ranks_ties():
    assert average_ranks([10, 20, 20, 5]).tolist() == [2.0, 3.5, 3.5, 1.0]


def test_oracles_random_with_ties():
    rng = np.random.default_rng(11)
    for _ in range(200):
        n = int(rng.integers(2, 40))
        x = rng.integers(1, 6, n).astype(float)
        y = rng.normal(size=n).round(1)
        if len(set(x)) < 2 or len(set(y)) < 2:
            continue
        assert srcc(x, y) == pytest.approx(pearson_ref(ranks_ref(x.tolist()), ranks_ref(y.tolist())), abs=1e-12)
        assert ktau(x, y) == pytest.approx(kendall_ref(x.tolist(), y.tolist()), abs=1e-12)
        assert lcc(x, y) == pytest.approx(pearson_ref(x.tolist(), y.tolist()), abs=1e-12)


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
vectors = st.lists(finite, min_size=3, max_size=30)


def _distinct(v):
    return len(set(v)) == len(v)


# values on a 1/16 grid so 2x+1 and exp stay strictly increasing in floating point
grid = st.lists(st.integers(-800, 800).map(lambda k: k / 16), min_size=3, max_size=40)


@settings(max_examples=200, deadline=None)
@given(grid, grid)
def test_srcc_invariant_to_increasing_maps(a, b):
    n = min(len(a), len(b))
    x, y = np.array(a[:n]), np.array(b[:n])
    if len(set(x)) < 2 or len(set(y)) < 2:
        return
    base = srcc(x, y)
    assert srcc(2 * x + 1, y) == base
    assert srcc(np.exp(x), y) == base


@settings(max_examples=150, deadline=None)
@given(vectors, vectors)
def test_negation_antisymmetry(a, b):
    n = min(len(a), len(b))
    x, y = np.array(a[:n]), np.array(b[:n])
    if not (_distinct(a[:n]) and _distinct(b[:n])):
        return
    assert srcc(-x, y) == pytest.approx(-srcc(x, y), abs=1e-12)
    assert ktau(-x, y) == pytest.approx(-ktau(x, y), abs=1e-12)


@settings(max_examples=150, deadline=None)
@given(vectors, vectors)
def test_mse_bias_lower_bound(a, b):
    n = min(len(a), len(b))
    x, y = np.array(a[:n]), np.array(b[:n])
    assert mse(x, y) >= (x.mean() - y.mean()) ** 2 - 1e-9 * (1 + mse(x, y))


@settings(max_examples=100, deadline=None)
@given(vectors, vectors)
def test_correlations_bounded(a, b):
    n = min(len(a), len(b))
    x, y = np.array(a[:n]), np.array(b[:n])
    if len(set(x)) < 2 or len(set(y)) < 2:
        return
    for fn in (lcc, srcc, ktau):
        assert -1.0 <= fn(x, y) <= 1.0


def test_system_aggregate_means():
    system_of = {"a": "s1", "b": "s1", "c": "s2", "d": "s2"}
    pred = {"a": 1.0, "b": 3.0, "c": 2.0, "d": 4.0}
    true = {"a": 1.0, "b": 1.0, "c": 5.0, "d": 4.0}
    ps, ts = system_aggregate(pred, true, system_of)
    assert ps == {"s1": 2.0, "s2": 3.0}
    assert ts == {"s1": 1.0, "s2": 4.5}


def test_system_aggregate_single_and_three_systems():
    ps, ts = system_aggregate({"a": 2.0}, {"a": 3.0}, {"a": "only"})
    assert ps == {"only": 2.0} and ts == {"only": 3.0}
    rng = np.random.default_rng(2)
    ids = [f"u{i}" for i in range(30)]
    system_of = {u: f"s{i % 3}" for i, u in enumerate(ids)}
    pred = {u: float(rng.uniform(1, 5)) for u in ids}
    ps, _ = system_aggregate(pred, pred, system_of)
    for s in ("s0", "s1", "s2"):
        members = [pred[u] for u in ids if system_of[u] == s]
        assert ps[s] == pytest.approx(sum(members) / len(members), abs=1e-12)


def test_system_aggregate_unknown_system():
    with pytest.raises(MetricError):
        system_aggregate({"a": 1.0}, {"a": 1.0}, {})


def test_metric_report_coverage_error_lists_ids():
    with pytest.raises(CoverageError) as info:
        metric_report({"a": 1.0}, {"a": 1.0, "c": 2.0, "b": 3.0}, {"a": "s", "b": "s", "c": "s"})
    assert "b" in str(info.value) and "c" in str(info.value)


def test_evaluate_identity(tmp_path):
    rows = []
    truth = {}
    rng = np.random.default_rng(0)
    for i in range(12):
        scores = rng.integers(1, 6, 3)
        for k, s in enumerate(scores):
            rows.append((f"u{i}", f"L{k}", f"sys{i % 4}", "main", int(s)))
        truth[f"u{i}"] = float(np.mean(scores))
    write_ratings(tmp_path / "r.csv", rows)
    write_predictions(tmp_path / "p.csv", truth)
    report = evaluate(tmp_path / "p.csv", tmp_path / "r.csv")
    assert report.utterance["mse"] == pytest.approx(0.0, abs=1e-12)
    assert report.utterance["srcc"] == pytest.approx(1.0)
    assert report.n_utterances == 12 and report.n_systems == 4
    lines = report.as_lines()
    assert "utterance.srcc=1.000000" in lines
    assert len([l for l in lines if "." in l.split("=")[0]]) == 8


def test_all_metrics_keys():
    assert list(all_metrics([1, 2, 3], [1, 3, 2])) == ["mse", "lcc", "srcc", "ktau"]
