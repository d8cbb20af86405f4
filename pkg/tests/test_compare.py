from collections import Counter

import numpy as np
import pytest

from catmix.compare import agreement, crosstab, format_crosstab


def _counter_table(a, b):
    c = Counter(zip(a, b))
    rows, cols = sorted(set(a)), sorted(set(b))
    return [[c[(r, s)] for s in cols] for r in rows]


def test_small_hand_table():
    tab = crosstab([1, 1, 2], [1, 2, 2])
    assert tab.counts.tolist() == [[1, 1], [0, 1]]
    assert tab.row_labels == (1, 2) and tab.col_labels == (1, 2)
    np.testing.assert_allclose(tab.percentages(), [[100, 50], [0, 50]])
    np.testing.assert_allclose(tab.percentages("row"), [[50, 50], [0, 100]])


def test_identical_partitions_diagonal():
    labels = np.random.default_rng(0).integers(0, 4, 200)
    tab = crosstab(labels, labels)
    assert np.count_nonzero(tab.counts - np.diag(np.diag(tab.counts))) == 0
    ag = agreement(tab)
    assert ag["column_max_pct"] == [100.0] * 4
    assert ag["many_to_one"] == 1.0 and ag["one_to_one"] == 1.0


def test_matches_counter_oracle_and_margins():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(1, 80))
        a, b = rng.integers(0, 3, n).tolist(), rng.integers(1, 5, n).tolist()
        tab = crosstab(a, b)
        assert tab.counts.tolist() == _counter_table(a, b)
        assert tab.total == n
        assert tab.row_totals.tolist() == [a.count(r) for r in tab.row_labels]
        assert tab.col_totals.tolist() == [b.count(c) for c in tab.col_labels]
        pct = tab.percentages()
        np.testing.assert_allclose(pct.sum(axis=0), 100.0)


def test_transpose_swaps_orientation():
    rng = np.random.default_rng(5)
    a, b = rng.integers(0, 3, 100), rng.integers(0, 4, 100)
    tab = crosstab(a, b)
    np.testing.assert_array_equal(crosstab(b, a).counts, tab.counts.T)
    np.testing.assert_array_equal(tab.transpose().counts, tab.counts.T)
    np.testing.assert_allclose(tab.transpose().percentages("column"), tab.percentages("row").T)


def test_independent_labels_column_max_near_chance():
    rng = np.random.default_rng(11)
    a, b = rng.integers(0, 4, 200_000), rng.integers(0, 3, 200_000)
    maxima = np.array(agreement(crosstab(a, b))["column_max_pct"]) / 100
    assert np.all(np.abs(maxima - 0.25) < 0.01)


def test_greedy_one_to_one():
    # cells in decreasing order: (0,0)=5, (1,0)=4, (1,1)=3 ... greedy keeps 5 + 3
    a = [0] * 5 + [1] * 4 + [1] * 3 + [0] * 1
    b = [0] * 5 + [0] * 4 + [1] * 3 + [1] * 1
    ag = agreement(crosstab(a, b))
    assert ag["one_to_one_pairs"] == [(0, 0), (1, 1)]
    assert ag["one_to_one"] == pytest.approx(8 / 13)
    assert ag["many_to_one"] == pytest.approx((5 + 3) / 13)


def test_length_mismatch_and_bad_orientation():
    with pytest.raises(ValueError):
        crosstab([1, 2], [1])
    with pytest.raises(ValueError):
        crosstab([1], [1]).percentages("diagonal")


def test_format_has_totals():
    text = format_crosstab(crosstab([1, 1, 2], [1, 2, 2]))
    lines = text.splitlines()
    assert len(lines) == 4
    assert lines[-1].split() == ["Total", "1", "2", "3"]
    assert "1 (100.0%)" in lines[1]
