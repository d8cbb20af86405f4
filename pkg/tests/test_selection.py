import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from catmix.lca import LcaParams, simulate
from catmix.selection import (
    BOOTSTRAP_STARTS,
    CRITERIA,
    StartPolicy,
    abic,
    awe,
    bic,
    blrt,
    caic,
    enumerate_classes,
)
from reference_values import FIT_SUMMARY, SAMPLE_SIZE


@pytest.mark.parametrize("npar, ll, b, ab, ca, aw", FIT_SUMMARY)
def test_criteria_reproduce_published_values(npar, ll, b, ab, ca, aw):
    assert bic(ll, npar, SAMPLE_SIZE) == pytest.approx(b, abs=0.05)
    assert abic(ll, npar, SAMPLE_SIZE) == pytest.approx(ab, abs=0.05)
    assert caic(ll, npar, SAMPLE_SIZE) == pytest.approx(ca, abs=0.05)
    assert awe(ll, npar, SAMPLE_SIZE) == pytest.approx(aw, abs=0.05)


@pytest.mark.parametrize("name", sorted(CRITERIA))
@pytest.mark.parametrize("n", [10, 50, 100])
def test_zero_loglik_zero_params(name, n):
    assert CRITERIA[name](0.0, 0, n) == 0.0


@given(st.floats(-1e5, 0), st.integers(1, 200), st.integers(30, 10 ** 6))
def test_criteria_equal_deviance_without_params_and_grow_with_npar(ll, npar, n):
    for f in CRITERIA.values():
        assert f(ll, 0, n) == pytest.approx(-2 * ll)
        assert f(ll, npar + 1, n) > f(ll, npar, n)
    for f in (bic, caic, awe):
        assert f(ll, npar, n + 1) > f(ll, npar, n)


def test_formulas_written_out():
    assert bic(-10, 3, 100) == pytest.approx(20 + 3 * math.log(100))
    assert abic(-10, 3, 100) == pytest.approx(20 + 3 * math.log(102 / 24))
    assert caic(-10, 3, 100) == pytest.approx(20 + 3 * (math.log(100) + 1))
    assert awe(-10, 3, 100) == pytest.approx(20 + 6 * (math.log(100) + 1.5))


def test_start_policy_parse():
    p = StartPolicy.parse("40,8")
    assert (p.n_initial, p.n_final, p.max_iter) == (40, 8, 500)
    q = StartPolicy.parse("30,6", BOOTSTRAP_STARTS)
    assert (q.n_initial, q.n_final, q.max_iter) == (30, 6, BOOTSTRAP_STARTS.max_iter)
    assert str(q) == "30,6"


def _separated(seed, n=500):
    params = LcaParams([0.5, 0.5], [[0.9] * 5, [0.1] * 5])
    return simulate(params, n, seed=seed)[0]


def test_blrt_needs_two_classes():
    with pytest.raises(ValueError):
        blrt(_separated(0), 1)


def test_blrt_p_in_range_and_deterministic():
    ds = simulate(LcaParams([1.0], [[0.3, 0.6, 0.5, 0.2]]), 200, seed=4)[0]
    a = blrt(ds, 2, n_bootstrap=9, seed=3)
    b = blrt(ds, 2, n_bootstrap=9, seed=3)
    assert 1 / 10 <= a.p_value <= 1
    assert a.p_value == b.p_value
    assert a.bootstrap_stats == b.bootstrap_stats


def test_blrt_separated_data_smallest_p():
    r = blrt(_separated(1), 2, n_bootstrap=19, seed=2)
    assert r.n_used == 19
    assert r.p_value == pytest.approx(1 / 20)


def test_blrt_relabeling_invariant():
    ds = _separated(5, n=300)
    from catmix.selection import _fit

    null = _fit(ds, 1, BOOTSTRAP_STARTS, 1).best_fit
    alt = _fit(ds, 2, BOOTSTRAP_STARTS, 2).best_fit
    flipped = type(alt)(alt.params.permute([1, 0]), alt.loglik, alt.posteriors[:, ::-1], alt.iterations,
                        alt.converged)
    a = blrt(ds, 2, n_bootstrap=9, seed=8, observed=(null, alt))
    b = blrt(ds, 2, n_bootstrap=9, seed=8, observed=(null, flipped))
    assert a.p_value == b.p_value


def test_enumerate_single_class():
    ds = _separated(0, n=100)
    t = enumerate_classes(ds, 1, StartPolicy(10, 5))
    assert len(t.rows) == 1
    assert t.rows[0].npar == 5
    assert t.rows[0].smallest_class_n == 100
    assert t.rows[0].vlmr_p == "not computed"


def test_enumerate_rows_and_selection():
    params = LcaParams([0.3, 0.5, 0.2], [[0.9] * 6, [0.9] * 3 + [0.1] * 3, [0.1] * 6])
    ds = simulate(params, 600, seed=7)[0]
    t = enumerate_classes(ds, 4, StartPolicy(20, 5), seed=1)
    assert [r.n_classes for r in t.rows] == [1, 2, 3, 4]
    assert all(r.npar == r.n_classes - 1 + 6 * r.n_classes for r in t.rows)
    assert t.best("bic") == 3
    lls = [r.loglik for r in t.rows]
    assert all(b >= a - 1e-6 for a, b in zip(lls, lls[1:]))
    assert all(np.isfinite([r.bic, r.abic, r.caic, r.awe]).all() for r in t.rows)
    # modal-assignment posteriors are in source row order
    assert t.fits[3].best_fit.posteriors.shape == (600, 3)


def test_enumerate_rejects_zero():
    with pytest.raises(ValueError):
        enumerate_classes(_separated(0, 50), 0)


def test_enumerate_with_blrt_fills_p_values():
    ds = _separated(3, n=200)
    t = enumerate_classes(ds, 2, StartPolicy(10, 3), seed=2, with_blrt=True, n_bootstrap=9)
    assert t.rows[0].blrt_p is None
    assert t.rows[1].blrt_p == pytest.approx(0.1)
