import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catmix.diagnostics import (
    avepp,
    class_proportion_ci,
    diagnose,
    entropy,
    mcap,
    modal_assignment,
    occ,
)
from catmix.lca import LcaParams, fit_em, simulate
from reference_values import CLASS_DIAGNOSTICS

rows_k = st.integers(2, 5).flatmap(lambda k: st.lists(
    st.lists(st.floats(0.01, 1.0), min_size=k, max_size=k), min_size=1, max_size=30))


def _normalize(rows):
    p = np.asarray(rows, dtype=float)
    return p / p.sum(axis=1, keepdims=True)


def test_entropy_extremes():
    assert entropy(np.eye(3)[[0, 1, 2, 2, 0]]) == 1.0
    assert entropy(np.full((7, 4), 0.25)) == pytest.approx(0.0, abs=1e-15)


def test_entropy_needs_two_classes():
    with pytest.raises(ValueError):
        entropy(np.ones((3, 1)))


def test_entropy_hand_value():
    p = np.array([[0.9, 0.1], [0.5, 0.5]])
    h = -(0.9 * math.log(0.9) + 0.1 * math.log(0.1)) - 2 * 0.5 * math.log(0.5)
    assert entropy(p) == pytest.approx(1 - h / (2 * math.log(2)), abs=1e-14)


@settings(max_examples=60, deadline=None)
@given(rows_k, st.floats(0.0, 1.0), st.randoms(use_true_random=False))
def test_entropy_relabeling_and_blending(rows, t, rnd):
    p = _normalize(rows)
    k = p.shape[1]
    perm = list(range(k))
    rnd.shuffle(perm)
    e = entropy(p)
    assert 0.0 - 1e-12 <= e <= 1.0 + 1e-12
    assert entropy(p[:, perm]) == pytest.approx(e, abs=1e-12)
    blended = (1 - t) * p + t / k
    assert entropy(blended) <= e + 1e-12


def test_modal_assignment_and_ties():
    assert modal_assignment([[0.2, 0.5, 0.3]]).tolist() == [1]
    assert modal_assignment([[0.5, 0.5]]).tolist() == [0]


@settings(max_examples=40, deadline=None)
@given(rows_k, st.randoms(use_true_random=False))
def test_modal_assignment_equivariant(rows, rnd):
    p = _normalize(rows)
    # drop exact ties so the argmax is unique
    p = p[np.sort(p, axis=1)[:, -1] > np.sort(p, axis=1)[:, -2] + 1e-9]
    if p.size == 0:
        return
    perm = list(range(p.shape[1]))
    rnd.shuffle(perm)
    # column j of p[:, perm] is column perm[j] of p
    np.testing.assert_array_equal(np.asarray(perm)[modal_assignment(p[:, perm])], modal_assignment(p))


def test_mcap():
    np.testing.assert_array_equal(mcap([0, 0, 1, 1], 2), [0.5, 0.5])
    np.testing.assert_array_equal(mcap([0, 0, 2], 3), [2 / 3, 0.0, 1 / 3])
    assert mcap(np.random.default_rng(0).integers(0, 4, 101), 4).sum() == pytest.approx(1.0, abs=1e-15)


def test_avepp():
    p = np.array([[0.9, 0.1], [0.7, 0.3], [0.2, 0.8]])
    out = avepp(p, modal_assignment(p))
    np.testing.assert_allclose(out, [0.8, 0.8])
    np.testing.assert_array_equal(avepp(np.eye(2)[[0, 1, 1]], [0, 1, 1]), [1.0, 1.0])
    assert np.isnan(avepp(np.array([[0.6, 0.4]]), [0])[1])


@pytest.mark.parametrize("a, pi, expected", [row for row in CLASS_DIAGNOSTICS if row[2] != math.inf])
def test_occ_published_values(a, pi, expected):
    assert occ(a, pi) == pytest.approx(expected, abs=0.05)


def test_occ_infinite_and_chance():
    assert occ(1.0, 0.273) == math.inf
    for pi in (0.1, 0.37, 0.9):
        assert occ(pi, pi) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        occ(0.9, 1.0)


def _two_class_fit(seed, n=300):
    truth = LcaParams([0.35, 0.65], [[0.85, 0.8, 0.9, 0.2, 0.75], [0.15, 0.3, 0.2, 0.7, 0.2]])
    ds, _ = simulate(truth, n, seed=seed)
    return ds, fit_em(ds, 2, init=truth)


def test_diagnose_report_fields():
    ds, fit = _two_class_fit(0)
    rep = diagnose(fit, ds, n_bootstrap=30, seed=1)
    assert 0 <= rep.entropy <= 1
    assert sum(c.mcap for c in rep.classes) == pytest.approx(1.0, abs=1e-15)
    for k, c in enumerate(rep.classes):
        assert 1 / 2 <= c.avepp <= 1
        assert c.occ >= 0
        assert c.ci[0] <= c.ci[1]
        assert c.proportion == fit.params.pi[k]
    d = rep.to_dict()
    assert d["classes"][0]["class"] == 1
    assert d["ci_level"] == 0.95


def test_diagnostics_depend_only_on_posteriors_and_pi():
    ds, fit = _two_class_fit(2)
    rep = diagnose(fit)
    labels = modal_assignment(fit.posteriors)
    a = avepp(fit.posteriors, labels)
    for k, c in enumerate(rep.classes):
        assert c.occ == pytest.approx(occ(a[k], fit.params.pi[k]))
    assert rep.entropy == entropy(fit.posteriors)


def test_infinite_occ_rendered():
    ds, fit = _two_class_fit(3)
    post = np.eye(2)[modal_assignment(fit.posteriors)]
    rep = diagnose(replace(fit, posteriors=post))
    assert rep.to_dict()["classes"][0]["occ"] == "Inf"


def test_single_class_interval():
    ds = simulate(LcaParams([1.0], [[0.3, 0.7]]), 50, seed=0)[0]
    fit = fit_em(ds, 1)
    ci, failed = class_proportion_ci(ds, fit, n_bootstrap=10)
    np.testing.assert_array_equal(ci, [[1.0, 1.0]])
    assert failed == 0


def test_interval_contains_estimate():
    hits = 0
    for seed in range(20):
        ds, fit = _two_class_fit(100 + seed, n=250)
        ci, _ = class_proportion_ci(ds, fit, n_bootstrap=50, seed=seed)
        pi = fit.params.pi
        hits += bool(np.all((ci[:, 0] <= pi) & (pi <= ci[:, 1])))
    assert hits >= 19
