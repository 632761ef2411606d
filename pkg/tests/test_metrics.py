import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tabseg.errors import DataError, UndefinedMetricError
from tabseg.metrics import (
    METRICS, TISSUES, MetricsRecord, argmax_map, binary_maps, brain_mask, dice, evaluate_pair,
    hausdorff, jaccard, mse, pearson, reliability_pair, shared_head_mask, spearman,
)
from oracles import (
    brute_dice, brute_hausdorff, brute_jaccard, brute_record, naive_pearson, naive_spearman,
    random_probability_pair,
)

small_sets = arrays(bool, (4, 4, 3), elements=st.booleans())
vectors = st.lists(st.floats(-5, 5, allow_nan=False, width=32), min_size=3, max_size=30)


def nonempty(a):
    return a.any()


# -- masks and labels -----------------------------------------------------------------

def test_brain_mask_single_voxel():
    ref = np.zeros((3, 4, 4, 4))
    ref[:, 1, 2, 3] = (0.2, 0.3, 0.5)
    mask = brain_mask(ref)
    assert mask.sum() == 1 and mask[1, 2, 3]


def test_brain_mask_rejects_empty_reference():
    with pytest.raises(DataError, match="all zero"):
        brain_mask(np.zeros((3, 2, 2, 2)))


def test_argmax_examples_and_tie_rule():
    probs = np.array([[0.2, 0.4], [0.5, 0.4], [0.3, 0.2]]).reshape(3, 2, 1, 1)
    np.testing.assert_array_equal(argmax_map(probs).ravel(), [1, 0])


@given(arrays(np.float64, (3, 3, 3, 2), elements=st.integers(0, 64).map(lambda k: k / 64)))
@settings(max_examples=40, deadline=None)
def test_argmax_invariant_under_monotone_map(p):
    np.testing.assert_array_equal(argmax_map(p), argmax_map(np.exp(3 * p) - 2))


@given(arrays(np.int64, (3, 4, 2), elements=st.integers(0, 2)))
@settings(max_examples=30, deadline=None)
def test_binary_maps_partition(labels):
    maps = binary_maps(labels)
    np.testing.assert_array_equal(maps.sum(axis=0), 1)
    np.testing.assert_array_equal(maps, np.eye(3, dtype=bool)[labels].transpose(3, 0, 1, 2))


def test_single_label_volume_gives_one_full_map():
    maps = binary_maps(np.full((2, 2, 2), 2))
    assert maps[2].all() and not maps[:2].any()


# -- set metrics ---------------------------------------------------------------------------

def test_overlap_examples():
    a = np.zeros((3, 3, 3), bool)
    b = np.zeros((3, 3, 3), bool)
    a[0, 0, :2] = True
    b[0, 0, 1:3] = True
    assert dice(a, b) == 0.5
    assert jaccard(a, b) == pytest.approx(1 / 3, abs=0)
    assert dice(a, a) == 1.0 and jaccard(a, a) == 1.0
    c = np.zeros_like(a)
    c[2, 2, 2] = True
    assert dice(a, c) == 0.0 and jaccard(a, c) == 0.0


def test_empty_sets_are_undefined():
    e = np.zeros((2, 2, 2), bool)
    for fn in (dice, jaccard, hausdorff):
        with pytest.raises(UndefinedMetricError):
            fn(e, e)
    with pytest.raises(UndefinedMetricError, match="empty"):
        hausdorff(e, ~e)


def test_hausdorff_three_four_five():
    a = np.zeros((1, 4, 5), bool)
    b = np.zeros((1, 4, 5), bool)
    a[0, 0, 0] = True
    b[0, 3, 4] = True
    assert hausdorff(a, b) == 5.0
    assert hausdorff(a, a) == 0.0


@given(small_sets.filter(nonempty), small_sets.filter(nonempty))
@settings(max_examples=60, deadline=None)
def test_set_metrics_equal_brute_force(a, b):
    assert dice(a, b) == brute_dice(a, b)
    assert jaccard(a, b) == brute_jaccard(a, b)
    assert hausdorff(a, b) == brute_hausdorff(a, b)


@given(small_sets.filter(nonempty), small_sets.filter(nonempty), small_sets.filter(nonempty))
@settings(max_examples=40, deadline=None)
def test_hausdorff_symmetric_and_triangle(a, b, c):
    assert hausdorff(a, b) == hausdorff(b, a)
    assert hausdorff(a, c) <= hausdorff(a, b) + hausdorff(b, c) + 1e-12


@given(small_sets, small_sets)
@settings(max_examples=60, deadline=None)
def test_dice_jaccard_identity(a, b):
    if not (a.any() or b.any()):
        return
    d, j = dice(a, b), jaccard(a, b)
    assert j <= d
    assert d == pytest.approx(2 * j / (1 + j), abs=1e-15)


# -- continuous metrics ------------------------------------------------------------------

def test_correlation_examples():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    y = x ** 2
    assert spearman(x, y) == 1.0
    assert pearson(x, y) == pytest.approx(25 / math.sqrt(645), rel=1e-14)  # 0.98437
    assert pearson(x, x) == 1.0 and spearman(x, x) == 1.0 and mse(x, x) == 0.0
    assert pearson(x, -x) == -1.0


def test_constant_vectors_are_undefined():
    with pytest.raises(UndefinedMetricError, match="constant"):
        pearson(np.ones(4), np.arange(4.0))
    with pytest.raises(UndefinedMetricError, match="constant"):
        spearman(np.arange(4.0), np.zeros(4))


@given(vectors, st.randoms(use_true_random=False))
@settings(max_examples=60, deadline=None)
def test_correlations_equal_naive(xs, r):
    ys = [v + r.uniform(-1, 1) for v in xs]
    x, y = np.array(xs), np.array(ys)
    if len(set(xs)) < 2 or len(set(ys)) < 2:
        return
    assert pearson(x, y) == pytest.approx(naive_pearson(xs, ys), rel=1e-9, abs=1e-12)
    assert spearman(x, y) == pytest.approx(naive_spearman(xs, ys), rel=1e-9, abs=1e-12)


@given(st.lists(st.integers(-40, 40).map(lambda k: k / 8), min_size=3, max_size=30))
@settings(max_examples=40, deadline=None)
def test_spearman_invariant_under_monotone_transform(xs):
    x = np.array(xs)
    y = np.sin(np.arange(len(xs)))
    if len(set(xs)) < 2:
        return
    assert spearman(x, y) == pytest.approx(spearman(np.exp(x / 5) * 3 + 1, y), abs=1e-12)


def test_masked_continuous_metrics():
    x = np.array([1.0, 2.0, 3.0, 100.0])
    y = np.array([1.0, 2.0, 4.0, -50.0])
    m = np.array([True, True, True, False])
    assert mse(x, y, m) == pytest.approx(1 / 3)
    assert pearson(x, y, m) == pytest.approx(naive_pearson([1, 2, 3], [1, 2, 4]))
    with pytest.raises(UndefinedMetricError, match="empty"):
        mse(x, y, np.zeros(4, bool))


# -- records ------------------------------------------------------------------------------

def _assert_record_matches(record: MetricsRecord, oracle: dict):
    for t in TISSUES:
        for m in METRICS:
            got, want = record.get(t, m), oracle[t][m]
            if want is None or m in ("dice", "jaccard", "hausdorff"):
                assert got == want, (t, m, got, want)
            else:
                assert got == pytest.approx(want, rel=1e-9, abs=1e-12), (t, m)


@pytest.mark.parametrize("seed", range(10))
def test_evaluate_pair_equals_brute_force(seed):
    pred, ref = random_probability_pair(np.random.default_rng(seed))
    _assert_record_matches(evaluate_pair(pred, ref), brute_record(pred, ref))


def test_identical_pair_is_perfect():
    _, ref = random_probability_pair(np.random.default_rng(0))
    rec = evaluate_pair(ref, ref)
    assert rec.is_perfect()
    assert rec.mask_voxel_count == int((ref.sum(axis=0) > 0).sum())


def test_uniform_prediction_reports_missing_correlations():
    _, ref = random_probability_pair(np.random.default_rng(1), tie_fraction=0)
    pred = np.full_like(ref, 1 / 3)
    rec = evaluate_pair(pred, ref)
    for t in TISSUES:
        assert rec.get(t, "pearson") is None and rec.get(t, "spearman") is None
        assert rec.get(t, "mse") is not None
    assert not rec.is_perfect()
    row = rec.to_csv().splitlines()[1].split(",")
    assert row[4] == "" and row[5] == ""


def test_metrics_ignore_changes_outside_mask():
    pred, ref = random_probability_pair(np.random.default_rng(2))
    outside = ref.sum(axis=0) == 0
    noisy = pred.copy()
    noisy[:, outside] = np.random.default_rng(3).random((3, int(outside.sum())))
    a, b = evaluate_pair(pred, ref), evaluate_pair(noisy, ref)
    assert a.values == b.values


def test_reliability_pair_is_symmetric_and_perfect_on_equal_inputs():
    p1, p2 = random_probability_pair(np.random.default_rng(4))
    mask = (p1.sum(axis=0) > 0) | (p2.sum(axis=0) > 0)
    assert reliability_pair(p1, p1, mask).is_perfect()
    ab, ba = reliability_pair(p1, p2, mask), reliability_pair(p2, p1, mask)
    for t in TISSUES:
        for m in METRICS:
            assert ab.get(t, m) == pytest.approx(ba.get(t, m), rel=1e-12)
    _assert_record_matches(ab, brute_record(p1, p2, mask))


def test_shared_head_mask_is_intersection():
    a = np.zeros((1, 3, 3, 3))
    b = np.zeros((1, 3, 3, 3))
    a[0, :2] = 1
    b[0, 1:] = 2
    np.testing.assert_array_equal(shared_head_mask(a, b)[1], True)
    assert shared_head_mask(a, b).sum() == 9


def test_csv_columns_and_repr_precision():
    _, ref = random_probability_pair(np.random.default_rng(5))
    lines = evaluate_pair(ref, ref).to_csv().splitlines()
    assert lines[0] == "tissue,dice,jaccard,hausdorff,pearson,spearman,mse,mask_voxels"
    assert [l.split(",")[0] for l in lines[1:]] == list(TISSUES)
    assert math.isclose(float(lines[1].split(",")[1]), 1.0)


def test_compare_rejects_mismatched_maps():
    with pytest.raises(DataError, match="incompatible"):
        evaluate_pair(np.ones((3, 2, 2, 2)), np.ones((3, 2, 2, 3)))
