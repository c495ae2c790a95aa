import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from aspectpatch.dataio import Sample, discretized_gaussian
from aspectpatch.errors import DegenerateSeries, DimensionMismatch, EmptyPatchSet
from aspectpatch.metrics import (BUCKET_LABELS, ImagePrediction, ae_bin_labels, ae_histogram, aggregate_patches,
                                 aspect_bucket, average_ranks, binary_accuracy, bucket_counts, bucket_mse, evaluate,
                                 lcc, mse, reduction_rate, rmse, srcc, sweep, sweep_plans, sweep_rows)
from aspectpatch.patchgrid import MP_GLOBAL_LOCAL, MP_LOCAL, MP_RANDOM, PatchPlan
from aspectpatch.ratings import RatingDistribution, emd, mean_score
from conftest import random_dists

ONE_HOT = RatingDistribution.one_hot
SMALL = dict(P=30, S=34, G=34)


class TruthStub:
    """Returns log-probabilities of a fixed distribution for every patch, counting calls."""

    def __init__(self, dist):
        self.logits = np.log(np.asarray(dist, dtype=np.float64))
        self.patches = 0

    def forward(self, x):
        x = np.asarray(x)
        if x.ndim == 3:
            self.patches += 1
            return self.logits.copy()
        self.patches += len(x)
        return np.tile(self.logits, (len(x), 1))


def test_aggregate_examples():
    d = RatingDistribution.uniform()
    assert aggregate_patches([d, d, d]) == d
    agg = aggregate_patches([ONE_HOT(1), ONE_HOT(3)])
    np.testing.assert_allclose(agg.probs, [0.5, 0, 0.5] + [0] * 7)
    assert mean_score(agg) == pytest.approx(2.0)
    with pytest.raises(EmptyPatchSet):
        aggregate_patches([])
    with pytest.raises(DimensionMismatch):
        aggregate_patches([np.full(10, 0.1), np.full(5, 0.2)])


def test_aggregate_order_invariant(rng):
    ds = list(random_dists(rng, 6))
    a = aggregate_patches(ds)
    b = aggregate_patches(ds[::-1])
    assert a == b and a.probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_lcc_examples():
    t = np.array([3.2, 5.1, 4.4, 6.0])
    assert lcc(t, t) == pytest.approx(1.0)
    assert lcc(-2 * t + 7, t) == pytest.approx(-1.0)
    assert lcc([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5)
    with pytest.raises(DegenerateSeries):
        lcc([1, 1, 1], [1, 2, 3])
    with pytest.raises(DegenerateSeries):
        lcc([1], [2])
    with pytest.raises(DimensionMismatch):
        lcc([1, 2], [1, 2, 3])


def test_srcc_examples():
    t = np.array([3.2, 5.1, 4.4, 6.0])
    assert srcc(np.exp(t), t) == pytest.approx(1.0)
    assert srcc([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5)
    assert srcc([1, 1, 2], [3, 3, 5]) == pytest.approx(1.0)
    np.testing.assert_allclose(average_ranks([10, 20, 10, 5]), [2.5, 4, 2.5, 1])


def test_correlations_match_scipy(rng):
    for _ in range(20):
        x = rng.normal(size=30)
        y = x + rng.normal(size=30)
        y[:5] = np.round(y[:5])  # a few ties
        x[3] = x[4]
        assert lcc(x, y) == pytest.approx(stats.pearsonr(x, y)[0], abs=1e-12)
        assert srcc(x, y) == pytest.approx(stats.spearmanr(x, y)[0], abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=3, max_size=20, unique=True), st.floats(0.1, 10), st.floats(-5, 5))
def test_correlation_invariances(xs, a, b):
    x = np.array(xs) / 10
    y = np.sin(x) + 0.01 * x
    if np.ptp(y) == 0:
        return
    assert lcc(a * x + b, y) == pytest.approx(lcc(x, y), abs=1e-9)
    assert srcc(np.arctan(x), y) == pytest.approx(srcc(x, y), abs=1e-12)


def test_mse_examples():
    assert mse([1, 2], [1, 2]) == 0
    assert mse([1.5, 2.5], [1, 2]) == pytest.approx(0.25)
    assert mse([1, 2], [2, 4]) == pytest.approx(2.5)
    assert rmse([1, 2], [2, 4]) == pytest.approx(math.sqrt(2.5))
    with pytest.raises(DimensionMismatch):
        mse([1], [1, 2])


def test_binary_accuracy_examples():
    assert binary_accuracy([4, 6], [4, 6]) == 1.0
    assert binary_accuracy([5.2, 4.8, 5.3], [4.9, 5.0, 5.1]) == pytest.approx(2 / 3)
    assert binary_accuracy([5.0, 5.0], [5.0, 5.0]) == 1.0


def test_ae_histogram():
    labels = ae_bin_labels()
    assert len(labels) == 21 and labels[0] == "0.0-0.1" and labels[-1] == "2.0-"
    h = ae_histogram([5.0, 5.05, 5.1, 5.35, 8.0], [5.0] * 5)
    assert h["0.0-0.1"] == 2 and h["0.1-0.2"] == 1 and h["0.3-0.4"] == 1 and h["2.0-"] == 1
    assert sum(h.values()) == 5


@pytest.mark.parametrize("ratio,label", [
    (600 / 400, "1.4-1.6"), (1.6, "1.6-"), (2.4, "1.6-"), (0.4, "0.4-0.6"), (0.25, "0.4-0.6"),
    (0.6, "0.6-0.8"), (0.99, "0.8-1.0"), (1.0, "1.0-1.2"),
])
def test_aspect_bucket(ratio, label):
    assert aspect_bucket(ratio) == label


def test_aspect_bucket_rejects_nonpositive():
    with pytest.raises(ValueError):
        aspect_bucket(0.0)


def _pred(score_p, score_t, ratio, name="x"):
    return ImagePrediction(name, discretized_gaussian(score_p), discretized_gaussian(score_t), ratio)


def test_bucket_mse_single_bucket_equals_global():
    preds = [_pred(5, 6, 1.1), _pred(4, 4.5, 1.05), _pred(7, 6, 1.19)]
    table = bucket_mse(preds)
    assert list(table) == ["1.0-1.2"]
    ps = [p.predicted_score for p in preds]
    ts = [p.ground_truth_score for p in preds]
    assert table["1.0-1.2"] == pytest.approx(mse(ps, ts), abs=1e-12)


def test_bucket_mse_recombines(rng):
    preds = [_pred(rng.uniform(2, 9), rng.uniform(2, 9), rng.uniform(0.3, 2.5), str(i)) for i in range(200)]
    table, counts = bucket_mse(preds), bucket_counts(preds)
    assert list(table) == list(BUCKET_LABELS)
    total = sum(table[k] * counts[k] for k in table) / len(preds)
    ps = [p.predicted_score for p in preds]
    ts = [p.ground_truth_score for p in preds]
    assert abs(total - mse(ps, ts)) < 1e-9


def test_reduction_rate():
    assert reduction_rate({"0.4-0.6": 0.4, "1.6-": 0.2}, {"0.4-0.6": 0.3, "1.6-": 0.25}) == pytest.approx(
        {"0.4-0.6": 0.25, "1.6-": -0.25})


def _samples(rng, n):
    out = []
    for i in range(n):
        h, w = (40, 70) if i % 2 else (60, 40)
        out.append(Sample(f"img{i}", rng.random((h, w, 3)), random_dists(rng, 1)[0]))
    return out


def test_evaluate_with_truth_stub(rng):
    samples = _samples(rng, 1)
    stub = TruthStub(samples[0].dist)
    plan = PatchPlan(MP_GLOBAL_LOCAL, m=3, **SMALL)
    rep = evaluate(stub, samples, plan)
    assert stub.patches == 10 and rep.patch_count == 10
    assert rep.lcc is None and rep.srcc is None and rep.undefined == ["lcc", "srcc"]
    assert rep.mse == pytest.approx(0, abs=1e-20) and rep.mean_emd == pytest.approx(0, abs=1e-7)
    assert rep.binary_accuracy == 1.0


def test_evaluate_report_contents(rng):
    samples = _samples(rng, 6)
    stub = TruthStub(np.full(10, 0.1))
    rep = evaluate(stub, samples, PatchPlan(MP_LOCAL, m=2, **SMALL))
    assert rep.n_images == 6 and stub.patches == 24
    assert rep.mean_emd == pytest.approx(np.mean([emd(np.full(10, 0.1), s.dist) for s in samples]), abs=1e-12)
    assert set(rep.mse_by_aspect_bucket) == {"0.4-0.6", "1.4-1.6"}
    d = rep.to_dict()
    assert set(d["metrics"]) == {"lcc", "srcc", "mse", "rmse", "mean_emd", "binary_accuracy"}
    assert len(d["predictions"]) == 6
    assert rep.to_json() == rep.to_json()


def test_sweep_table(rng):
    samples = _samples(rng, 4)
    table = sweep(TruthStub(np.full(10, 0.1)), samples, sweep_plans(**SMALL))
    assert sorted(table) == sorted([MP_RANDOM, MP_LOCAL, MP_GLOBAL_LOCAL])
    assert list(table[MP_RANDOM]) == [str(n) for n in range(1, 11)]
    assert list(table[MP_LOCAL]) == ["1", "4", "9"]
    assert list(table[MP_GLOBAL_LOCAL]) == ["2", "5", "10"]
    rows = sweep_rows(table)
    assert len(rows) == 16 and rows[0][0] == MP_GLOBAL_LOCAL
