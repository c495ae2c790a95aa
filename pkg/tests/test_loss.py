import math

import numpy as np
import pytest

from aspectpatch.errors import DimensionMismatch, EmptyPatchSet
from aspectpatch.loss import (TRAINING_SCHEDULES, VARIANTS, Schedule, LossSpec, PatchPrediction, collective_loss,
                              emd_loss_and_grad, loss_gradient, patch_loss_and_grad, per_patch_loss, softmax)
from aspectpatch.ratings import EmdParams, RatingDistribution, certainty_array, emd
from gradcheck import loss_ref, random_case
from oracles import central_diff, emd2_ref, rel_err, softmax_ref

FULL_AT_HALF = 0.242141716744801 * math.log(2)  # weight(0.5) * -log(0.5)


def prediction_with_certainty(c, k=1.2):
    """Logits whose softmax sits at EMD (1 - c) / k from a one-hot(1) truth."""
    a = (1 - c) / k / math.sqrt(0.9)
    p = np.zeros(10)
    p[0], p[9] = 1 - a, a
    with np.errstate(divide="ignore"):
        logits = np.where(p > 0, np.log(np.where(p > 0, p, 1)), -1e4)
    return PatchPrediction(logits), RatingDistribution.one_hot(1)


def test_variants_enumerate_all_rows():
    assert len(VARIANTS) == 8
    assert len(set(VARIANTS.values())) == 8
    for slug in VARIANTS:
        assert LossSpec.from_slug(slug).slug == slug
    with pytest.raises(ValueError, match="ind-emd-log"):
        LossSpec.from_slug("bogus")


def test_schedules_copied():
    assert TRAINING_SCHEDULES["col-emd-simple"] == Schedule(1e-4, 0.85, 5, 50)
    assert TRAINING_SCHEDULES["col-emd-weighted"] == Schedule(1e-3, 0.85, 5, 50)
    assert TRAINING_SCHEDULES["col-emd-log"] == Schedule(1e-3, 0.7, 10, 50)
    assert TRAINING_SCHEDULES["col-emd"] == Schedule(1e-3, 0.7, 10, 50)
    assert TRAINING_SCHEDULES["ind-emd-simple"] == Schedule(1e-3, 0.9, 10, 200)
    assert TRAINING_SCHEDULES["ind-emd-weighted"] == Schedule(1e-2, 0.9, 10, 200)
    assert TRAINING_SCHEDULES["ind-emd-log"] == Schedule(1e-3, 0.9, 10, 200)
    assert TRAINING_SCHEDULES["ind-emd"] == Schedule(1e-2, 0.9, 10, 200)


def test_softmax_prediction():
    pred = PatchPrediction(np.array([0.0, 1.0, 2.0] + [0.0] * 7))
    np.testing.assert_allclose(pred.dist.probs, softmax_ref(pred.logits), atol=1e-12)


def test_construction_helper_hits_certainty():
    pred, truth = prediction_with_certainty(0.5)
    assert 1 - 1.2 * emd(pred.dist, truth) == pytest.approx(0.5, abs=1e-12)


def test_per_patch_examples():
    truth = RatingDistribution(softmax(np.linspace(-1, 1, 10)))
    perfect = PatchPrediction(np.linspace(-1, 1, 10))
    assert per_patch_loss(LossSpec.from_slug("ind-emd"), perfect, truth) == pytest.approx(0.0, abs=1e-12)
    pred, truth = prediction_with_certainty(0.5)
    assert per_patch_loss(LossSpec.from_slug("ind-emd"), pred, truth) == pytest.approx(FULL_AT_HALF, abs=1e-9)
    assert per_patch_loss(LossSpec.from_slug("ind-emd-simple"), pred, truth) == pytest.approx(-0.5, abs=1e-9)
    assert per_patch_loss(LossSpec.from_slug("ind-emd-log"), pred, truth) == pytest.approx(math.log(2), abs=1e-9)
    assert per_patch_loss(LossSpec.from_slug("ind-emd-weighted"), pred, truth) == pytest.approx(
        -0.242141716744801 * 0.5, abs=1e-9)


def test_per_patch_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        per_patch_loss(LossSpec(), PatchPrediction(np.zeros(5)), RatingDistribution.uniform(10))


def test_collective_examples():
    spec = LossSpec.from_slug("col-emd")
    half, truth = prediction_with_certainty(0.5)
    exact, _ = prediction_with_certainty(1.0)
    assert collective_loss(spec, [exact] * 3, truth) == pytest.approx(0.0, abs=1e-12)
    assert collective_loss(spec, [half, exact], truth) == pytest.approx(FULL_AT_HALF / 2, abs=1e-9)
    assert collective_loss(spec, [half], truth) == pytest.approx(per_patch_loss(spec, half, truth), abs=1e-15)
    with pytest.raises(EmptyPatchSet):
        collective_loss(spec, [], truth)


@pytest.mark.parametrize("slug", list(VARIANTS))
def test_collective_mean_idempotent(slug, rng):
    spec = LossSpec.from_slug(slug)
    logits, truth = random_case(rng, spec)
    pred = PatchPrediction(logits)
    assert collective_loss(spec, [pred] * 5, truth) == pytest.approx(per_patch_loss(spec, pred, truth), rel=1e-12)


@pytest.mark.parametrize("slug", list(VARIANTS))
def test_loss_matches_reference(slug, rng):
    spec = LossSpec.from_slug(slug)
    for _ in range(10):
        logits, truth = random_case(rng, spec)
        assert per_patch_loss(spec, PatchPrediction(logits), truth) == pytest.approx(loss_ref(spec, logits, truth),
                                                                                      rel=1e-10)


@pytest.mark.parametrize("slug", list(VARIANTS))
def test_gradient_matches_finite_differences(slug, rng):
    spec = LossSpec.from_slug(slug)
    for _ in range(20):
        logits, truth = random_case(rng, spec)
        analytic = loss_gradient(spec, PatchPrediction(logits), truth)
        numeric = central_diff(lambda z: loss_ref(spec, z, truth), logits, 1e-5)
        assert rel_err(analytic, numeric) < 1e-4


@pytest.mark.parametrize("slug", ["ind-emd", "ind-emd-weighted"])
def test_stop_weight_gradient_holds_weight_fixed(slug, rng):
    spec = LossSpec.from_slug(slug, stop_weight_gradient=True)
    plain = LossSpec.from_slug(slug.replace("-weighted", "-simple") if "weighted" in slug else "ind-emd-log")
    logits, truth = random_case(rng, spec)
    c = 1 - 1.2 * emd2_ref(softmax_ref(logits), truth)
    w = 1 - c**0.4
    analytic = loss_gradient(spec, PatchPrediction(logits), truth)
    np.testing.assert_allclose(analytic, w * loss_gradient(plain, PatchPrediction(logits), truth), rtol=1e-10)


@pytest.mark.parametrize("slug", list(VARIANTS))
def test_gradient_zero_at_perfect_prediction(slug):
    logits = np.linspace(-2, 1, 10)
    g = loss_gradient(LossSpec.from_slug(slug), PatchPrediction(logits), softmax(logits))
    np.testing.assert_array_equal(g, np.zeros(10))


def test_gradient_zero_when_clamped():
    spec = LossSpec.from_slug("ind-emd")
    logits = np.array([-50.0] * 9 + [50.0])
    g = loss_gradient(spec, PatchPrediction(logits), RatingDistribution.one_hot(1))
    assert certainty_array(emd(softmax(logits), RatingDistribution.one_hot(1)), 1.2) == spec.params.epsilon
    np.testing.assert_array_equal(g, np.zeros(10))


@pytest.mark.parametrize("slug", list(VARIANTS))
def test_gradient_shift_invariant(slug, rng):
    spec = LossSpec.from_slug(slug)
    logits, truth = random_case(rng, spec)
    g0 = loss_gradient(spec, PatchPrediction(logits), truth)
    g1 = loss_gradient(spec, PatchPrediction(logits + 3.7), truth)
    np.testing.assert_allclose(g0, g1, atol=1e-12)
    assert abs(g0.sum()) < 1e-12


def test_gradients_require_r2():
    with pytest.raises(ValueError):
        patch_loss_and_grad(LossSpec(params=EmdParams(r=1)), np.zeros(10), np.full(10, 0.1))


def test_batched_matches_single(rng):
    spec = LossSpec.from_slug("ind-emd")
    cases = [random_case(rng, spec) for _ in range(6)]
    logits = np.stack([c[0] for c in cases])
    truths = np.stack([c[1] for c in cases])
    values, grads = patch_loss_and_grad(spec, logits, truths)
    for (z, t), v, g in zip(cases, values, grads):
        assert v == pytest.approx(per_patch_loss(spec, PatchPrediction(z), t), rel=1e-12)
        np.testing.assert_allclose(g, loss_gradient(spec, PatchPrediction(z), t), rtol=1e-12)


def test_plain_emd_loss_gradient(rng):
    logits, truth = rng.normal(size=10), rng.dirichlet(np.ones(10))
    value, grad = emd_loss_and_grad(logits, truth)
    assert value == pytest.approx(emd2_ref(softmax_ref(logits), truth), rel=1e-12)
    numeric = central_diff(lambda z: emd2_ref(softmax_ref(z), truth), logits)
    assert rel_err(grad, numeric) < 1e-6


def test_minimum_values_at_perfect_prediction():
    pred, truth = prediction_with_certainty(1.0)
    values = {slug: per_patch_loss(LossSpec.from_slug(slug), pred, truth) for slug in VARIANTS}
    assert values["ind-emd-simple"] == pytest.approx(-1.0)
    assert values["ind-emd-log"] == pytest.approx(0.0, abs=1e-12)
    assert values["ind-emd"] == pytest.approx(0.0, abs=1e-12)
    assert values["ind-emd-weighted"] == pytest.approx(0.0, abs=1e-12)


def test_log_variants_minimized_by_perfect_prediction():
    for slug in ("ind-emd", "ind-emd-log", "ind-emd-simple"):
        spec = LossSpec.from_slug(slug)
        best = per_patch_loss(spec, *prediction_with_certainty(1.0))
        for c in np.linspace(0.01, 0.99, 50):
            assert per_patch_loss(spec, *prediction_with_certainty(c)) > best


def test_weighted_variant_dips_below_zero_inside():
    # the weighted term is 0 at c = 1 and as c -> 0, negative in between
    spec = LossSpec.from_slug("ind-emd-weighted")
    cs = np.linspace(0.01, 0.99, 99)
    values = [per_patch_loss(spec, *prediction_with_certainty(c)) for c in cs]
    assert max(values) < 0
    c_star = cs[int(np.argmin(values))]
    assert c_star == pytest.approx((1 + 0.4) ** (-1 / 0.4), abs=0.01)


def test_full_variant_monotone_in_emd():
    spec = LossSpec.from_slug("ind-emd")
    values = [per_patch_loss(spec, *prediction_with_certainty(c)) for c in np.linspace(0.99, 0.01, 60)]
    assert all(b >= a for a, b in zip(values, values[1:]))
