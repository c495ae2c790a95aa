"""Finite-difference gradient checks shared by the unit and acceptance tests."""
import math

import numpy as np

from aspectpatch.loss import LossSpec, patch_loss_and_grad
from aspectpatch.scorer import ScorerConfig, _conv_forward, init_scorer
from oracles import emd2_ref, rel_err, softmax_ref

MINI = dict(conv_channels=(2, 3), input_min_side=16)


def mini(dtype="float32", seed=1):
    return init_scorer(ScorerConfig(dtype=dtype, **MINI), seed)


def random_case(rng, spec, lo=0.05, hi=0.95):
    """Random (logits, truth) with certainty inside (eps + lo, hi)."""
    eps = spec.params.epsilon
    while True:
        logits = rng.normal(0, 1.5, 10)
        truth = rng.dirichlet(np.full(10, 0.8))
        c = 1 - spec.params.k * emd2_ref(softmax_ref(logits), truth)
        if eps + lo < c < hi:
            return logits, truth


def loss_ref(spec, logits, truth):
    c = max(spec.params.epsilon, 1 - spec.params.k * emd2_ref(softmax_ref(logits), truth))
    f = -math.log(c) if spec.use_log else -c
    return (1 - c**spec.params.beta) * f if spec.use_weight else f


def pipeline_loss(scorer, x, truth, spec):
    values, g = patch_loss_and_grad(spec, scorer.forward(x).astype(np.float64), truth)
    return float(values.sum()), g


def kink_margin(scorer, x):
    """Smallest |pre-activation|; central differences are only valid away from ReLU kinks."""
    h, margin = np.asarray(x, np.float64), np.inf
    for i in range(len(scorer.config.conv_channels)):
        z, _ = _conv_forward(h, scorer.params[f"conv{i}.weight"].astype(np.float64),
                             scorer.params[f"conv{i}.bias"].astype(np.float64), scorer.config.stride)
        margin = min(margin, float(np.abs(z).min()))
        h = np.maximum(z, 0)
    return margin


def check_end_to_end(dtype, h, rng, margin=5e-3):
    """Relative error (norm-wise, over all parameters at once) against central differences."""
    spec = LossSpec.from_slug("ind-emd")
    while True:
        scorer = mini(dtype, seed=int(rng.integers(1000)))
        x = rng.random((2, 17, 17, 3))
        if kink_margin(scorer, x) > margin:
            break
    truth = rng.dirichlet(np.ones(10), size=2)
    _, g = pipeline_loss(scorer, x, truth, spec)
    grads = scorer.backward(g)
    analytic, numerics = [], []
    for name, w in scorer.params.items():
        numeric = np.zeros(w.shape)
        for i in range(w.size):
            old = w.flat[i]
            w.flat[i] = old + h
            scorer.touch()
            up = pipeline_loss(scorer, x, truth, spec)[0]
            w.flat[i] = old - h
            scorer.touch()
            down = pipeline_loss(scorer, x, truth, spec)[0]
            w.flat[i] = old
            numeric.flat[i] = (up - down) / (2 * h)
        analytic.append(grads[name].ravel())
        numerics.append(numeric.ravel())
    return rel_err(np.concatenate(analytic), np.concatenate(numerics))
