"""
The eight loss variants
=======================

Each variant combines a strategy (collective or individual), an optional
log, and an optional patch weight. Here we trace every variant along the
certainty axis and check one analytic gradient by finite differences.
"""
# %%
# Build predictions at a chosen certainty against a one-hot truth: move
# probability mass ``a`` from class 1 to class 10.

import math

import numpy as np

from aspectpatch.loss import VARIANTS, LossSpec, PatchPrediction, collective_loss, loss_gradient, per_patch_loss
from aspectpatch.ratings import RatingDistribution, emd

truth = RatingDistribution.one_hot(1)


def prediction_at(c, k=1.2):
    a = (1 - c) / k / math.sqrt(0.9)
    logits = np.full(10, -1e4)
    logits[0], logits[9] = math.log(1 - a), (math.log(a) if a > 0 else -1e4)
    return PatchPrediction(logits)


for c in (0.9, 0.5):
    print(f"target certainty {c}: measured {1 - 1.2 * emd(prediction_at(c).dist, truth):.6f}")

# %%
# Loss along the certainty axis. The log variants keep falling towards
# c = 1; the plain weighted variant bottoms out near c = 0.43 because its
# weight vanishes as the prediction gets perfect.

cs = [0.05, 0.2, 0.43, 0.6, 0.8, 0.95, 1.0]
print("certainty        " + " ".join(f"{c:8.2f}" for c in cs))
for slug in VARIANTS:
    spec = LossSpec.from_slug(slug)
    print(f"{slug:17s}" + " ".join(f"{per_patch_loss(spec, prediction_at(c), truth):8.4f}" for c in cs))

# %%
# The collective loss is the mean of the per-patch losses of one image.

spec = LossSpec.from_slug("col-emd")
patches = [prediction_at(c) for c in (0.3, 0.6, 0.9)]
print("collective:", round(collective_loss(spec, patches, truth), 6))
print("mean of parts:", round(np.mean([per_patch_loss(spec, p, truth) for p in patches]), 6))

# %%
# Analytic logit gradient versus central differences.

rng = np.random.default_rng(0)
spec = LossSpec.from_slug("ind-emd")
logits = rng.normal(0, 1, 10)
soft_truth = RatingDistribution(rng.dirichlet(np.ones(10)))
analytic = loss_gradient(spec, PatchPrediction(logits), soft_truth)
numeric = np.zeros(10)
for i in range(10):
    step = np.zeros(10)
    step[i] = 1e-5
    up = per_patch_loss(spec, PatchPrediction(logits + step), soft_truth)
    down = per_patch_loss(spec, PatchPrediction(logits - step), soft_truth)
    numeric[i] = (up - down) / 2e-5
print("relative error:", np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric))
