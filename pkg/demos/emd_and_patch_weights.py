"""
EMD, certainty and patch weights
================================

Rating distributions live on ten ordered classes, so the distance between
two of them is the earth mover's distance computed from their cumulative
sums. This walk-through builds a few distributions, measures them, and
shows how a distance turns into a certainty and then into a patch weight.
"""
# %%
# A rating distribution is a normalized vote histogram.

import numpy as np

from aspectpatch.ratings import (EmdParams, RatingDistribution, certainty_array, emd, mean_score, normalize,
                                 patch_weight)

votes = [0, 1, 5, 20, 60, 70, 40, 10, 3, 1]
d = normalize(votes)
print("probabilities:", np.round(d.probs, 3))
print("aesthetics score (mean class):", round(mean_score(d), 3))

# %%
# Neighbouring one-hot distributions are sqrt(1/10) apart under r = 2;
# the two extremes are sqrt(9/10) apart.

one_hot = RatingDistribution.one_hot
print("emd(1, 2)  =", round(emd(one_hot(1), one_hot(2)), 6))
print("emd(1, 10) =", round(emd(one_hot(1), one_hot(10)), 6))
print("emd(1, 10), r=1 =", round(emd(one_hot(1), one_hot(10), r=1), 6))

# %%
# Certainty maps a distance to (0, 1]: ``max(eps, 1 - k * emd)``. With
# k = 1.2 anything farther than 1/1.2 is clamped to eps.

params = EmdParams()
distances = np.array([0.0, 0.1, 0.25, 0.5, 0.8, 0.9])
certainty = certainty_array(distances, params.k, params.epsilon)
for e, c in zip(distances, certainty):
    print(f"emd {e:4.2f} -> certainty {c:.6f}")

# %%
# The patch weight ``1 - c**beta`` is zero for a perfect patch and grows
# as certainty drops. Smaller beta makes the weight rise faster.

grid = np.array([1e-6, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0])
print("certainty " + " ".join(f"{c:7.2f}" for c in grid))
for beta in (0.2, 0.4, 1.0, 2.0, 4.0):
    print(f"beta {beta:3.1f}  " + " ".join(f"{w:7.4f}" for w in patch_weight(grid, beta)))
