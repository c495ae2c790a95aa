"""
Aspect-ratio-preserving patches
===============================

An image is rescaled so its shorter edge is S, then cut into square local
patches of side P without any further resampling. A global patch squashes
the whole image into a square. This demo follows one wide image through the
three test-time strategies.
"""
# %%
# A synthetic 160 x 90 (width x height) picture.

import numpy as np

from aspectpatch.dataio import render_image
from aspectpatch.patchgrid import (MP_GLOBAL_LOCAL, MP_LOCAL, MP_RANDOM, PatchPlan, grid_offsets,
                                   rescale_shorter_edge, select_test_patches)

img = render_image(160, 90, np.random.default_rng(0))
print("source shape (h, w, c):", img.shape)

# %%
# Shorter-edge rescale to S = 342 keeps the aspect ratio.

rescaled = rescale_shorter_edge(img, 342)
print("rescaled shape:", rescaled.shape, "ratio before/after:",
      round(img.shape[1] / img.shape[0], 4), round(rescaled.shape[1] / rescaled.shape[0], 4))

# %%
# Grid offsets are spread evenly from 0 to dim - P; a single patch is centered.

for m in (1, 2, 3):
    print(f"m={m}: x offsets {grid_offsets(rescaled.shape[1], 299, m)}, "
          f"y offsets {grid_offsets(rescaled.shape[0], 299, m)}")

# %%
# The three strategies and their patch counts.

rng = np.random.default_rng(1)
for plan in (PatchPlan(MP_RANDOM, n_random=5), PatchPlan(MP_LOCAL, m=2), PatchPlan(MP_GLOBAL_LOCAL, m=3)):
    patches = select_test_patches(rescaled, plan, rng, rescaled=True)
    kinds = [p.kind for p in patches]
    print(f"{plan.strategy:15s} {len(patches):2d} patches "
          f"({kinds.count('local')} local, {kinds.count('global')} global)")

# %%
# Local patches are exact copies of the source pixels.

patches = select_test_patches(rescaled, PatchPlan(MP_LOCAL, m=3), rescaled=True)
x, y = patches[4].offset
print("centre patch equals source rectangle:",
      np.array_equal(patches[4].pixels, rescaled[y : y + 299, x : x + 299]))
