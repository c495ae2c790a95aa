"""
Training and evaluating on synthetic data
=========================================

A fixed teacher labels procedural images with rating distributions, so a
scorer can be trained and evaluated end to end on a laptop. The images are
small (about 64 to 128 pixels), so the patch geometry is scaled down from
the full-size defaults (S = 342, P = 299) to S = 40, P = 35.

Takes about a minute.
"""
# %%
# Generate and split a dataset.

import logging

from aspectpatch.dataio import synth_generate
from aspectpatch.metrics import evaluate, sweep, sweep_plans, sweep_rows
from aspectpatch.patchgrid import MP_GLOBAL_LOCAL, PatchPlan
from aspectpatch.scorer import ScorerConfig, init_scorer
from aspectpatch.trainer import TrainPlan, pretrain_square, train_collective, train_individual, with_geometry

logging.basicConfig(level=logging.WARNING)
S, P = 40, 35
synth = synth_generate(500, seed=0)
data = synth.dataset(seed=0)
print({name: len(data.split(name)) for name in ("train", "validation", "test")})

# %%
# Individual strategy: one random patch per image and epoch.

config = ScorerConfig(conv_channels=(16, 32, 64))
plan = with_geometry(TrainPlan.for_loss("ind-emd", epochs=100, batch_images=16, validation_interval=5), S, P)
individual = train_individual(data, init_scorer(config, seed=0), plan)
for epoch, m in individual.history[::4]:
    print(f"epoch {epoch:3d}  val LCC {m['lcc']:+.3f}  val mean EMD {m['mean_emd']:.4f}")
print("selected epoch:", individual.best_epoch)

# %%
# Collective strategy: square-resize pre-training, then eight patches per image.

pre = with_geometry(TrainPlan.pretrain(epochs=10, batch_images=16), S, P)
warm = pretrain_square(data, init_scorer(config, seed=0), pre).scorer
col = with_geometry(TrainPlan.for_loss("col-emd", epochs=10, batch_images=16), S, P)
collective = train_collective(data, warm, col)
print("collective selected epoch:", collective.best_epoch)

# %%
# The built-in test split holds only 4% of the images, so score 300 fresh
# images from the same teacher instead, under MP-GlobalLocal with a 2 x 2 grid.

fresh = synth_generate(300, seed=1).dataset(seed=0)
held_out = [s for name in ("train", "validation", "test") for s in fresh.samples(name)]
report = evaluate(individual.scorer, held_out, PatchPlan(MP_GLOBAL_LOCAL, m=2, P=P, S=S, G=S))
print({k: round(v, 4) for k, v in report.metrics().items() if v is not None})
print("MSE by aspect bucket:", {k: round(v, 3) for k, v in report.mse_by_aspect_bucket.items()})

# %%
# LCC against the number of test patches for every strategy.

table = sweep(individual.scorer, held_out, sweep_plans(P=P, S=S, G=S))
for strategy, count, m in sweep_rows(table):
    print(f"{strategy:15s} {count:2d}  LCC {m['lcc']:+.3f}  RMSE {m['rmse']:.3f}")
