"""Training loops: square-resize pre-training and the two patch strategies.

All three phases share one epoch loop. Per epoch the training images are
visited in a freshly shuffled order and cut into mini-batches of
``batch_images`` images. Each image contributes ``patches_per_image`` new
random crops (8 for the collective strategy, 1 otherwise); the image loss is
the mean over its patches and the batch loss the mean over its images, so a
collective run with one patch per image is the individual strategy.

Everything random (shuffles, crop offsets, flips) is drawn from one seeded
generator in a fixed order, so a plan and seed determine the checkpoint
bytes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import EmptyDataset, StateError
from .loss import (COLLECTIVE, INDIVIDUAL, PRETRAIN_SCHEDULE, LossSpec, emd_loss_and_grad,
                   patch_loss_and_grad)
from .metrics import evaluate
from .patchgrid import MP_GLOBAL_LOCAL, PatchPlan, random_offset, rescale_shorter_edge, resize_bilinear
from .scorer import (ConvScorer, OptimizerConfig, OptimizerState, lr_at_epoch, save_checkpoint, sgd_step,
                     snapshot)

log = logging.getLogger(__name__)

PRETRAIN = "pretrain_square"
PHASES = (PRETRAIN, COLLECTIVE, INDIVIDUAL)
COLLECTIVE_PATCHES = 8


@dataclass(frozen=True)
class TrainPlan:
    phase: str
    loss: LossSpec | None = None
    epochs: int = 1
    batch_images: int = 32
    patches_per_image: int | None = None
    S: int = 342
    P: int = 299
    seed: int = 0
    validation_interval: int = 1
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    val_plan: PatchPlan | None = None
    flip: bool | None = None

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")
        if self.phase != PRETRAIN:
            if self.loss is None:
                raise ValueError(f"phase {self.phase} needs a loss")
            if self.loss.strategy != self.phase:
                raise ValueError(f"loss {self.loss.slug} does not belong to the {self.phase} strategy")
        if self.patches_per_image is None:
            object.__setattr__(self, "patches_per_image", COLLECTIVE_PATCHES if self.phase == COLLECTIVE else 1)
        if self.flip is None:
            object.__setattr__(self, "flip", self.phase == PRETRAIN)
        if self.val_plan is None:
            object.__setattr__(self, "val_plan", PatchPlan(MP_GLOBAL_LOCAL, m=2, P=self.P, S=self.S, G=self.S))
        if min(self.epochs, self.batch_images, self.patches_per_image, self.validation_interval) < 1:
            raise ValueError("epochs, batch_images, patches_per_image and validation_interval must be >= 1")
        if self.P > self.S:
            raise ValueError("patch side exceeds rescale target")

    @classmethod
    def for_loss(cls, slug: str, **overrides) -> "TrainPlan":
        """Plan with the tabulated learning-rate schedule and epoch count for ``slug``."""
        loss = overrides.pop("loss", None) or LossSpec.from_slug(slug)
        sched = loss.schedule
        opt = overrides.pop("optimizer", None) or OptimizerConfig(sched.init_lr, sched.decay_factor,
                                                                  sched.decay_interval)
        overrides.setdefault("epochs", sched.epochs)
        return cls(phase=loss.strategy, loss=loss, optimizer=opt, **overrides)

    @classmethod
    def pretrain(cls, **overrides) -> "TrainPlan":
        s = PRETRAIN_SCHEDULE
        opt = overrides.pop("optimizer", None) or OptimizerConfig(s.init_lr, s.decay_factor, s.decay_interval)
        overrides.setdefault("epochs", s.epochs)
        return cls(phase=PRETRAIN, optimizer=opt, **overrides)


@dataclass
class TrainResult:
    scorer: ConvScorer
    best_epoch: int
    history: list[tuple[int, dict]]
    final: ConvScorer
    log_lines: list[str] = field(default_factory=list)


def select_best(history, by: str = "lcc") -> int:
    """Epoch with the highest validation LCC; ties go to lower RMSE, then earlier.

    With ``by="mean_emd"`` the lowest mean EMD wins instead (ties: earlier).
    Undefined metrics rank last.
    """
    history = list(history)
    if not history:
        raise StateError("empty training history")

    def key(item):
        epoch, m = item
        if by == "mean_emd":
            v = m.get("mean_emd")
            return (v if v is not None else np.inf, epoch)
        v, r = m.get("lcc"), m.get("rmse")
        return (-(v if v is not None else -np.inf), r if r is not None else np.inf, epoch)

    return min(history, key=key)[0]


def _prepare(data, plan: TrainPlan):
    train = data.samples("train") if hasattr(data, "samples") else list(data)
    val = data.samples("validation") if hasattr(data, "samples") else []
    if not train:
        raise EmptyDataset("no training images")
    if plan.phase == PRETRAIN:
        images = [resize_bilinear(s.image, plan.S, plan.S) for s in train]
    else:
        images = [rescale_shorter_edge(s.image, plan.S) for s in train]
    truths = np.stack([np.asarray(s.dist, dtype=np.float64) for s in train])
    val_rescaled = {s.image_id: rescale_shorter_edge(s.image, plan.val_plan.S) for s in val}
    return images, truths, val, val_rescaled


def _validate(scorer, val, val_rescaled, plan: TrainPlan) -> dict:
    if not val:
        return {"lcc": None, "srcc": None, "mse": None, "rmse": None, "mean_emd": None, "binary_accuracy": None}
    return evaluate(scorer, val, plan.val_plan, seed=plan.seed, rescaled=val_rescaled).metrics()


def _fmt(v):
    return "nan" if v is None else f"{v:.6f}"


def _crop_batch(images, idx, plan: TrainPlan, rng):
    P, out = plan.P, []
    for i in idx:
        img = images[i]
        h, w = img.shape[:2]
        for _ in range(plan.patches_per_image):
            x, y = random_offset(w, h, P, rng)
            patch = img[y : y + P, x : x + P]
            if plan.flip and rng.random() < 0.5:
                patch = patch[:, ::-1]
            out.append(patch)
    return np.stack(out)


def _fit(data, scorer: ConvScorer, plan: TrainPlan, out_dir=None) -> TrainResult:
    images, truths, val, val_rescaled = _prepare(data, plan)
    scorer = scorer.copy()
    rng = np.random.default_rng(plan.seed)
    state = OptimizerState(plan.optimizer)
    select_by = "mean_emd" if plan.phase == PRETRAIN else "lcc"
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    history = [(0, _validate(scorer, val, val_rescaled, plan))]
    # the untrained network is logged but never selected
    best_epoch, best = 0, scorer.copy()
    header = "epoch\tlr\ttrain_loss\tval_lcc\tval_rmse\tval_mean_emd"
    lines = [header, "\t".join(["0", _fmt(None), _fmt(None), _fmt(history[0][1]["lcc"]),
                                _fmt(history[0][1]["rmse"]), _fmt(history[0][1]["mean_emd"])])]
    n, ppi = len(images), plan.patches_per_image
    epoch = 0
    try:
        for epoch in range(1, plan.epochs + 1):
            lr = lr_at_epoch(plan.optimizer, epoch - 1)
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, plan.batch_images):
                idx = order[start : start + plan.batch_images]
                batch = _crop_batch(images, idx, plan, rng)
                truth = np.repeat(truths[idx], ppi, axis=0)
                logits = scorer.forward(batch)
                if plan.phase == PRETRAIN:
                    values, g = emd_loss_and_grad(logits, truth)
                else:
                    values, g = patch_loss_and_grad(plan.loss, logits, truth)
                total += float(values.sum()) / ppi
                grads = scorer.backward(g / (ppi * len(idx)))
                sgd_step(scorer, grads, state, lr)
            train_loss = total / n
            if epoch % plan.validation_interval == 0 or epoch == plan.epochs:
                m = _validate(scorer, val, val_rescaled, plan)
                history.append((epoch, m))
                if select_best(history[1:], select_by) == epoch:
                    best_epoch, best = epoch, scorer.copy()
                    if out is not None:
                        save_checkpoint(out / "best.mpak", snapshot(best, epoch=epoch))
            else:
                m = {"lcc": None, "rmse": None, "mean_emd": None}
            line = "\t".join([str(epoch), f"{lr:.6g}", _fmt(train_loss), _fmt(m["lcc"]), _fmt(m["rmse"]),
                              _fmt(m["mean_emd"])])
            lines.append(line)
            log.info("%s", line)
            if out is not None:
                save_checkpoint(out / "last.mpak", snapshot(scorer, state, epoch, rng, phase=plan.phase))
    except KeyboardInterrupt:
        if out is not None:
            save_checkpoint(out / "interrupted.mpak", snapshot(scorer, state, epoch, rng, phase=plan.phase))
        raise
    finally:
        if out is not None:
            (out / "train.log").write_text("\n".join(lines) + "\n")
    if not val:
        best_epoch, best = epoch, scorer.copy()
    if out is not None:
        if best_epoch == 0 or not val:
            save_checkpoint(out / "best.mpak", snapshot(best, epoch=0))
        (out / "best_epoch.txt").write_text(f"{best_epoch}\n")
    return TrainResult(best, best_epoch, history, scorer, lines)


def pretrain_square(data, init: ConvScorer, plan: TrainPlan, out_dir=None) -> TrainResult:
    """Pre-training on square-resized images with plain EMD loss.

    Images are resized to ``S x S``, then randomly cropped to ``P x P`` and
    randomly flipped. Returns the epoch with the lowest validation mean EMD.
    """
    if plan.phase != PRETRAIN:
        raise ValueError("plan is not a pre-training plan")
    return _fit(data, init, plan, out_dir)


def train_collective(data, init: ConvScorer, plan: TrainPlan, out_dir=None) -> TrainResult:
    """Collective strategy: a fresh set of random patches per image and epoch."""
    if plan.phase != COLLECTIVE:
        raise ValueError("plan is not a collective plan")
    return _fit(data, init, plan, out_dir)


def train_individual(data, init: ConvScorer, plan: TrainPlan, out_dir=None) -> TrainResult:
    """Individual strategy: one random patch per image and epoch."""
    if plan.phase != INDIVIDUAL:
        raise ValueError("plan is not an individual plan")
    return _fit(data, init, plan, out_dir)


def train(data, init: ConvScorer, plan: TrainPlan, out_dir=None) -> TrainResult:
    return {PRETRAIN: pretrain_square, COLLECTIVE: train_collective, INDIVIDUAL: train_individual}[plan.phase](
        data, init, plan, out_dir)


def with_geometry(plan: TrainPlan, S: int, P: int, G: int | None = None) -> TrainPlan:
    val = replace(plan.val_plan, S=S, P=P, G=G or S)
    return replace(plan, S=S, P=P, val_plan=val)
