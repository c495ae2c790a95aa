"""Multi-patch prediction and the evaluation suite.

An image's predicted distribution is the plain average of the softmax
distributions of its test patches; its score is the mean of that average.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSeries, DimensionMismatch, EmptyPatchSet
from .loss import softmax
from .patchgrid import (MP_GLOBAL_LOCAL, MP_LOCAL, MP_RANDOM, PatchPlan, rescale_shorter_edge,
                        select_test_patches)
from .ratings import RatingDistribution, emd_array, mean_score

BUCKET_EDGES = (0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6)
BUCKET_LABELS = ("0.4-0.6", "0.6-0.8", "0.8-1.0", "1.0-1.2", "1.2-1.4", "1.4-1.6", "1.6-")
AE_BIN_WIDTH = 0.1
AE_BIN_COUNT = 20  # plus one open bin for errors >= 2.0
BINARY_THRESHOLD = 5.0


def aggregate_patches(dists) -> RatingDistribution:
    """Entrywise mean of the patch distributions."""
    arrs = [d.probs if isinstance(d, RatingDistribution) else np.asarray(d, dtype=np.float64)
            for d in dists]
    if not arrs:
        raise EmptyPatchSet("no patch distributions to aggregate")
    if len({a.shape for a in arrs}) != 1:
        raise DimensionMismatch("patch distributions have different class counts")
    return RatingDistribution(np.mean(np.stack(arrs), axis=0))


def _pair(pred, truth, min_len=1):
    x = np.asarray(pred, dtype=np.float64).reshape(-1)
    y = np.asarray(truth, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise DimensionMismatch(f"series lengths differ: {x.size} vs {y.size}")
    if x.size < min_len:
        raise DegenerateSeries(f"need at least {min_len} values, got {x.size}")
    return x, y


def lcc(pred, truth) -> float:
    """Pearson linear correlation coefficient."""
    x, y = _pair(pred, truth, 2)
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = dx @ dx, dy @ dy
    if sxx == 0 or syy == 0:
        raise DegenerateSeries("correlation undefined for a constant series")
    return float(np.clip((dx @ dy) / (math.sqrt(sxx) * math.sqrt(syy)), -1.0, 1.0))


def average_ranks(values) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    sorted_v = v[order]
    ranks = np.empty(v.size)
    start = 0
    for end in range(1, v.size + 1):
        if end == v.size or sorted_v[end] != sorted_v[start]:
            ranks[order[start:end]] = 0.5 * (start + end - 1) + 1.0
            start = end
    return ranks


def srcc(pred, truth) -> float:
    """Spearman rank correlation (Pearson on average ranks)."""
    x, y = _pair(pred, truth, 2)
    return lcc(average_ranks(x), average_ranks(y))


def mse(pred, truth) -> float:
    x, y = _pair(pred, truth)
    return float(np.mean((x - y) ** 2))


def rmse(pred, truth) -> float:
    return math.sqrt(mse(pred, truth))


def binary_accuracy(pred, truth, threshold: float = BINARY_THRESHOLD) -> float:
    """Agreement of the labels ``score > threshold`` (scores equal to it are negative)."""
    x, y = _pair(pred, truth)
    return float(np.mean((x > threshold) == (y > threshold)))


def ae_bin_labels() -> list[str]:
    labels = [f"{i * AE_BIN_WIDTH:.1f}-{(i + 1) * AE_BIN_WIDTH:.1f}" for i in range(AE_BIN_COUNT)]
    return labels + [f"{AE_BIN_COUNT * AE_BIN_WIDTH:.1f}-"]


def ae_histogram(pred, truth) -> dict[str, int]:
    """Counts of absolute score errors in 0.1-wide bins, last bin open-ended."""
    x, y = _pair(pred, truth)
    idx = np.floor(np.abs(x - y) / AE_BIN_WIDTH + 1e-9).astype(np.int64)
    idx = np.minimum(idx, AE_BIN_COUNT)
    counts = np.bincount(idx, minlength=AE_BIN_COUNT + 1)
    return dict(zip(ae_bin_labels(), (int(c) for c in counts)))


def aspect_bucket(ratio: float) -> str:
    """Bucket label for a height/width ratio; below 0.4 folds into the first bucket."""
    if not ratio > 0:
        raise ValueError(f"aspect ratio must be positive, got {ratio}")
    i = int(np.searchsorted(BUCKET_EDGES, ratio, side="right")) - 1
    return BUCKET_LABELS[min(max(i, 0), len(BUCKET_LABELS) - 1)]


@dataclass(frozen=True)
class ImagePrediction:
    image_id: str
    predicted_dist: np.ndarray
    ground_truth_dist: np.ndarray
    aspect_ratio: float

    @property
    def predicted_score(self) -> float:
        return mean_score(self.predicted_dist)

    @property
    def ground_truth_score(self) -> float:
        return mean_score(self.ground_truth_dist)

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "aspect_ratio": self.aspect_ratio,
            "predicted_score": self.predicted_score,
            "ground_truth_score": self.ground_truth_score,
            "predicted_dist": [float(v) for v in self.predicted_dist],
            "ground_truth_dist": [float(v) for v in self.ground_truth_dist],
        }


def bucket_mse(preds) -> dict[str, float]:
    """Score MSE per aspect-ratio bucket; empty buckets are left out."""
    groups: dict[str, list] = {}
    for p in preds:
        groups.setdefault(aspect_bucket(p.aspect_ratio), []).append(p)
    return {
        label: mse([p.predicted_score for p in groups[label]], [p.ground_truth_score for p in groups[label]])
        for label in BUCKET_LABELS if label in groups
    }


def bucket_counts(preds) -> dict[str, int]:
    counts = {}
    for p in preds:
        label = aspect_bucket(p.aspect_ratio)
        counts[label] = counts.get(label, 0) + 1
    return {label: counts[label] for label in BUCKET_LABELS if label in counts}


def reduction_rate(baseline: dict[str, float], improved: dict[str, float]) -> dict[str, float]:
    """Per-bucket ``(mse_baseline - mse_improved) / mse_baseline``."""
    return {k: (baseline[k] - improved[k]) / baseline[k]
            for k in BUCKET_LABELS if k in baseline and k in improved and baseline[k] > 0}


# ---------------------------------------------------------------- prediction


def predict_distribution(scorer, image, plan: PatchPlan, rng=None, rescaled: bool = False) -> np.ndarray:
    """Averaged patch distribution for one image."""
    patches = select_test_patches(image, plan, rng, rescaled=rescaled)
    by_side: dict[int, list] = {}
    for p in patches:
        by_side.setdefault(p.side, []).append(p.pixels)
    dists = [softmax(scorer.forward(np.stack(group))) for _, group in sorted(by_side.items())]
    return aggregate_patches(np.concatenate(dists)).probs


def predict_images(scorer, samples, plan: PatchPlan, seed: int = 0, rescaled=None) -> list[ImagePrediction]:
    """Predictions for a list of :class:`~aspectpatch.dataio.Sample`.

    ``rescaled`` may map image ids to images already rescaled to ``plan.S``.
    """
    rng = np.random.default_rng(seed)
    out = []
    for s in samples:
        img = rescaled.get(s.image_id) if rescaled else None
        if img is None:
            img = rescale_shorter_edge(s.image, plan.S)
        dist = predict_distribution(scorer, img, plan, rng, rescaled=True)
        out.append(ImagePrediction(s.image_id, dist, np.asarray(s.dist, dtype=np.float64), s.aspect_ratio))
    return out


@dataclass
class EvalReport:
    strategy: str
    patch_count: int
    n_images: int
    lcc: float | None
    srcc: float | None
    mse: float
    rmse: float
    mean_emd: float
    binary_accuracy: float
    ae_histogram: dict[str, int]
    mse_by_aspect_bucket: dict[str, float]
    aspect_bucket_counts: dict[str, int]
    undefined: list[str] = field(default_factory=list)
    sweep: dict[str, dict[str, dict[str, float | None]]] = field(default_factory=dict)
    predictions: list[ImagePrediction] = field(default_factory=list, repr=False)

    def metrics(self) -> dict[str, float | None]:
        return {"lcc": self.lcc, "srcc": self.srcc, "mse": self.mse, "rmse": self.rmse,
                "mean_emd": self.mean_emd, "binary_accuracy": self.binary_accuracy}

    def to_dict(self, include_predictions: bool = True) -> dict:
        d = {
            "strategy": self.strategy,
            "patch_count": self.patch_count,
            "n_images": self.n_images,
            "metrics": self.metrics(),
            "undefined": list(self.undefined),
            "ae_histogram": self.ae_histogram,
            "mse_by_aspect_bucket": self.mse_by_aspect_bucket,
            "aspect_bucket_counts": self.aspect_bucket_counts,
            "sweep": self.sweep,
        }
        if include_predictions:
            d["predictions"] = [p.to_dict() for p in self.predictions]
        return d

    def to_json(self, include_predictions: bool = True) -> str:
        return json.dumps(self.to_dict(include_predictions), indent=2, sort_keys=True) + "\n"


def report_from_predictions(preds: list[ImagePrediction], plan: PatchPlan) -> EvalReport:
    if not preds:
        raise EmptyPatchSet("no images to report on")
    ps = np.array([p.predicted_score for p in preds])
    ts = np.array([p.ground_truth_score for p in preds])
    undefined = []
    corr = {}
    for name, fn in (("lcc", lcc), ("srcc", srcc)):
        try:
            corr[name] = fn(ps, ts)
        except DegenerateSeries:
            corr[name] = None
            undefined.append(name)
    emds = emd_array(np.stack([p.predicted_dist for p in preds]), np.stack([p.ground_truth_dist for p in preds]), 2)
    return EvalReport(
        strategy=plan.strategy,
        patch_count=plan.patch_count,
        n_images=len(preds),
        lcc=corr["lcc"],
        srcc=corr["srcc"],
        mse=mse(ps, ts),
        rmse=rmse(ps, ts),
        mean_emd=float(np.mean(emds)),
        binary_accuracy=binary_accuracy(ps, ts),
        ae_histogram=ae_histogram(ps, ts),
        mse_by_aspect_bucket=bucket_mse(preds),
        aspect_bucket_counts=bucket_counts(preds),
        undefined=undefined,
        predictions=preds,
    )


def _samples(data, split):
    return data.samples(split) if hasattr(data, "samples") else list(data)


def evaluate(scorer, data, plan: PatchPlan, seed: int = 0, split: str = "test", rescaled=None) -> EvalReport:
    """Score every image of ``data`` (a Dataset split or a list of samples) under ``plan``.

    Correlations that are undefined (fewer than two images, constant
    scores) are reported as ``None`` and listed in ``undefined``.
    """
    preds = predict_images(scorer, _samples(data, split), plan, seed, rescaled)
    return report_from_predictions(preds, plan)


def sweep_plans(P: int = 299, S: int = 342, G: int = 342, random_counts=range(1, 11), sides=(1, 2, 3)):
    """Standard strategy sweep: MP-Random over patch counts, grid strategies over sides."""
    plans = [PatchPlan(MP_RANDOM, n_random=n, P=P, S=S, G=G) for n in random_counts]
    plans += [PatchPlan(MP_LOCAL, m=m, P=P, S=S, G=G) for m in sides]
    plans += [PatchPlan(MP_GLOBAL_LOCAL, m=m, P=P, S=S, G=G) for m in sides]
    return plans


def sweep(scorer, data, plans, seed: int = 0, split: str = "test") -> dict[str, dict[str, dict]]:
    """LCC/RMSE (and friends) per ``strategy -> patch_count``."""
    samples = _samples(data, split)
    cache: dict[int, dict] = {}
    table: dict[str, dict[str, dict]] = {}
    for plan in plans:
        rescaled = cache.setdefault(plan.S, {s.image_id: rescale_shorter_edge(s.image, plan.S) for s in samples})
        rep = evaluate(scorer, samples, plan, seed, rescaled=rescaled)
        table.setdefault(plan.strategy, {})[str(plan.patch_count)] = rep.metrics()
    return table


def sweep_rows(table) -> list[tuple[str, int, dict]]:
    rows = [(strategy, int(count), m) for strategy, counts in table.items() for count, m in counts.items()]
    return sorted(rows, key=lambda r: (r[0], r[1]))
