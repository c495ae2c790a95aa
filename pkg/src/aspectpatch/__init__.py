"""Aspect-ratio-preserving multi-patch aesthetics score prediction."""
from .loss import LossSpec, PatchPrediction, collective_loss, loss_gradient, per_patch_loss
from .metrics import EvalReport, aggregate_patches, evaluate, lcc, srcc
from .patchgrid import Patch, PatchPlan, select_test_patches
from .ratings import EmdParams, RatingDistribution, emd, emd_certainty, mean_score, normalize, patch_weight
from .scorer import ConvScorer, ScorerConfig, init_scorer

__version__ = "0.1.0"

__all__ = [
    "ConvScorer", "EmdParams", "EvalReport", "LossSpec", "Patch", "PatchPlan", "PatchPrediction",
    "RatingDistribution", "ScorerConfig", "aggregate_patches", "collective_loss", "emd", "emd_certainty",
    "evaluate", "init_scorer", "lcc", "loss_gradient", "mean_score", "normalize", "patch_weight",
    "per_patch_loss", "select_test_patches", "srcc",
]
