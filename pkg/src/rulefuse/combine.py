"""Apply fitted rules to aligned probability volumes.

All maps are voxel-wise, so outputs are independent of any internal
chunking; determinism is checked by the CLI round-trip tests.
"""

from __future__ import annotations

import numpy as np

from . import backends
from .fitting import LinearRule, StackingRule
from .volumes import LabelVolume, Modality, ProbabilityVolume, validate_aligned

EVAL_LOSS_EPS = 1e-7


def _as_linear(rule) -> LinearRule:
    if isinstance(rule, LinearRule):
        return rule
    return LinearRule(np.asarray(rule, dtype=np.float64))


def _as_stacking(rule) -> StackingRule:
    if isinstance(rule, StackingRule):
        return rule
    return StackingRule(np.asarray(rule, dtype=np.float64))


def linear_map(volumes, weights) -> np.ndarray:
    """Raw voxel-wise weighted sum, without simplex validation or clamping.

    Exists so additivity in the weights can be exercised outside the simplex;
    prefer combine_linear for producing valid probability volumes.
    """
    volumes = list(volumes)
    if len(volumes) != 3:
        raise ValueError(f"expected 3 volumes, got {len(volumes)}")
    validate_aligned(volumes)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (3,):
        raise ValueError(f"expected 3 weights, got shape {weights.shape}")
    out = np.zeros(volumes[0].dims, dtype=np.float64)
    for w, vol in zip(weights, volumes):
        if w != 0.0:  # zero weight leaves the output bit-exactly unaffected
            out += w * vol.values
    return out


def combine_linear(volumes, rule) -> ProbabilityVolume:
    """Convex combination Z = Σ_τ α_τ·Y^τ of the three modality maps."""
    rule = _as_linear(rule)
    out = linear_map(volumes, rule.alpha)
    # convexity keeps values in [0,1]; clip only absorbs float rounding
    np.clip(out, 0.0, 1.0, out=out)
    return ProbabilityVolume(out, spacing=list(volumes)[0].spacing, modality=Modality.COMBINED)


def combine_stacking(volumes, rule) -> ProbabilityVolume:
    """Logistic stack Z = σ(Σ_τ β_τ·Y^τ + β₀)."""
    rule = _as_stacking(rule)
    logits = linear_map(volumes, rule.weights) + rule.bias
    with np.errstate(over="ignore"):
        out = 1.0 / (1.0 + np.exp(-logits))
    return ProbabilityVolume(out, spacing=list(volumes)[0].spacing, modality=Modality.COMBINED)


def stacking_logits(volumes, rule) -> np.ndarray:
    """Pre-sigmoid values; thresholding these at 0 matches combine_stacking at 0.5."""
    rule = _as_stacking(rule)
    return linear_map(volumes, rule.weights) + rule.bias


def combine_vote(masks) -> LabelVolume:
    """Majority vote over three binary masks: positive iff at least 2 of 3 agree."""
    masks = list(masks)
    if len(masks) != 3:
        raise ValueError(f"expected 3 masks, got {len(masks)}")
    validate_aligned(masks)
    total = sum(m.values.astype(np.uint8) for m in masks)
    return LabelVolume(total >= 2, spacing=masks[0].spacing)


def binarize(
    volume: ProbabilityVolume,
    threshold: float = 0.5,
    min_region_voxels: int = 27,
    connectivity: int = 26,
) -> LabelVolume:
    """Threshold strictly above `threshold`, then drop small components.

    Components with fewer than min_region_voxels voxels are removed; 27
    corresponds to a 3×3×3 block at 1mm isotropic spacing.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    if min_region_voxels < 0:
        raise ValueError(f"min_region_voxels must be >= 0, got {min_region_voxels}")
    mask = volume.values > threshold
    if min_region_voxels > 1 and mask.any():
        labels, n = backends.label_components(mask, connectivity)
        if n:
            counts = np.bincount(labels.ravel(), minlength=n + 1)
            keep = counts >= min_region_voxels
            keep[0] = False
            mask = keep[labels]
    return LabelVolume(mask, spacing=volume.spacing)


def eval_loss(pred: ProbabilityVolume, truth: LabelVolume) -> float:
    """Summed cross-entropy minus soft-Dice overlap, sign as in training use.

    Lower is better on the cross-entropy term only if its sign is flipped;
    this returns the raw printed form Σ[t·log y + (1−t)·log(1−y)] − Dice(y,t),
    which callers treat as an opaque comparable score.
    """
    validate_aligned([pred, truth], names=["pred", "truth"])
    y = np.clip(pred.values, EVAL_LOSS_EPS, 1.0 - EVAL_LOSS_EPS)
    t = truth.values.astype(np.float64)
    ce = float(np.sum(t * np.log(y) + (1.0 - t) * np.log1p(-y)))
    denom = float(y.sum() + t.sum())
    dice = 2.0 * float(np.sum(y * t)) / denom if denom > 0.0 else 0.0
    return ce - dice
