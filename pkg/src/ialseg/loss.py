"""Frequency-weighted cross-entropy and the importance-aware loss.

The importance-aware loss splits weighted cross-entropy by group rank and
amplifies the more important groups by dynamic weights measured against the
tri-state matrices:

    total = I_1 + (f_2 + alpha) * I_2 + ... + prod_{t<=g}(f_t + alpha) * I_g

where f_t is the mean squared, lambda-shifted mismatch between the predicted
ground-truth-class probability and matrix M_{t-1}, over that matrix's
non-DONT_CARE pixels.  Gradients treat every f_t as a detached constant, so
the backward pass is the plain weighted softmax-CE gradient scaled per pixel
by its group's composed coefficient.

Probability maps are arrays of shape (..., C); label maps, rank maps and
tri-state maps share the leading shape.  Reductions run over all leading
dimensions, so a batch is handled as one pixel population.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .hierarchy import (
    CellValue,
    ImportanceHierarchy,
    build_matrix_specs,
    group_rank_map,
    rasterize_matrix,
)
from .layers import softmax

__all__ = [
    "ClassWeights",
    "LossBreakdown",
    "class_frequencies",
    "enet_weights",
    "weighted_ce",
    "dynamic_weight",
    "ial_loss",
    "ial_gradient",
    "ial_loss_and_grad",
    "wce_loss_and_grad",
]

# floor for log arguments; softmax underflow protection, never NaN/Inf
LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class ClassWeights:
    """Per-class weights 1/ln(a + f_c) from dataset class frequencies."""

    values: np.ndarray
    a: float = 1.02

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if self.values.ndim != 1:
            raise ValueError("class weights must be a 1-D array")
        if not np.all(self.values > 0):
            raise ValueError("class weights must be strictly positive")

    @classmethod
    def uniform(cls, num_classes: int) -> "ClassWeights":
        return cls(values=np.ones(num_classes))


@dataclass(frozen=True)
class LossBreakdown:
    """Total loss plus its per-group terms and dynamic weights.

    ``dynamic_weights`` holds f_2 .. f_G; it is None for plain weighted
    cross-entropy, where every group coefficient is 1.
    """

    total: float
    per_group: tuple[float, ...]
    dynamic_weights: tuple[float, ...] | None
    alpha: float
    lam: float

    def group_coefficients(self) -> tuple[float, ...]:
        """Composed coefficient of each group term in the total."""
        G = len(self.per_group)
        if self.dynamic_weights is None:
            return (1.0,) * G
        coeffs = [1.0]
        c = 1.0
        for f in self.dynamic_weights:
            c *= f + self.alpha
            coeffs.append(c)
        return tuple(coeffs)

    def composed_total(self) -> float:
        return float(
            sum(c * i for c, i in zip(self.group_coefficients(), self.per_group))
        )


def class_frequencies(
    dataset_labels: Iterable[np.ndarray], hierarchy: ImportanceHierarchy
) -> np.ndarray:
    """Per-class pixel frequency over a whole dataset, summing to 1.

    Ignored pixels are left out of both the counts and the denominator.
    """
    C = hierarchy.num_classes
    counts = np.zeros(C, dtype=np.int64)
    seen_any = False
    for labels in dataset_labels:
        seen_any = True
        labels = np.asarray(labels)
        group_rank_map(hierarchy, labels)  # validates ids
        flat = labels.ravel()
        if hierarchy.ignore_id is not None:
            flat = flat[flat != hierarchy.ignore_id]
        counts += np.bincount(flat, minlength=C)[:C]
    if not seen_any:
        raise ValueError("empty dataset")
    total = counts.sum()
    if total == 0:
        raise ValueError("dataset has no non-ignored pixels")
    return counts / total


def enet_weights(freqs: np.ndarray, a: float = 1.02) -> ClassWeights:
    """Class weights 1/ln(a + f_c); rarer classes get larger weights."""
    freqs = np.asarray(freqs, dtype=np.float64)
    if a <= 1.0:
        raise ValueError(f"weight hyper-parameter a must exceed 1, got {a}")
    if np.any(freqs < 0) or np.any(freqs > 1):
        raise ValueError("class frequencies must lie in [0, 1]")
    return ClassWeights(values=1.0 / np.log(a + freqs), a=a)


def _per_pixel_ce(
    prob: np.ndarray,
    labels: np.ndarray,
    weights: ClassWeights,
    rank_map: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Weighted -log p_true per pixel (zero where ignored), safe labels, count."""
    prob = np.asarray(prob)
    labels = np.asarray(labels)
    valid = rank_map > 0
    safe = np.where(valid, labels, 0)
    p_true = np.take_along_axis(prob, safe[..., None], axis=-1)[..., 0]
    terms = weights.values[safe] * -np.log(np.maximum(p_true, LOG_CLAMP))
    terms = np.where(valid, terms, 0.0)
    return terms, safe, int(np.count_nonzero(valid))


def weighted_ce(
    prob: np.ndarray,
    labels: np.ndarray,
    weights: ClassWeights,
    rank_map: np.ndarray,
    num_groups: int,
) -> tuple[float, np.ndarray]:
    """Frequency-weighted cross-entropy split by group rank.

    Returns (I_total, per_group) where per_group[g-1] sums the weighted
    -log p_true of rank-g pixels, normalized by the count of non-ignored
    pixels; I_total is the sum of the group terms.
    """
    terms, _, n_pix = _per_pixel_ce(prob, labels, weights, rank_map)
    if n_pix == 0:
        raise ValueError("no scored pixels")
    sums = np.bincount(
        rank_map.ravel().astype(np.int64), weights=terms.ravel(), minlength=num_groups + 1
    )
    per_group = sums[1 : num_groups + 1] / n_pix
    return float(np.sum(per_group)), per_group


def dynamic_weight(
    prob: np.ndarray,
    labels: np.ndarray,
    tri: np.ndarray,
    rank_map: np.ndarray,
    matrix_index: int,
    lam: float = 0.5,
) -> float:
    """Dynamic importance weight against tri-state matrix ``matrix_index``.

    f = (1/N) * sum over non-DONT_CARE pixels of (M + lam) * (p_true - M)^2,
    with N the count of pixels whose group rank is >= matrix_index.  An
    image with no such pixels carries no importance evidence: f = 0.
    """
    prob = np.asarray(prob)
    labels = np.asarray(labels)
    valid = rank_map > 0
    safe = np.where(valid, labels, 0)
    p_true = np.take_along_axis(prob, safe[..., None], axis=-1)[..., 0]
    care = tri != CellValue.DONT_CARE
    n = int(np.count_nonzero(rank_map >= matrix_index))
    if n == 0:
        return 0.0
    m = tri.astype(prob.dtype)
    sq = (m + lam) * np.square(p_true - m)
    return float(np.sum(np.where(care, sq, 0.0)) / n)


def _dynamic_weights(
    prob: np.ndarray,
    labels: np.ndarray,
    hierarchy: ImportanceHierarchy,
    rank_map: np.ndarray,
    lam: float,
) -> tuple[float, ...]:
    fs = []
    for spec in build_matrix_specs(hierarchy):
        tri = rasterize_matrix(spec, hierarchy, labels)
        fs.append(dynamic_weight(prob, labels, tri, rank_map, spec.index, lam))
    return tuple(fs)


def _compose(
    per_group: np.ndarray, fs: Sequence[float], alpha: float
) -> tuple[float, list[float]]:
    """Total and per-group coefficients of the composed loss."""
    coeffs = [1.0]
    c = 1.0
    for f in fs:
        c *= f + alpha
        coeffs.append(c)
    total = float(per_group[0])
    for g in range(1, len(per_group)):
        total += coeffs[g] * float(per_group[g])
    return total, coeffs


def ial_loss(
    prob: np.ndarray,
    labels: np.ndarray,
    hierarchy: ImportanceHierarchy,
    weights: ClassWeights,
    alpha: float = 1.0,
    lam: float = 0.5,
) -> LossBreakdown:
    """Importance-aware loss over a probability map.

    With a single-group hierarchy this degenerates to plain weighted
    cross-entropy on the identical arithmetic path.
    """
    G = hierarchy.num_groups
    rank_map = group_rank_map(hierarchy, labels)
    total_ce, per_group = weighted_ce(prob, labels, weights, rank_map, G)
    if G == 1:
        return LossBreakdown(
            total=total_ce,
            per_group=tuple(float(v) for v in per_group),
            dynamic_weights=(),
            alpha=alpha,
            lam=lam,
        )
    fs = _dynamic_weights(prob, labels, hierarchy, rank_map, lam)
    total, _ = _compose(per_group, fs, alpha)
    return LossBreakdown(
        total=total,
        per_group=tuple(float(v) for v in per_group),
        dynamic_weights=fs,
        alpha=alpha,
        lam=lam,
    )


def _scaled_softmax_grad(
    p: np.ndarray,
    safe_labels: np.ndarray,
    pixel_scale: np.ndarray,
) -> np.ndarray:
    """Per-pixel scale * (p - onehot(true)); zero rows where scale is zero."""
    grad = p * pixel_scale[..., None]
    flat = grad.reshape(-1, grad.shape[-1])
    flat[np.arange(flat.shape[0]), safe_labels.ravel()] -= pixel_scale.ravel()
    return grad


def ial_loss_and_grad(
    logits: np.ndarray,
    labels: np.ndarray,
    hierarchy: ImportanceHierarchy,
    weights: ClassWeights,
    alpha: float = 1.0,
    lam: float = 0.5,
) -> tuple[LossBreakdown, np.ndarray]:
    """Loss breakdown and its gradient with respect to pre-softmax logits.

    Dynamic weights are evaluated at the current probabilities and treated
    as constants; no gradient flows through them.
    """
    logits = np.asarray(logits)
    p = softmax(logits.astype(np.float64, copy=False))
    breakdown = ial_loss(p, labels, hierarchy, weights, alpha=alpha, lam=lam)
    rank_map = group_rank_map(hierarchy, labels)
    valid = rank_map > 0
    safe = np.where(valid, labels, 0)
    n_pix = int(np.count_nonzero(valid))
    coeffs = np.asarray((0.0,) + breakdown.group_coefficients())
    pixel_scale = np.where(valid, coeffs[rank_map] * weights.values[safe] / n_pix, 0.0)
    grad = _scaled_softmax_grad(p, safe, pixel_scale)
    return breakdown, grad.astype(logits.dtype, copy=False)


def ial_gradient(
    logits: np.ndarray,
    labels: np.ndarray,
    hierarchy: ImportanceHierarchy,
    weights: ClassWeights,
    alpha: float = 1.0,
    lam: float = 0.5,
) -> np.ndarray:
    """Gradient of the importance-aware loss with respect to logits."""
    _, grad = ial_loss_and_grad(logits, labels, hierarchy, weights, alpha, lam)
    return grad


def wce_loss_and_grad(
    logits: np.ndarray,
    labels: np.ndarray,
    hierarchy: ImportanceHierarchy,
    weights: ClassWeights,
) -> tuple[LossBreakdown, np.ndarray]:
    """Plain frequency-weighted cross-entropy loss and logits gradient."""
    logits = np.asarray(logits)
    p = softmax(logits.astype(np.float64, copy=False))
    rank_map = group_rank_map(hierarchy, labels)
    total, per_group = weighted_ce(p, labels, weights, rank_map, hierarchy.num_groups)
    breakdown = LossBreakdown(
        total=total,
        per_group=tuple(float(v) for v in per_group),
        dynamic_weights=None,
        alpha=1.0,
        lam=0.5,
    )
    valid = rank_map > 0
    safe = np.where(valid, labels, 0)
    n_pix = int(np.count_nonzero(valid))
    pixel_scale = np.where(valid, weights.values[safe] / n_pix, 0.0)
    grad = _scaled_softmax_grad(p, safe, pixel_scale)
    return breakdown, grad.astype(logits.dtype, copy=False)
