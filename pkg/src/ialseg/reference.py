"""Slow scalar reference for the importance-aware loss.

This is the test oracle: plain Python loops over pixels, no numpy
arithmetic, and no code shared with :mod:`ialseg.loss`.  Everything the
loss needs (group ranks, matrix cells, dynamic weights, composition) is
re-derived here from first principles so the two paths can disagree.
"""

from __future__ import annotations

import math

import numpy as np

from .hierarchy import ImportanceHierarchy
from .loss import ClassWeights

__all__ = ["naive_loss_oracle"]

_CLAMP = 1e-12


def naive_loss_oracle(
    prob: np.ndarray,
    labels: np.ndarray,
    hierarchy: ImportanceHierarchy,
    weights: ClassWeights,
    alpha: float = 1.0,
    lam: float = 0.5,
) -> float:
    """Importance-aware loss computed with explicit per-pixel loops."""
    G = len(hierarchy.groups)
    rank_of = {}
    for g, members in enumerate(hierarchy.groups):
        for cid in members:
            rank_of[cid] = g + 1

    prob_rows = np.asarray(prob).reshape(-1, np.asarray(prob).shape[-1]).tolist()
    label_list = np.asarray(labels).reshape(-1).tolist()
    weight_list = np.asarray(weights.values).tolist()

    scored = []
    for k, cid in enumerate(label_list):
        if hierarchy.ignore_id is not None and cid == hierarchy.ignore_id:
            continue
        scored.append((rank_of[cid], weight_list[cid], prob_rows[k][cid]))
    n_pix = len(scored)
    if n_pix == 0:
        raise ValueError("no scored pixels")

    group_sums = [0.0] * (G + 1)
    for rank, w, p_true in scored:
        group_sums[rank] += w * -math.log(p_true if p_true > _CLAMP else _CLAMP)
    group_losses = [s / n_pix for s in group_sums[1:]]

    if G == 1:
        return group_losses[0]

    # f_t for t = 2..G, built against matrix m = t - 1: cell 0 at rank m,
    # cell 1 above, don't-care (skipped) below
    fs = []
    for m in range(1, G):
        num = 0.0
        count = 0
        for rank, _, p_true in scored:
            if rank < m:
                continue
            count += 1
            cell = 0.0 if rank == m else 1.0
            num += (math.sqrt(cell + lam) * (p_true - cell)) ** 2
        fs.append(num / count if count else 0.0)

    total = group_losses[0]
    coeff = 1.0
    for g in range(2, G + 1):
        coeff *= fs[g - 2] + alpha
        total += coeff * group_losses[g - 1]
    return total
