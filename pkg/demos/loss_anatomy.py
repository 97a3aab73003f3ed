"""Anatomy of the importance-aware loss on a hand-sized example.

Walks one 4x6 label map through every stage: group ranks, the ternary
teaching matrices, frequency-balanced class weights, per-group
cross-entropy, the dynamic weights f_t, and the final composed total.
Run with  python3 demos/loss_anatomy.py
"""

import numpy as np

from ialseg import (
    ClassDef,
    ImportanceHierarchy,
    build_matrix_specs,
    class_frequencies,
    dynamic_weight,
    enet_weights,
    group_rank_map,
    ial_loss,
    rasterize_matrix,
    softmax,
)

# Three groups, least important first: background stuff, road, then the
# classes a planner must not miss.
hierarchy = ImportanceHierarchy(
    classes=(
        ClassDef(0, "sky"),
        ClassDef(1, "building"),
        ClassDef(2, "road"),
        ClassDef(3, "marking"),
        ClassDef(4, "car"),
        ClassDef(5, "person"),
    ),
    groups=((0, 1), (2, 3), (4, 5)),
)

rng = np.random.default_rng(7)
labels = np.array(
    [
        [0, 0, 1, 1, 1, 0],
        [2, 2, 2, 3, 2, 2],
        [2, 2, 4, 4, 2, 2],
        [2, 5, 2, 2, 2, 2],
    ]
)

print("label map (class ids):")
print(labels)
ranks = group_rank_map(hierarchy, labels)
print("\ngroup rank per pixel (1 = least important):")
print(ranks)

# The two teaching matrices. Cells: 1 = should be predicted, 0 = should
# be suppressed at this level, -1 = not scored by this matrix.
for spec in build_matrix_specs(hierarchy):
    tri = rasterize_matrix(spec, hierarchy, labels)
    print(f"\nmatrix {spec.index} (rank {spec.index} is the 0-cell):")
    print(tri)

freqs = class_frequencies([labels], hierarchy)
weights = enet_weights(freqs)
print("\nclass frequencies and balancing weights w_c = 1/ln(1.02 + f_c):")
for cls, f, w in zip(hierarchy.classes, freqs, weights.values):
    print(f"  {cls.name:10s} f={f:.4f}  w={w:.2f}")

# A deliberately blurry prediction: logits leaning toward the truth but
# with the rare classes underconfident.
logits = rng.normal(0, 0.5, size=labels.shape + (6,))
for c in range(6):
    logits[..., c] += np.where(labels == c, 2.0, 0.0)
logits[..., 4:] -= 0.8 * (labels[..., None] >= 4)
prob = softmax(logits)

b = ial_loss(prob, labels, hierarchy, weights)
print("\nper-group cross-entropy terms I_g:")
for g, term in enumerate(b.per_group, start=1):
    print(f"  I_{g} = {term:.4f}")
print("dynamic weights f_t (how badly the previous level is violated):")
for t, f in enumerate(b.dynamic_weights, start=2):
    print(f"  f_{t} = {f:.4f}")
print("group coefficients after composing (f_t + alpha) products:")
print("  ", [round(c, 4) for c in b.group_coefficients()])
print(f"total = {b.total:.4f}")

# Sharpen the prediction and the cross-entropy terms collapse, so the
# total does too.  The f_t do not go to zero on a mixed scene: a
# confident correct prediction still pays lambda on every 0-cell (the
# matrix wants those pixels suppressed), so each f_t settles at
# lambda * (share of 0-cell pixels among the pixels its matrix scores).
# Here that floor is 0.5 * 6/24 = 0.125 for f_2 and 0.5 * 15/18 = 0.417
# for f_3.  Only scenes made entirely of top-group pixels drive every
# f_t to zero.
print("\nsharpening the same prediction:")
print("  temp   f_2     f_3     total")
for temp in (1.0, 0.5, 0.25, 0.1):
    bt = ial_loss(softmax(logits / temp), labels, hierarchy, weights)
    f2, f3 = bt.dynamic_weights
    print(f"  {temp:4.2f}  {f2:.4f}  {f3:.4f}  {bt.total:.4f}")

# The two single-pixel extremes pin the scale of f: a confident miss on
# a 1-cell costs 1.5, a confident hit parked on a 0-cell costs 0.5.
h1 = ImportanceHierarchy(
    classes=(ClassDef(0, "low"), ClassDef(1, "high")), groups=((0,), (1,))
)
spec = build_matrix_specs(h1)[0]
for name, label, p_true in (("missed 1-cell", 1, 0.0), ("hit 0-cell", 0, 1.0)):
    lab = np.array([[label]])
    p = np.zeros((1, 1, 2))
    p[0, 0, label] = p_true
    p[0, 0, 1 - label] = 1 - p_true
    tri = rasterize_matrix(spec, h1, lab)
    f = dynamic_weight(p, lab, tri, group_rank_map(h1, lab), spec.index)
    print(f"\n{name}: f = {f}")
