import math

import numpy as np
import pytest

from ialseg.hierarchy import (
    ClassDef,
    ImportanceHierarchy,
    build_matrix_specs,
    group_rank_map,
    rasterize_matrix,
)
from ialseg.layers import softmax
from ialseg.loss import (
    ClassWeights,
    LossBreakdown,
    class_frequencies,
    dynamic_weight,
    enet_weights,
    ial_gradient,
    ial_loss,
    ial_loss_and_grad,
    weighted_ce,
)
from ialseg.reference import naive_loss_oracle

rng = np.random.default_rng(20240811)


def three_group(C=6, ignore_id=None) -> ImportanceHierarchy:
    assert C % 3 == 0
    classes = tuple(ClassDef(i, f"c{i}") for i in range(C))
    k = C // 3
    groups = (tuple(range(k)), tuple(range(k, 2 * k)), tuple(range(2 * k, C)))
    return ImportanceHierarchy(classes=classes, groups=groups, ignore_id=ignore_id)


def random_prob(shape, C):
    z = rng.uniform(-5, 5, size=(*shape, C))
    return softmax(z)


def one_hot(labels, C):
    p = np.zeros((*labels.shape, C))
    np.put_along_axis(p, labels[..., None], 1.0, axis=-1)
    return p


# ---------------------------------------------------------------- frequencies


def test_class_frequencies_single_class():
    h = three_group(C=3)
    f = class_frequencies([np.zeros((2, 2), dtype=int)], h)
    np.testing.assert_allclose(f, [1.0, 0.0, 0.0])


def test_class_frequencies_two_images():
    # 3 pixels of class 0 and 5 of class 1 out of 8
    h = ImportanceHierarchy(
        classes=(ClassDef(0, "a"), ClassDef(1, "b")), groups=((0,), (1,))
    )
    imgs = [np.array([[0, 0], [0, 1]]), np.array([[1, 1], [1, 1]])]
    f = class_frequencies(imgs, h)
    np.testing.assert_allclose(f, [0.375, 0.625])
    f_rev = class_frequencies(imgs[::-1], h)
    np.testing.assert_allclose(f, f_rev)


def test_class_frequencies_empty_dataset():
    with pytest.raises(ValueError):
        class_frequencies([], three_group())


# -------------------------------------------------------------------- weights


def test_enet_weight_values():
    w = enet_weights(np.array([0.0, 1.0]), a=1.02)
    assert abs(w.values[0] - 50.4975) < 1e-3
    assert abs(w.values[1] - 1.4225) < 1e-3
    np.testing.assert_allclose(w.values, [1 / math.log(1.02), 1 / math.log(2.02)])


def test_enet_weights_monotone():
    f = np.linspace(0, 1, 11)
    w = enet_weights(f).values
    assert np.all(np.diff(w) < 0)


def test_enet_weights_reject_bad_a():
    with pytest.raises(ValueError):
        enet_weights(np.array([0.5]), a=1.0)
    with pytest.raises(ValueError):
        enet_weights(np.array([0.5]), a=0.9)


# ------------------------------------------------------------------------- ce


def test_weighted_ce_perfect_prediction_is_zero():
    h = three_group(C=3)
    labels = rng.integers(0, 3, size=(4, 5))
    p = one_hot(labels, 3)
    ranks = group_rank_map(h, labels)
    total, per_group = weighted_ce(p, labels, ClassWeights.uniform(3), ranks, 3)
    assert total == 0.0
    assert np.all(per_group == 0.0)


def test_weighted_ce_uniform_prediction():
    h = three_group(C=6)
    labels = rng.integers(0, 6, size=(8, 8))
    p = np.full((8, 8, 6), 1 / 6)
    ranks = group_rank_map(h, labels)
    total, _ = weighted_ce(p, labels, ClassWeights.uniform(6), ranks, 3)
    np.testing.assert_allclose(total, math.log(6), rtol=1e-12)


def test_weighted_ce_two_pixel_split():
    """One rank-1 pixel at p 0.5 and one rank-3 pixel at p 0.25."""
    h = three_group(C=3)
    labels = np.array([[0, 2]])
    p = np.zeros((1, 2, 3))
    p[0, 0] = [0.5, 0.3, 0.2]
    p[0, 1] = [0.25, 0.5, 0.25]
    ranks = group_rank_map(h, labels)
    total, per_group = weighted_ce(p, labels, ClassWeights.uniform(3), ranks, 3)
    np.testing.assert_allclose(per_group[0], -math.log(0.5) / 2, rtol=1e-12)
    assert per_group[1] == 0.0
    np.testing.assert_allclose(per_group[2], -math.log(0.25) / 2, rtol=1e-12)
    np.testing.assert_allclose(total, per_group.sum(), rtol=1e-12)


def test_weighted_ce_all_ignored_raises():
    h = three_group(C=3, ignore_id=9)
    labels = np.full((2, 2), 9)
    ranks = group_rank_map(h, labels)
    with pytest.raises(ValueError, match="no scored pixels"):
        weighted_ce(one_hot(np.zeros((2, 2), int), 3), labels,
                    ClassWeights.uniform(3), ranks, 3)


# -------------------------------------------------------------- dynamic weight


def single_pixel_setup(rank, p_true):
    """One-pixel instance whose only class sits in the given group rank."""
    h = three_group(C=3)
    labels = np.array([[rank - 1]])  # class id == rank-1 in this layout
    C = 3
    p = np.full((1, 1, C), (1 - p_true) / (C - 1))
    p[0, 0, rank - 1] = p_true
    return h, labels, p


def test_dynamic_weight_hand_cases():
    # M=1 cell with p_true=0: ((1+0.5)^0.5 * (0-1))^2 = 1.5
    h, labels, p = single_pixel_setup(rank=2, p_true=0.0)
    ranks = group_rank_map(h, labels)
    m1 = build_matrix_specs(h)[0]
    tri = rasterize_matrix(m1, h, labels)
    f = dynamic_weight(p, labels, tri, ranks, m1.index, lam=0.5)
    assert abs(f - 1.5) < 1e-12

    # M=0 cell with p_true=1: ((0+0.5)^0.5 * 1)^2 = 0.5
    h, labels, p = single_pixel_setup(rank=1, p_true=1.0)
    ranks = group_rank_map(h, labels)
    tri = rasterize_matrix(m1, h, labels)
    f = dynamic_weight(p, labels, tri, ranks, m1.index, lam=0.5)
    assert abs(f - 0.5) < 1e-12


def test_dynamic_weight_perfect_fit_is_zero():
    # p_true 1 on One cells and 0 on Zero cells zeroes every bracket
    h = three_group(C=3)
    labels = np.array([[0, 1, 2, 1]])
    ranks = group_rank_map(h, labels)
    for spec in build_matrix_specs(h):
        tri = rasterize_matrix(spec, h, labels)
        p = np.zeros((1, 4, 3))
        for j in range(4):
            if tri[0, j] == 1:
                p[0, j, labels[0, j]] = 1.0
            else:
                p[0, j, (labels[0, j] + 1) % 3] = 1.0
        f = dynamic_weight(p, labels, tri, ranks, spec.index)
        assert f == 0.0


def test_dynamic_weight_no_evidence_defaults_to_zero():
    # matrix 2 over an image of only rank-1 pixels: N = 0
    h = three_group(C=3)
    labels = np.zeros((2, 2), dtype=int)
    ranks = group_rank_map(h, labels)
    m2 = build_matrix_specs(h)[1]
    tri = rasterize_matrix(m2, h, labels)
    assert dynamic_weight(random_prob((2, 2), 3), labels, tri, ranks, m2.index) == 0.0


def test_dynamic_weight_bounded():
    h = three_group(C=6)
    for _ in range(20):
        labels = rng.integers(0, 6, size=(5, 7))
        p = random_prob((5, 7), 6)
        ranks = group_rank_map(h, labels)
        for spec in build_matrix_specs(h):
            tri = rasterize_matrix(spec, h, labels)
            f = dynamic_weight(p, labels, tri, ranks, spec.index, lam=0.5)
            assert 0.0 <= f <= 1.5 + 1e-12


# ---------------------------------------------------------------- composition


def test_composition_hand_value():
    b = LossBreakdown(
        total=0.0, per_group=(0.1, 0.2, 0.3), dynamic_weights=(1.5, 0.5),
        alpha=1.0, lam=0.5,
    )
    assert abs(b.composed_total() - 1.725) < 1e-12
    np.testing.assert_allclose(b.group_coefficients(), [1.0, 2.5, 3.75])


def test_total_matches_composition():
    h = three_group(C=6)
    for _ in range(10):
        labels = rng.integers(0, 6, size=(6, 9))
        p = random_prob((6, 9), 6)
        w = enet_weights(rng.uniform(0, 1, 6) / 6)
        b = ial_loss(p, labels, h, w)
        np.testing.assert_allclose(b.total, b.composed_total(), rtol=1e-9)


def test_zero_dynamic_weights_give_plain_sum():
    b = LossBreakdown(
        total=0.0, per_group=(0.1, 0.2, 0.3), dynamic_weights=(0.0, 0.0),
        alpha=1.0, lam=0.5,
    )
    np.testing.assert_allclose(b.composed_total(), 0.6, rtol=1e-15)


# ------------------------------------------------------------------- ial_loss


def test_single_group_reduces_to_weighted_ce():
    classes = tuple(ClassDef(i, f"c{i}") for i in range(4))
    h = ImportanceHierarchy(classes=classes, groups=(tuple(range(4)),))
    labels = rng.integers(0, 4, size=(6, 6))
    p = random_prob((6, 6), 4)
    w = enet_weights(np.full(4, 0.25))
    ranks = group_rank_map(h, labels)
    ce_total, _ = weighted_ce(p, labels, w, ranks, 1)
    b = ial_loss(p, labels, h, w)
    assert b.total == ce_total  # same arithmetic path, bitwise
    assert b.dynamic_weights == ()


def test_perfect_prediction_zeroes_everything():
    # every class drawn from the top group so all Zero/One cells are matched
    h = three_group(C=3)
    labels = np.full((4, 6), 2)
    p = one_hot(labels, 3)
    b = ial_loss(p, labels, h, ClassWeights.uniform(3))
    assert b.total == 0.0
    assert all(v == 0.0 for v in b.per_group)
    assert all(f == 0.0 for f in b.dynamic_weights)


def test_total_at_least_plain_sum_when_alpha_one():
    h = three_group(C=6)
    for _ in range(20):
        labels = rng.integers(0, 6, size=(5, 8))
        p = random_prob((5, 8), 6)
        b = ial_loss(p, labels, h, ClassWeights.uniform(6), alpha=1.0)
        assert b.total >= sum(b.per_group) - 1e-12


def test_relabeling_invariance():
    h = three_group(C=6)
    labels = rng.integers(0, 6, size=(7, 5))
    p = random_prob((7, 5), 6)
    w = enet_weights(rng.uniform(0, 1, 6) / 6)
    b = ial_loss(p, labels, h, w)

    perm = rng.permutation(6)  # old id -> new id
    classes = tuple(ClassDef(int(perm[i]), f"c{i}") for i in range(6))
    groups = tuple(tuple(int(perm[i]) for i in g) for g in h.groups)
    h2 = ImportanceHierarchy(classes=classes, groups=groups)
    labels2 = perm[labels]
    p2 = np.empty_like(p)
    p2[..., perm] = p
    w2_values = np.empty(6)
    w2_values[perm] = w.values
    b2 = ial_loss(p2, labels2, h2, ClassWeights(values=w2_values, a=w.a))
    np.testing.assert_allclose(b2.total, b.total, rtol=1e-12)
    np.testing.assert_allclose(b2.dynamic_weights, b.dynamic_weights, rtol=1e-12)


def test_monotone_response_at_rank3_pixel():
    """With coefficients frozen, losing mass at a top-group pixel's true
    channel can only raise the composed total."""
    h = three_group(C=3)
    labels = np.array([[0, 1, 2], [2, 1, 0]])
    p = random_prob((2, 3), 3)
    b = ial_loss(p, labels, h, ClassWeights.uniform(3))
    coeffs = b.group_coefficients()

    worse = p.copy()
    worse[0, 2, 2] *= 0.5            # rank-3 pixel, true channel down
    worse[0, 2, 0] += p[0, 2, 2] * 0.5
    b2 = ial_loss(worse, labels, h, ClassWeights.uniform(3))
    frozen_total = sum(c * i for c, i in zip(coeffs, b2.per_group))
    assert frozen_total >= b.total - 1e-15


# --------------------------------------------------------------------- oracle


def random_instance(max_hw=16, max_c=8, with_ignore=False):
    H = int(rng.integers(1, max_hw + 1))
    W = int(rng.integers(1, max_hw + 1))
    C = int(rng.integers(3, max_c + 1))
    ids = list(range(C))
    cut1, cut2 = sorted(rng.choice(np.arange(1, C), size=2, replace=False))
    ignore_id = C + 7 if with_ignore else None
    h = ImportanceHierarchy(
        classes=tuple(ClassDef(i, f"c{i}") for i in ids),
        groups=(tuple(ids[:cut1]), tuple(ids[cut1:cut2]), tuple(ids[cut2:])),
        ignore_id=ignore_id,
    )
    labels = rng.integers(0, C, size=(H, W))
    if with_ignore:
        mask = rng.uniform(size=(H, W)) < 0.2
        mask.flat[0] = False  # keep at least one scored pixel
        labels = np.where(mask, ignore_id, labels)
    p = random_prob((H, W), C)
    w = enet_weights(rng.uniform(0, 1, C) / C)
    alpha = float(rng.uniform(0.5, 2))
    lam = float(rng.uniform(0.1, 1))
    return p, labels, h, w, alpha, lam


def test_matches_naive_oracle():
    for k in range(100):
        p, labels, h, w, alpha, lam = random_instance(with_ignore=(k % 4 == 0))
        b = ial_loss(p, labels, h, w, alpha=alpha, lam=lam)
        ref = naive_loss_oracle(p, labels, h, w, alpha=alpha, lam=lam)
        np.testing.assert_allclose(b.total, ref, rtol=1e-10)


# ------------------------------------------------------------------- gradient


def test_gradient_single_group_textbook_form():
    classes = tuple(ClassDef(i, f"c{i}") for i in range(4))
    h = ImportanceHierarchy(classes=classes, groups=(tuple(range(4)),))
    labels = rng.integers(0, 4, size=(3, 5))
    logits = rng.uniform(-3, 3, size=(3, 5, 4))
    w = enet_weights(np.full(4, 0.25))
    g = ial_gradient(logits, labels, h, w)
    p = softmax(logits)
    expected = (p - one_hot(labels, 4)) * w.values[labels][..., None] / 15
    np.testing.assert_allclose(g, expected, rtol=1e-12, atol=1e-15)


def test_gradient_zero_at_ignored_pixels():
    h = three_group(C=3, ignore_id=5)
    labels = np.array([[0, 5], [2, 1]])
    logits = rng.uniform(-3, 3, size=(2, 2, 3))
    g = ial_gradient(logits, labels, h, ClassWeights.uniform(3))
    assert np.all(g[0, 1] == 0.0)
    assert np.any(g[0, 0] != 0.0)


def test_gradient_matches_finite_differences():
    from ialseg.gradcheck import run_loss_check

    result = run_loss_check(seed=7, instances=25)
    assert result.ok, f"max rel error {result.max_rel_error:.3e}"


def test_loss_and_grad_returns_breakdown():
    h = three_group(C=3)
    labels = rng.integers(0, 3, size=(4, 4))
    logits = rng.uniform(-3, 3, size=(4, 4, 3)).astype(np.float32)
    b, g = ial_loss_and_grad(logits, labels, h, ClassWeights.uniform(3))
    assert g.shape == logits.shape
    assert g.dtype == np.float32
    assert len(b.dynamic_weights) == 2
    assert math.isfinite(b.total)
