"""Central finite-difference verification of every analytic gradient.

Each named case builds small double-precision tensors, reduces the layer
output to a scalar through a fixed random projection, and compares the
analytic backward pass against (f(x+h) - f(x-h)) / 2h at sampled
coordinates.  Inputs are drawn away from ReLU and max-pool kinks so the
loss surface is smooth at the evaluation points; the step is 1e-6.

The loss check freezes the dynamic weights at the evaluation point, since
the analytic gradient treats them as constants.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import layers
from .hierarchy import ClassDef, ImportanceHierarchy, group_rank_map
from .loss import ClassWeights, ial_loss_and_grad
from .net import (
    AttentionFusion,
    BiErfPspNet,
    Conv2d,
    Downsampler,
    ErfPspNet,
    NetConfig,
    NonBottleneck1d,
    ParamStore,
    PyramidPooling,
)

__all__ = ["CheckResult", "run_layer_checks", "run_loss_check", "run_all_checks",
           "worst_error", "DEFAULT_STEP", "REL_FLOOR"]

DEFAULT_STEP = 1e-6
# relative errors are measured against max(|analytic|, |numeric|, floor) so
# finite-difference noise on near-zero gradients cannot dominate
REL_FLOOR = 1e-4


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_error: float

    @property
    def ok(self) -> bool:
        return self.max_rel_error < 1e-5


def relative_error(analytic: float, numeric: float, floor: float = REL_FLOOR) -> float:
    a, n = float(analytic), float(numeric)
    return abs(a - n) / max(abs(a), abs(n), floor)


def _fd_at(value: Callable[[], float], arr: np.ndarray, idx: int,
           step: float = DEFAULT_STEP) -> float:
    old = arr.flat[idx]
    arr.flat[idx] = old + step
    fp = value()
    arr.flat[idx] = old - step
    fm = value()
    arr.flat[idx] = old
    return (fp - fm) / (2.0 * step)


def _compare_sampled(value, arr, analytic, rng, samples) -> float:
    k = min(samples, arr.size)
    idx = rng.choice(arr.size, size=k, replace=False)
    worst = 0.0
    for i in idx:
        num = _fd_at(value, arr, int(i))
        worst = max(worst, relative_error(analytic.flat[int(i)], num))
    return worst


def _signed_away_from_zero(rng, shape, low=0.05, high=1.0):
    mag = rng.uniform(low, high, size=shape)
    sign = rng.integers(0, 2, size=shape) * 2 - 1
    return mag * sign


def _pool_margins_ok(x: np.ndarray, margin: float = 1e-4) -> bool:
    N, H, W, C = x.shape
    win = (
        x.reshape(N, H // 2, 2, W // 2, 2, C)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(N, H // 2, W // 2, C, 4)
    )
    top2 = np.sort(win, axis=-1)[..., -2:]
    return bool(np.all(top2[..., 1] - top2[..., 0] > margin))


def _projection(rng, shape):
    return rng.normal(size=shape)


def _sparse_projection(rng, shape, active: int = 32):
    """Projection with few nonzero entries.

    Differencing a sum of thousands of projected outputs leaves the
    difference quotient dominated by the sum's own rounding; restricting
    the projection keeps the scalar small without changing what the
    gradient comparison means.
    """
    R = np.zeros(shape)
    k = min(active, R.size)
    idx = rng.choice(R.size, size=k, replace=False)
    R.flat[idx] = rng.normal(size=k)
    return R


def _check_case(name, tensors, value, analytic, rng, samples=10) -> CheckResult:
    worst = 0.0
    for arr, grad in zip(tensors, analytic):
        worst = max(worst, _compare_sampled(value, arr, grad, rng, samples))
    return CheckResult(name, worst)


def _case_softmax(rng) -> CheckResult:
    x = rng.uniform(-4, 4, size=(3, 4, 6))
    R = _projection(rng, x.shape)

    def value():
        return float(np.sum(layers.softmax(x) * R))

    g = layers.softmax_bwd(R, layers.softmax(x))
    return _check_case("softmax", [x], value, [g], rng)


def _case_relu(rng) -> CheckResult:
    x = _signed_away_from_zero(rng, (2, 5, 4, 3))
    R = _projection(rng, x.shape)

    def value():
        return float(np.sum(layers.relu_fwd(x) * R))

    g = layers.relu_bwd(R, x)
    return _check_case("relu", [x], value, [g], rng)


def _case_sigmoid(rng) -> CheckResult:
    x = rng.uniform(-3, 3, size=(2, 3, 3, 4))
    R = _projection(rng, x.shape)

    def value():
        return float(np.sum(layers.sigmoid_fwd(x) * R))

    g = layers.sigmoid_bwd(R, layers.sigmoid_fwd(x))
    return _check_case("sigmoid", [x], value, [g], rng)


def _conv_case(name, rng, x_shape, w_shape, stride, dilation) -> CheckResult:
    x = rng.uniform(-1, 1, size=x_shape)
    w = rng.uniform(-0.7, 0.7, size=w_shape)
    b = rng.uniform(-0.3, 0.3, size=w_shape[3])
    y0 = layers.conv2d_fwd(x, w, b, stride, dilation)
    R = _projection(rng, y0.shape)

    def value():
        return float(np.sum(layers.conv2d_fwd(x, w, b, stride, dilation) * R))

    dx, dw, db = layers.conv2d_bwd(R, x, w, stride, dilation)
    return _check_case(name, [x, w, b], value, [dx, dw, db], rng)


def _case_maxpool(rng) -> CheckResult:
    while True:
        x = rng.uniform(-1, 1, size=(2, 6, 6, 4))
        if _pool_margins_ok(x):
            break
    y0, idx0 = layers.maxpool2x2_fwd(x)
    R = _projection(rng, y0.shape)

    def value():
        y, _ = layers.maxpool2x2_fwd(x)
        return float(np.sum(y * R))

    g = layers.maxpool2x2_bwd(R, idx0, x.shape)
    return _check_case("maxpool2x2", [x], value, [g], rng)


def _case_global_pool(rng) -> CheckResult:
    x = rng.uniform(-1, 1, size=(2, 4, 5, 3))
    R = _projection(rng, (2, 1, 1, 3))

    def value():
        return float(np.sum(layers.global_avg_pool_fwd(x) * R))

    g = layers.global_avg_pool_bwd(R, x.shape)
    return _check_case("global_avg_pool", [x], value, [g], rng)


def _case_adaptive_pool(rng) -> CheckResult:
    x = rng.uniform(-1, 1, size=(1, 7, 9, 3))
    R = _projection(rng, (1, 3, 3, 3))

    def value():
        return float(np.sum(layers.adaptive_avg_pool_fwd(x, 3) * R))

    g = layers.adaptive_avg_pool_bwd(R, x.shape, 3)
    return _check_case("adaptive_avg_pool", [x], value, [g], rng)


def _resize_case(name, rng, x_shape, out_hw) -> CheckResult:
    x = rng.uniform(-1, 1, size=x_shape)
    ho, wo = out_hw
    R = _projection(rng, (x_shape[0], ho, wo, x_shape[3]))

    def value():
        return float(np.sum(layers.resize_bilinear_fwd(x, ho, wo) * R))

    g = layers.resize_bilinear_bwd(R, x.shape, ho, wo)
    return _check_case(name, [x], value, [g], rng)


def _module_case(name, rng, store, backward, inputs, forward, samples=10) -> CheckResult:
    """FD over module inputs and every registered parameter.

    ``forward`` maps the current inputs to the module output; analytic
    parameter grads are read from the store after one backward pass.
    """
    y0 = forward()
    R = _projection(rng, y0.shape)

    def value():
        return float(np.sum(forward() * R))

    store.zero_grads()
    in_grads = backward(R)
    if not isinstance(in_grads, tuple):
        in_grads = (in_grads,)
    tensors = list(inputs) + [p.value for p in store]
    analytic = list(in_grads) + [p.grad.copy() for p in store]
    return _check_case(name, tensors, value, analytic, rng, samples)


def _case_downsampler(rng) -> CheckResult:
    store = ParamStore()
    block = Downsampler(store, rng, "down", 3, 7, dtype=np.float64)
    while True:
        x = rng.uniform(-1, 1, size=(2, 6, 8, 3))
        if _pool_margins_ok(x):
            break
    return _module_case(
        "downsampler", rng, store, block.backward, [x], lambda: block.forward(x)
    )


def _case_nb1d(rng) -> CheckResult:
    store = ParamStore()
    block = NonBottleneck1d(store, rng, "nb", 5, dilation=2, dtype=np.float64)
    x = rng.uniform(-1, 1, size=(2, 6, 6, 5))
    return _module_case(
        "non_bottleneck_1d", rng, store, block.backward, [x], lambda: block.forward(x)
    )


def _case_pyramid(rng) -> CheckResult:
    store = ParamStore()
    block = PyramidPooling(store, rng, "pp", 4, bins=(1, 2), dtype=np.float64)
    x = rng.uniform(-1, 1, size=(1, 6, 8, 4))
    return _module_case(
        "pyramid_pooling", rng, store, block.backward, [x], lambda: block.forward(x)
    )


def _case_fusion(rng) -> CheckResult:
    store = ParamStore()
    block = AttentionFusion(store, rng, "fuse", 3, 4, dtype=np.float64)
    sp = rng.uniform(-1, 1, size=(2, 4, 5, 3))
    cx = rng.uniform(-1, 1, size=(2, 4, 5, 4))
    return _module_case(
        "attention_fusion", rng, store, block.backward,
        [sp, cx], lambda: block.forward(sp, cx),
    )


def _net_param_samples(store, rng, budget=50):
    """One random coordinate per parameter tensor, topped up to the budget."""
    picks = [(p, int(rng.integers(p.value.size))) for p in store]
    params = list(store)
    while len(picks) < budget:
        p = params[int(rng.integers(len(params)))]
        picks.append((p, int(rng.integers(p.value.size))))
    return picks


def _full_net_case(name, rng, net, x, input_samples=8, param_budget=50) -> CheckResult:
    y0 = net.forward(x)
    R = _sparse_projection(rng, y0.shape)

    def value():
        return float(np.sum(net.forward(x) * R))

    net.store.zero_grads()
    dx = net.backward(R)
    worst = _compare_sampled(value, x, dx, rng, input_samples)
    analytic = {p.name: p.grad.copy() for p in net.store}
    for p, idx in _net_param_samples(net.store, rng, param_budget):
        num = _fd_at(value, p.value, idx)
        worst = max(worst, relative_error(analytic[p.name].flat[idx], num))
    return CheckResult(name, worst)


def _case_erf(rng) -> CheckResult:
    config = NetConfig(
        variant="erf", height=16, width=16, num_classes=5,
        encoder_channels=(8, 12), block_dilations=(1, 2), pyramid_bins=(1, 2, 4),
    )
    net = ErfPspNet(config, rng, dtype=np.float64)
    x = rng.uniform(0.05, 0.95, size=(1, 16, 16, 3))
    return _full_net_case("erf_pspnet", rng, net, x)


def _case_bierf(rng) -> CheckResult:
    config = NetConfig(
        variant="bierf", height=8, width=8, full_height=16, full_width=16,
        num_classes=4, encoder_channels=(6, 8), block_dilations=(1, 2),
        pyramid_bins=(1, 2), spatial_channels=(4, 6, 8),
    )
    net = BiErfPspNet(config, rng, dtype=np.float64)
    x = rng.uniform(0.05, 0.95, size=(1, 16, 16, 3))
    return _full_net_case("bierf_pspnet", rng, net, x)


_LAYER_CASES = [
    ("softmax", _case_softmax),
    ("relu", _case_relu),
    ("sigmoid", _case_sigmoid),
    ("conv2d", lambda rng: _conv_case("conv2d", rng, (2, 5, 6, 3), (3, 3, 3, 4), 1, 1)),
    ("conv2d_stride2",
     lambda rng: _conv_case("conv2d_stride2", rng, (2, 6, 8, 3), (3, 3, 3, 5), 2, 1)),
    ("conv2d_dilated",
     lambda rng: _conv_case("conv2d_dilated", rng, (1, 7, 9, 2), (3, 3, 2, 3), 1, (2, 2))),
    ("conv2d_factorized",
     lambda rng: _conv_case("conv2d_factorized", rng, (1, 7, 9, 2), (3, 1, 2, 3), 1, (3, 1))),
    ("maxpool2x2", _case_maxpool),
    ("global_avg_pool", _case_global_pool),
    ("adaptive_avg_pool", _case_adaptive_pool),
    ("bilinear_resize_up", lambda rng: _resize_case("bilinear_resize_up", rng, (2, 3, 5, 4), (7, 11))),
    ("bilinear_resize_down", lambda rng: _resize_case("bilinear_resize_down", rng, (1, 8, 10, 2), (5, 4))),
    ("downsampler", _case_downsampler),
    ("non_bottleneck_1d", _case_nb1d),
    ("pyramid_pooling", _case_pyramid),
    ("attention_fusion", _case_fusion),
    ("erf_pspnet", _case_erf),
    ("bierf_pspnet", _case_bierf),
]


def run_layer_checks(seed: int = 0) -> list[CheckResult]:
    """Finite-difference checks for every layer and both networks."""
    results = []
    for i, (_, case) in enumerate(_LAYER_CASES):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 100 + i]))
        results.append(case(rng))
    return results


def _random_three_group_hierarchy(rng, num_classes: int, ignore_id=None):
    ids = [int(i) for i in rng.permutation(num_classes)]
    cut1 = int(rng.integers(1, num_classes - 1))
    cut2 = int(rng.integers(cut1 + 1, num_classes))
    groups = (tuple(ids[:cut1]), tuple(ids[cut1:cut2]), tuple(ids[cut2:]))
    classes = tuple(ClassDef(i, f"c{i}") for i in range(num_classes))
    return ImportanceHierarchy(classes=classes, groups=groups, ignore_id=ignore_id)


def run_loss_check(seed: int = 0, instances: int = 100,
                   max_h: int = 8, max_w: int = 8, max_c: int = 6) -> CheckResult:
    """FD check of the loss gradient on random instances.

    The differenced scalar is the composed loss with the group
    coefficients frozen at the unperturbed point, matching the
    detached-weight analytic gradient.  Because a logit coordinate only
    enters the total through its own pixel's softmax, every other
    pixel's term is exactly constant in it; those terms are dropped
    before differencing so their rounding cannot bury the quotient.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    worst = 0.0
    for k in range(instances):
        H = int(rng.integers(1, max_h + 1))
        W = int(rng.integers(1, max_w + 1))
        C = int(rng.integers(3, max_c + 1))
        use_ignore = bool(rng.integers(0, 4) == 0)
        ignore_id = C + 100 if use_ignore else None
        hier = _random_three_group_hierarchy(rng, C, ignore_id)
        labels = rng.integers(0, C, size=(H, W))
        if use_ignore:
            mask = rng.random(size=(H, W)) < 0.15
            mask.flat[0] = False  # keep at least one scored pixel
            labels = np.where(mask, ignore_id, labels)
        logits = rng.uniform(-5, 5, size=(H, W, C))
        weights = ClassWeights(rng.uniform(0.5, 5.0, size=C))
        alpha = float(rng.uniform(0.5, 2.0))
        lam = float(rng.uniform(0.1, 1.0))

        breakdown, grad = ial_loss_and_grad(logits, labels, hier, weights, alpha, lam)
        coeffs = np.asarray((0.0,) + breakdown.group_coefficients())
        rank_map = group_rank_map(hier, labels)
        flat_rank = rank_map.ravel()
        flat_labels = labels.ravel()
        flat_logits = logits.reshape(-1, C)
        n_pix = int(np.count_nonzero(flat_rank))

        def pixel_term(q: int) -> float:
            # this pixel's frozen-coefficient contribution to the total
            if flat_rank[q] == 0:
                return 0.0
            row = flat_logits[q]
            p = np.exp(row - row.max())
            p_true = p[flat_labels[q]] / p.sum()
            w = weights.values[flat_labels[q]]
            return float(
                coeffs[flat_rank[q]] * w * -np.log(max(p_true, 1e-12)) / n_pix
            )

        n_coords = min(12, logits.size)
        for i in rng.choice(logits.size, size=n_coords, replace=False):
            i = int(i)
            q = i // C
            num = _fd_at(lambda: pixel_term(q), logits, i)
            worst = max(worst, relative_error(grad.flat[i], num))
    return CheckResult("ial_gradient", worst)


def run_all_checks(seed: int = 0, loss_instances: int = 100) -> list[CheckResult]:
    return [run_loss_check(seed, loss_instances), *run_layer_checks(seed)]


def worst_error(results) -> float:
    return max(r.max_rel_error for r in results)
