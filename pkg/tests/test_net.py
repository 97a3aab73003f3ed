import numpy as np
import pytest

from ialseg import layers
from ialseg.net import (
    BiErfPspNet,
    ErfPspNet,
    NetConfig,
    ParamStore,
    build_network,
)

rng = np.random.default_rng(4021)

SMALL = NetConfig(
    height=16, width=16, num_classes=5,
    encoder_channels=(8, 12), block_dilations=(1, 2), pyramid_bins=(1, 2),
)
SMALL_BI = NetConfig(
    variant="bierf", height=8, width=8, full_height=16, full_width=16,
    num_classes=4, encoder_channels=(6, 8), block_dilations=(1, 2),
    pyramid_bins=(1, 2), spatial_channels=(4, 6, 8),
)


def image(n, h, w):
    return rng.uniform(0.05, 0.95, size=(n, h, w, 3)).astype(np.float32)


def test_config_validation():
    with pytest.raises(ValueError):
        NetConfig(variant="resnet")
    with pytest.raises(ValueError):
        NetConfig(height=30)  # not divisible by 4
    with pytest.raises(ValueError):
        NetConfig(variant="bierf", height=16, width=16,
                  full_height=32, full_width=48)  # non-uniform scale
    with pytest.raises(ValueError):
        NetConfig(num_classes=1)


def test_config_round_trip():
    for cfg in (SMALL, SMALL_BI, NetConfig()):
        assert NetConfig.from_dict(cfg.to_dict()) == cfg


def test_erf_output_shape_matches_input():
    net = build_network(SMALL, seed=1)
    for h, w in ((16, 16), (16, 24), (32, 16)):
        y = net.forward(image(2, h, w))
        assert y.shape == (2, h, w, 5)
        assert y.dtype == np.float32
        assert np.all(np.isfinite(y))


def test_erf_unbatched_input():
    net = build_network(SMALL, seed=1)
    x = image(1, 16, 16)
    y3 = net.forward(x[0])
    assert y3.shape == (16, 16, 5)
    np.testing.assert_array_equal(y3, net.forward(x)[0])


def test_erf_input_validation():
    net = build_network(SMALL, seed=1)
    with pytest.raises(ValueError):
        net.forward(rng.normal(size=(1, 16, 16, 4)).astype(np.float32))
    with pytest.raises(ValueError):
        net.forward(rng.normal(size=(1, 18, 16, 3)).astype(np.float32))
    with pytest.raises(ValueError):
        net.forward(rng.normal(size=(1, 4, 4, 3)).astype(np.float32))  # pyramid


def test_bierf_output_shape_matches_full_input():
    net = build_network(SMALL_BI, seed=2)
    y = net.forward(image(2, 16, 16))
    assert y.shape == (2, 16, 16, 4)
    assert np.all(np.isfinite(y))


def test_bierf_rejects_incompatible_size():
    net = build_network(SMALL_BI, seed=2)
    with pytest.raises(ValueError):
        net.forward(image(1, 20, 16))


def test_batch_independence_bitwise():
    net = build_network(SMALL, seed=3)
    x = image(3, 16, 16)
    y = net.forward(x)
    for n in range(3):
        np.testing.assert_array_equal(net.forward(x[n : n + 1])[0], y[n])


def test_same_seed_same_network():
    a = build_network(SMALL, seed=9)
    b = build_network(SMALL, seed=9)
    for pa, pb in zip(a.store, b.store):
        assert pa.name == pb.name
        np.testing.assert_array_equal(pa.value, pb.value)
    c = build_network(SMALL, seed=10)
    assert any(
        not np.array_equal(pa.value, pc.value) for pa, pc in zip(a.store, c.store)
    )


def test_forward_deterministic():
    net = build_network(SMALL, seed=4)
    x = image(2, 16, 16)
    np.testing.assert_array_equal(net.forward(x), net.forward(x))


def test_backward_shapes_and_accumulation():
    net = build_network(SMALL, seed=5)
    x = image(2, 16, 16)
    y = net.forward(x)
    dy = rng.normal(size=y.shape).astype(np.float32)
    net.store.zero_grads()
    dx = net.backward(dy)
    assert dx.shape == x.shape
    grads1 = {p.name: p.grad.copy() for p in net.store}
    assert all(g.shape == net.store[n].value.shape for n, g in grads1.items())
    assert any(np.any(g != 0) for g in grads1.values())
    # a second identical pass accumulates on top
    net.forward(x)
    net.backward(dy)
    for p in net.store:
        np.testing.assert_allclose(p.grad, 2 * grads1[p.name], rtol=1e-5, atol=1e-7)


def test_bierf_backward_runs():
    net = build_network(SMALL_BI, seed=6)
    x = image(1, 16, 16)
    y = net.forward(x)
    net.store.zero_grads()
    dx = net.backward(np.ones_like(y))
    assert dx.shape == x.shape
    assert np.all(np.isfinite(dx))


def test_param_store_contract():
    store = ParamStore()
    p = store.register("w", np.zeros((2, 2), dtype=np.float32))
    assert "w" in store
    assert store["w"] is p
    with pytest.raises(ValueError):
        store.register("w", np.zeros(3, dtype=np.float32))
    state = store.state_dict()
    state["w"] = state["w"] + 1
    store.load_state_dict(state)
    np.testing.assert_array_equal(store["w"].value, np.ones((2, 2)))
    with pytest.raises(ValueError):
        store.load_state_dict({})
    with pytest.raises(ValueError):
        store.load_state_dict({"w": state["w"], "extra": np.zeros(1)})


def test_bias_and_gate_are_l2_exempt():
    net = build_network(SMALL_BI, seed=7)
    for p in net.store:
        if p.name.endswith(".bias") or ".gate." in p.name:
            assert p.l2_exempt, p.name
        elif p.name.endswith(".weight"):
            assert not p.l2_exempt, p.name


def test_bierf_degenerate_matches_context_path():
    """Zeroed spatial path, saturated gate, zeroed projection: the network
    must collapse to classifier(context features) upsampled."""
    net = build_network(SMALL_BI, seed=8)
    for i in range(len(SMALL_BI.spatial_channels)):
        net.store[f"spatial{i}.weight"].value[:] = 0
        net.store[f"spatial{i}.bias"].value[:] = 0
    net.store["fusion.gate.weight"].value[:] = 0
    net.store["fusion.gate.bias"].value[:] = 30.0   # sigmoid ~ 1
    net.store["fusion.proj.weight"].value[:] = 0
    net.store["fusion.proj.bias"].value[:] = 0

    x = image(2, 16, 16)
    full = net.forward(x)

    small = layers.resize_bilinear_fwd(x, 8, 8)
    ctx = net.trunk.forward(small)
    ctx_r = layers.resize_bilinear_fwd(ctx, 2, 2)
    w_cls = net.store["classifier.weight"].value
    b_cls = net.store["classifier.bias"].value
    k = SMALL_BI.spatial_channels[-1]
    z = np.einsum("nhwc,cd->nhwd", ctx_r, w_cls[0, 0, k:, :]) + b_cls
    ref = layers.resize_bilinear_fwd(z, 16, 16)
    np.testing.assert_allclose(full, ref, rtol=1e-5, atol=1e-5)
