"""Toy encoder-decoder segmentation networks built on the layer primitives.

Two variants:

* ``ErfPspNet``: a single-path encoder (two downsampler blocks, a stack of
  non-bottleneck-1D residual blocks), pyramid pooling, a re-weighting
  convolution, a pointwise classifier, and bilinear upsampling back to the
  input size.
* ``BiErfPspNet``: a bilateral variant. The same trunk runs on a downscaled
  copy of the image (context path) plus a shallow three-stage stride-2
  convolutional path at full resolution (spatial path), attention-fused at
  1/8 resolution before classification.

Parameters live in a ``ParamStore`` keyed by dotted names; every parameter
carries a same-shaped gradient slot that ``backward`` accumulates into.
Batch elements are processed independently, so results do not depend on
batch composition.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import layers

__all__ = [
    "Parameter",
    "ParamStore",
    "NetConfig",
    "Conv2d",
    "Downsampler",
    "NonBottleneck1d",
    "PyramidPooling",
    "AttentionFusion",
    "ErfPspNet",
    "BiErfPspNet",
    "build_network",
    "glorot_uniform",
]


class Parameter:
    """Named tensor plus gradient slot; ``l2_exempt`` marks it as skipped by
    weight regularization (biases, attention gates)."""

    __slots__ = ("name", "value", "grad", "l2_exempt")

    def __init__(self, name: str, value: np.ndarray, l2_exempt: bool = False):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)
        self.l2_exempt = l2_exempt

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def __repr__(self) -> str:  # pragma: no cover
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class ParamStore:
    """Ordered registry of parameters with unique names."""

    def __init__(self) -> None:
        self._params: dict[str, Parameter] = {}

    def register(self, name: str, value: np.ndarray, l2_exempt: bool = False) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(name, value, l2_exempt)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grads(self) -> None:
        for p in self:
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value for name, p in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = [n for n in self._params if n not in state]
        extra = [n for n in state if n not in self._params]
        if missing or extra:
            raise ValueError(f"parameter name mismatch: missing {missing}, extra {extra}")
        for name, p in self._params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.value.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: have {p.value.shape}, loading {arr.shape}"
                )
            p.value[...] = arr.astype(p.value.dtype)

    def total_size(self) -> int:
        return sum(p.value.size for p in self)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


class Conv2d:
    """Same-padded convolution module owning a kernel and bias."""

    def __init__(self, store, rng, name, kernel, cin, cout,
                 stride: int = 1, dilation=1, dtype=np.float32,
                 l2_exempt: bool = False):
        kh, kw = _pair(kernel)
        fan = kh * kw
        w = glorot_uniform(rng, (kh, kw, cin, cout), fan * cin, fan * cout, dtype)
        self.w = store.register(f"{name}.weight", w, l2_exempt=l2_exempt)
        self.b = store.register(f"{name}.bias", np.zeros(cout, dtype=dtype), l2_exempt=True)
        self.stride = int(stride)
        self.dilation = dilation
        self._x = None

    def forward(self, x):
        self._x = x
        return layers.conv2d_fwd(x, self.w.value, self.b.value, self.stride, self.dilation)

    def backward(self, dy):
        dx, dw, db = layers.conv2d_bwd(dy, self._x, self.w.value, self.stride, self.dilation)
        self.w.grad += dw
        self.b.grad += db
        self._x = None
        return dx


class Downsampler:
    """Halves resolution: stride-2 3x3 conv and 2x2 max pool, channel-concatenated.

    Output channels = cout, of which the last cin come from the pool branch.
    """

    def __init__(self, store, rng, name, cin, cout, dtype=np.float32):
        if cout <= cin:
            raise ValueError(f"downsampler needs cout > cin, got {cin} -> {cout}")
        self.conv = Conv2d(store, rng, f"{name}.conv", 3, cin, cout - cin,
                           stride=2, dtype=dtype)
        self.out_channels = cout

    def forward(self, x):
        self._x_shape = x.shape
        conv_y = self.conv.forward(x)
        pool_y, self._pool_idx = layers.maxpool2x2_fwd(x)
        return np.concatenate([conv_y, pool_y], axis=-1)

    def backward(self, dy):
        split = self.conv.w.value.shape[3]
        dx = self.conv.backward(np.ascontiguousarray(dy[..., :split]))
        dx = dx + layers.maxpool2x2_bwd(
            np.ascontiguousarray(dy[..., split:]), self._pool_idx, self._x_shape
        )
        return dx


class NonBottleneck1d:
    """Residual block of factorized 3x1 / 1x3 convolutions.

    conv3x1 -> ReLU -> conv1x3 -> ReLU -> dilated conv3x1 -> ReLU ->
    dilated conv1x3, identity skip, final ReLU.  Channels preserved.
    """

    def __init__(self, store, rng, name, channels, dilation: int = 1, dtype=np.float32):
        c = channels
        self.conv_v1 = Conv2d(store, rng, f"{name}.conv_v1", (3, 1), c, c, dtype=dtype)
        self.conv_h1 = Conv2d(store, rng, f"{name}.conv_h1", (1, 3), c, c, dtype=dtype)
        self.conv_v2 = Conv2d(store, rng, f"{name}.conv_v2", (3, 1), c, c,
                              dilation=(dilation, 1), dtype=dtype)
        self.conv_h2 = Conv2d(store, rng, f"{name}.conv_h2", (1, 3), c, c,
                              dilation=(1, dilation), dtype=dtype)
        self.out_channels = c

    def forward(self, x):
        a1 = self.conv_v1.forward(x)
        a2 = self.conv_h1.forward(layers.relu_fwd(a1))
        a3 = self.conv_v2.forward(layers.relu_fwd(a2))
        a4 = self.conv_h2.forward(layers.relu_fwd(a3))
        s = a4 + x
        self._cache = (a1, a2, a3, s)
        return layers.relu_fwd(s)

    def backward(self, dy):
        a1, a2, a3, s = self._cache
        ds = layers.relu_bwd(dy, s)
        d = self.conv_h2.backward(ds)
        d = self.conv_v2.backward(layers.relu_bwd(d, a3))
        d = self.conv_h1.backward(layers.relu_bwd(d, a2))
        dx = self.conv_v1.backward(layers.relu_bwd(d, a1))
        self._cache = None
        return dx + ds


class PyramidPooling:
    """Multi-bin context: pool to b x b, 1x1 conv to cin // n_bins channels,
    bilinear upsample, concatenate with the input."""

    def __init__(self, store, rng, name, cin, bins=(1, 2, 4), dtype=np.float32):
        if not bins:
            raise ValueError("pyramid needs at least one bin size")
        branch_c = cin // len(bins)
        if branch_c < 1:
            raise ValueError(f"too many pyramid bins ({len(bins)}) for {cin} channels")
        self.bins = tuple(int(b) for b in bins)
        self.convs = [
            Conv2d(store, rng, f"{name}.branch{b}", 1, cin, branch_c, dtype=dtype)
            for b in self.bins
        ]
        self.branch_channels = branch_c
        self.out_channels = cin + branch_c * len(self.bins)

    def forward(self, x):
        self._x_shape = x.shape
        _, H, W, _ = x.shape
        outs = [x]
        self._pooled_shapes = []
        for b, conv in zip(self.bins, self.convs):
            pooled = layers.adaptive_avg_pool_fwd(x, b)
            projected = conv.forward(pooled)
            self._pooled_shapes.append(projected.shape)
            outs.append(layers.resize_bilinear_fwd(projected, H, W))
        return np.concatenate(outs, axis=-1)

    def backward(self, dy):
        _, H, W, C = self._x_shape
        dx = np.ascontiguousarray(dy[..., :C])
        offset = C
        for b, conv, q_shape in zip(self.bins, self.convs, self._pooled_shapes):
            bc = q_shape[-1]
            du = np.ascontiguousarray(dy[..., offset : offset + bc])
            offset += bc
            dq = layers.resize_bilinear_bwd(du, q_shape, H, W)
            dp = conv.backward(dq)
            dx = dx + layers.adaptive_avg_pool_bwd(dp, self._x_shape, b)
        return dx


class AttentionFusion:
    """Fuse same-resolution spatial and context features.

    Concatenate, derive a per-channel sigmoid gate from the global average,
    rescale the concatenation by the gate, then add a 1x1 projection of the
    rescaled features back onto themselves.  The gate parameters are marked
    l2-exempt so regularization cannot push the gate logits toward zero.
    """

    def __init__(self, store, rng, name, c_spatial, c_context, dtype=np.float32):
        ct = c_spatial + c_context
        self.gate = Conv2d(store, rng, f"{name}.gate", 1, ct, ct,
                           dtype=dtype, l2_exempt=True)
        self.proj = Conv2d(store, rng, f"{name}.proj", 1, ct, ct, dtype=dtype)
        self.c_spatial = c_spatial
        self.out_channels = ct

    def forward(self, spatial_feat, context_feat):
        if spatial_feat.shape[:3] != context_feat.shape[:3]:
            raise ValueError(
                f"fusion inputs disagree: {spatial_feat.shape} vs {context_feat.shape}"
            )
        cat = np.concatenate([spatial_feat, context_feat], axis=-1)
        pooled = layers.global_avg_pool_fwd(cat)
        gate = layers.sigmoid_fwd(self.gate.forward(pooled))
        scaled = cat * gate
        self._cache = (cat, gate)
        return self.proj.forward(scaled) + scaled

    def backward(self, dy):
        cat, gate = self._cache
        dscaled = self.proj.backward(dy) + dy
        dcat = dscaled * gate
        dgate = (dscaled * cat).sum(axis=(1, 2), keepdims=True)
        dpooled = self.gate.backward(layers.sigmoid_bwd(dgate, gate))
        dcat = dcat + layers.global_avg_pool_bwd(dpooled, cat.shape)
        self._cache = None
        k = self.c_spatial
        return np.ascontiguousarray(dcat[..., :k]), np.ascontiguousarray(dcat[..., k:])


@dataclass(frozen=True)
class NetConfig:
    """Architecture hyperparameters.

    ``height`` x ``width`` is the context-resolution input; the bilateral
    variant takes ``full_height`` x ``full_width`` images and must keep a
    uniform scale factor between the two.
    """

    variant: str = "erf"
    height: int = 64
    width: int = 128
    full_height: int = 128
    full_width: int = 256
    num_classes: int = 9
    encoder_channels: tuple[int, int] = (16, 64)
    block_dilations: tuple[int, ...] = (1, 2, 4)
    pyramid_bins: tuple[int, ...] = (1, 2, 4)
    spatial_channels: tuple[int, ...] = (16, 32, 64)

    def __post_init__(self):
        if self.variant not in ("erf", "bierf"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.height % 4 or self.width % 4:
            raise ValueError("context size must be divisible by 4")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if len(self.encoder_channels) != 2:
            raise ValueError("encoder_channels must name two stages")
        if self.variant == "bierf":
            if self.full_height % 8 or self.full_width % 8:
                raise ValueError("bilateral input size must be divisible by 8")
            if self.full_height * self.width != self.full_width * self.height:
                raise ValueError("bilateral scale factor must be uniform in H and W")

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "height": self.height,
            "width": self.width,
            "full_height": self.full_height,
            "full_width": self.full_width,
            "num_classes": self.num_classes,
            "encoder_channels": list(self.encoder_channels),
            "block_dilations": list(self.block_dilations),
            "pyramid_bins": list(self.pyramid_bins),
            "spatial_channels": list(self.spatial_channels),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        kw = dict(d)
        for key in ("encoder_channels", "block_dilations", "pyramid_bins", "spatial_channels"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)


class _ContextTrunk:
    """Shared encoder: downsampler x2 -> residual stack -> pyramid ->
    re-weight conv -> ReLU.  Emits quarter-resolution features."""

    def __init__(self, store, rng, name, config: NetConfig, dtype):
        c1, c2 = config.encoder_channels
        self.down1 = Downsampler(store, rng, f"{name}.down1", 3, c1, dtype)
        self.down2 = Downsampler(store, rng, f"{name}.down2", c1, c2, dtype)
        self.blocks = [
            NonBottleneck1d(store, rng, f"{name}.block{i}", c2, d, dtype)
            for i, d in enumerate(config.block_dilations)
        ]
        self.pyramid = PyramidPooling(store, rng, f"{name}.pyramid", c2,
                                      config.pyramid_bins, dtype)
        self.reweight = Conv2d(store, rng, f"{name}.reweight", 3,
                               self.pyramid.out_channels, c2, dtype=dtype)
        self.out_channels = c2

    def forward(self, x):
        a1 = self.down1.forward(x)
        a2 = self.down2.forward(layers.relu_fwd(a1))
        h = layers.relu_fwd(a2)
        for blk in self.blocks:
            h = blk.forward(h)
        a3 = self.reweight.forward(self.pyramid.forward(h))
        self._cache = (a1, a2, a3)
        return layers.relu_fwd(a3)

    def backward(self, dy):
        a1, a2, a3 = self._cache
        d = self.reweight.backward(layers.relu_bwd(dy, a3))
        d = self.pyramid.backward(d)
        for blk in reversed(self.blocks):
            d = blk.backward(d)
        d = self.down2.backward(layers.relu_bwd(d, a2))
        dx = self.down1.backward(layers.relu_bwd(d, a1))
        self._cache = None
        return dx


def _ensure_batch(image, what: str):
    x = np.asarray(image)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"{what} must be HxWx3 or NxHxWx3, got shape {x.shape}")


class ErfPspNet:
    """Single-path network: logits at the input resolution.

    Accepts any input whose spatial size is divisible by 4 and large enough
    for the widest pyramid bin.
    """

    def __init__(self, config: NetConfig, rng: np.random.Generator, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.store = ParamStore()
        self.trunk = _ContextTrunk(self.store, rng, "trunk", config, self.dtype)
        self.classifier = Conv2d(self.store, rng, "classifier", 1,
                                 self.trunk.out_channels, config.num_classes,
                                 dtype=self.dtype)

    def _check_input(self, x):
        _, H, W, C = x.shape
        if C != 3:
            raise ValueError(f"expected 3 input channels, got {C}")
        if H % 4 or W % 4:
            raise ValueError(f"input size {H}x{W} not divisible by 4")
        max_bin = max(self.config.pyramid_bins)
        if H // 4 < max_bin or W // 4 < max_bin:
            raise ValueError(f"input {H}x{W} too small for pyramid bins")

    def forward(self, image):
        x, squeeze = _ensure_batch(image, "image")
        self._check_input(x)
        x = x.astype(self.dtype, copy=False)
        feats = self.trunk.forward(x)
        z = self.classifier.forward(feats)
        self._z_shape = z.shape
        self._squeeze = squeeze
        logits = layers.resize_bilinear_fwd(z, x.shape[1], x.shape[2])
        return logits[0] if squeeze else logits

    def backward(self, dlogits):
        d = np.asarray(dlogits)
        if self._squeeze:
            d = d[None]
        dz = layers.resize_bilinear_bwd(d, self._z_shape, d.shape[1], d.shape[2])
        dx = self.trunk.backward(self.classifier.backward(dz))
        return dx[0] if self._squeeze else dx


class BiErfPspNet:
    """Bilateral network over full-resolution images.

    The context path runs the shared trunk on a bilinearly downscaled copy;
    the spatial path is three stride-2 conv+ReLU stages at full resolution.
    Both are attention-fused at 1/8 of the full resolution.
    """

    def __init__(self, config: NetConfig, rng: np.random.Generator, dtype=np.float32):
        if config.variant != "bierf":
            config = NetConfig.from_dict({**config.to_dict(), "variant": "bierf"})
        self.config = config
        self.dtype = np.dtype(dtype)
        self.store = ParamStore()
        self.trunk = _ContextTrunk(self.store, rng, "context", config, self.dtype)
        chans = [3, *config.spatial_channels]
        self.spatial = [
            Conv2d(self.store, rng, f"spatial{i}", 3, chans[i], chans[i + 1],
                   stride=2, dtype=self.dtype)
            for i in range(len(config.spatial_channels))
        ]
        self.fusion = AttentionFusion(self.store, rng, "fusion",
                                      config.spatial_channels[-1],
                                      self.trunk.out_channels, self.dtype)
        self.classifier = Conv2d(self.store, rng, "classifier", 1,
                                 self.fusion.out_channels, config.num_classes,
                                 dtype=self.dtype)

    def _context_size(self, H1: int, W1: int) -> tuple[int, int]:
        ch, fh = self.config.height, self.config.full_height
        cw, fw = self.config.width, self.config.full_width
        if (H1 * ch) % fh or (W1 * cw) % fw:
            raise ValueError(f"input {H1}x{W1} incompatible with context scale")
        return (H1 * ch) // fh, (W1 * cw) // fw

    def forward(self, image):
        x, squeeze = _ensure_batch(image, "image")
        _, H1, W1, C = x.shape
        if C != 3:
            raise ValueError(f"expected 3 input channels, got {C}")
        if H1 % 8 or W1 % 8:
            raise ValueError(f"input size {H1}x{W1} not divisible by 8")
        x = x.astype(self.dtype, copy=False)
        ctx_h, ctx_w = self._context_size(H1, W1)
        if ctx_h % 4 or ctx_w % 4:
            raise ValueError(f"context size {ctx_h}x{ctx_w} not divisible by 4")

        small = layers.resize_bilinear_fwd(x, ctx_h, ctx_w)
        self._small_shape = small.shape
        ctx = self.trunk.forward(small)
        self._ctx_shape = ctx.shape

        h = x
        self._spatial_pre = []
        for conv in self.spatial:
            a = conv.forward(h)
            self._spatial_pre.append(a)
            h = layers.relu_fwd(a)

        ctx_r = layers.resize_bilinear_fwd(ctx, H1 // 8, W1 // 8)
        fused = self.fusion.forward(h, ctx_r)
        z = self.classifier.forward(fused)
        self._z_shape = z.shape
        self._in_shape = x.shape
        self._squeeze = squeeze
        logits = layers.resize_bilinear_fwd(z, H1, W1)
        return logits[0] if squeeze else logits

    def backward(self, dlogits):
        d = np.asarray(dlogits)
        if self._squeeze:
            d = d[None]
        N, H1, W1, _ = self._in_shape
        dz = layers.resize_bilinear_bwd(d, self._z_shape, H1, W1)
        dfused = self.classifier.backward(dz)
        dsp, dctx_r = self.fusion.backward(dfused)

        dctx = layers.resize_bilinear_bwd(dctx_r, self._ctx_shape, H1 // 8, W1 // 8)
        dsmall = self.trunk.backward(dctx)
        dx = layers.resize_bilinear_bwd(
            dsmall, self._in_shape, self._small_shape[1], self._small_shape[2]
        )

        h = dsp
        for i in range(len(self.spatial) - 1, -1, -1):
            h = layers.relu_bwd(h, self._spatial_pre[i])
            h = self.spatial[i].backward(h)
        dx = dx + h
        self._spatial_pre = None
        return dx[0] if self._squeeze else dx


def build_network(config: NetConfig, seed: int, dtype=np.float32):
    """Construct the configured variant with parameters drawn from a
    generator seeded by (seed, 0)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    if config.variant == "bierf":
        return BiErfPspNet(config, rng, dtype)
    return ErfPspNet(config, rng, dtype)
