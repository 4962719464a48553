"""Layer stack construction, classifier-head placement, and the forward pass.

The body network is an ordered list of layers. Weight-bearing layers (dense,
conv) are indexed 1..L_w; pooling/activation layers between two weight layers
belong to the preceding weight layer's block. Classifier heads attach to the
activation at the end of a block and each ends in a softmax over the K class
scores.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor_ops import (
    RngState,
    ShapeError,
    conv2d_output_hw,
    _pad_input,
    softmax as _softmax,
)

WEIGHT_KINDS = ("dense", "conv")
LAYER_KINDS = WEIGHT_KINDS + ("relu", "maxpool", "global-avg-pool", "flatten", "softmax")


class BuildError(ValueError):
    """Raised when a layer chain cannot be assembled."""


class PlacementError(ValueError):
    """Raised when the head-placement heuristic yields an invalid index."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int | None = None            # dense
    filters: int | None = None          # conv
    kernel: tuple | None = None         # conv / maxpool, (kh, kw)
    stride: int = 1
    padding: str = "valid"
    init: str | None = None             # "xavier" or "gaussian"
    sigma: float = 0.01                 # gaussian init scale

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise BuildError(f"unknown layer kind {self.kind!r}")
        if self.kind in WEIGHT_KINDS and self.init not in ("xavier", "gaussian"):
            raise BuildError(f"{self.kind} layer needs init 'xavier' or 'gaussian'")
        if self.kind not in WEIGHT_KINDS and self.init is not None:
            raise BuildError(f"{self.kind} layer must not carry an init spec")


def dense(units, init="xavier", sigma=0.01):
    return LayerSpec("dense", units=units, init=init, sigma=sigma)


def conv(filters, kernel, stride=1, padding="valid", init="xavier", sigma=0.01):
    return LayerSpec("conv", filters=filters, kernel=tuple(kernel), stride=stride,
                     padding=padding, init=init, sigma=sigma)


def relu_layer():
    return LayerSpec("relu")


def maxpool(kernel, stride=None):
    kernel = tuple(kernel)
    return LayerSpec("maxpool", kernel=kernel, stride=stride or kernel[0])


def global_avg_pool_layer():
    return LayerSpec("global-avg-pool")


def flatten():
    return LayerSpec("flatten")


def softmax_layer():
    return LayerSpec("softmax")


def _infer_shape(spec, shape, pos):
    """Output shape of one layer given its (batch-free) input shape."""
    if spec.kind == "dense":
        if len(shape) != 1:
            raise BuildError(
                f"layer {pos} (dense): expects a flat input, got shape {shape}; add a flatten layer"
            )
        return (spec.units,)
    if spec.kind == "conv":
        if len(shape) != 3:
            raise BuildError(f"layer {pos} (conv): expects (C,H,W) input, got shape {shape}")
        c, h, w = shape
        kh, kw = spec.kernel
        try:
            ho, wo = conv2d_output_hw(h, w, kh, kw, spec.stride, spec.padding)
        except ShapeError as e:
            raise BuildError(f"layer {pos} (conv): {e}") from e
        return (spec.filters, ho, wo)
    if spec.kind == "maxpool":
        if len(shape) != 3:
            raise BuildError(f"layer {pos} (maxpool): expects (C,H,W) input, got shape {shape}")
        c, h, w = shape
        kh, kw = spec.kernel
        if kh > h or kw > w:
            raise BuildError(f"layer {pos} (maxpool): window {spec.kernel} larger than input {shape}")
        s = spec.stride
        return (c, (h - kh) // s + 1, (w - kw) // s + 1)
    if spec.kind == "global-avg-pool":
        if len(shape) != 3:
            raise BuildError(f"layer {pos} (global-avg-pool): expects (C,H,W), got {shape}")
        return (shape[0],)
    if spec.kind == "flatten":
        return (int(np.prod(shape)),)
    # relu / softmax keep the shape
    return shape


def _init_weight(spec, in_shape, rng):
    if spec.kind == "dense":
        fan_in = in_shape[0]
        fan_out = spec.units
        shape = (spec.units, fan_in)
    else:  # conv
        c = in_shape[0]
        kh, kw = spec.kernel
        fan_in = c * kh * kw
        fan_out = spec.filters * kh * kw
        shape = (spec.filters, c, kh, kw)
    if spec.init == "gaussian":
        return rng.standard_normal(shape) * spec.sigma
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return rng.standard_normal(shape) * std


@dataclass
class Network:
    """A built layer stack with initialized weights.

    weights[i] belongs to the i-th weight-bearing layer (0-based here;
    attach points r_m are 1-based over the same ordering).
    """

    specs: list
    input_shape: tuple
    weights: list = field(default_factory=list)
    shapes: list = field(default_factory=list)           # per-layer output shapes
    weight_positions: list = field(default_factory=list)  # layer index per weight layer

    @property
    def num_weight_layers(self):
        return len(self.weight_positions)

    def block_end(self, r):
        """Layer-list index of the last layer in weight layer r's block (r is 1-based)."""
        if not 1 <= r <= self.num_weight_layers:
            raise ValueError(f"attach point {r} outside [1, {self.num_weight_layers}]")
        if r == self.num_weight_layers:
            return len(self.specs) - 1
        return self.weight_positions[r] - 1

    def activation_shape(self, r):
        """Shape of the attach-point activation for weight layer r."""
        return self.shapes[self.block_end(r)]


def build_network(specs, input_shape, rng):
    """Assemble a Network: validate the shape chain and initialize weights."""
    if not specs:
        raise BuildError("layer list is empty")
    if isinstance(rng, RngState):
        rng = rng.generator()
    shape = tuple(input_shape)
    shapes, weights, positions = [], [], []
    for pos, spec in enumerate(specs):
        if spec.kind in WEIGHT_KINDS:
            weights.append(_init_weight(spec, shape, rng))
            positions.append(pos)
        shape = _infer_shape(spec, shape, pos)
        shapes.append(shape)
    return Network(list(specs), tuple(input_shape), weights, shapes, positions)


@dataclass(frozen=True)
class PlacementConfig:
    heads: int                      # M
    gamma: float = 0.8
    explicit: tuple | None = None   # override indices

    def __post_init__(self):
        if self.heads < 1:
            raise PlacementError("head count must be >= 1")
        if not 0.0 < self.gamma <= 1.0:
            raise PlacementError(f"gamma must lie in (0, 1], got {self.gamma}")


def place_heads(num_weight_layers, cfg):
    """Attach indices r_1..r_M over weight layers 1..L_w.

    A head is placed every V weight layers counting down from the top, with
    V = ceil((L_w / M)^gamma); r_m = L_w - (M - m) * V.
    """
    lw, m = num_weight_layers, cfg.heads
    if cfg.explicit is not None:
        idx = list(cfg.explicit)
        if len(idx) != m:
            raise PlacementError(f"explicit indices {idx} do not match head count {m}")
        if any(not 1 <= r <= lw for r in idx) or idx != sorted(set(idx)) or idx[-1] != lw:
            raise PlacementError(
                f"explicit indices {idx} must be strictly increasing in [1, {lw}] ending at {lw}"
            )
        return idx
    v = math.ceil((lw / m) ** cfg.gamma)
    idx = [lw - (m - i) * v for i in range(1, m + 1)]
    if idx[0] < 1:
        raise PlacementError(
            f"placement gives r_1 = {idx[0]} < 1 for L_w={lw}, M={m}, gamma={cfg.gamma}; "
            "lower the head count or raise gamma"
        )
    return idx


@dataclass
class ClassifierHead:
    """One classifier head: its index, attach point, and its own layer stack."""

    index: int       # m, 1-based
    attach: int      # r_m, 1-based weight-layer index
    net: Network

    @property
    def num_classes(self):
        return self.net.shapes[-1][0]


def nin_head_specs(num_classes):
    """1x1 conv to K channels, global average pool, softmax."""
    return [conv(num_classes, (1, 1)), global_avg_pool_layer(), softmax_layer()]


def mlp_head_specs(num_classes, hidden=32):
    """Two fully connected layers with a ReLU between, then softmax."""
    return [flatten(), dense(hidden), relu_layer(), dense(num_classes), softmax_layer()]


def build_heads(net, placement, head_specs_fn, rng):
    """Place and build all heads on a body network.

    head_specs_fn(attach_shape) returns the LayerSpec list for one head;
    every head must end in a softmax layer.
    """
    if isinstance(rng, RngState):
        rng = rng.generator()
    heads = []
    for m, r in enumerate(place_heads(net.num_weight_layers, placement), start=1):
        shape = net.activation_shape(r)
        specs = head_specs_fn(shape)
        if specs[-1].kind != "softmax":
            raise BuildError(f"head {m} must end in a softmax layer")
        heads.append(ClassifierHead(m, r, build_network(specs, shape, rng)))
    return heads


# ---------------------------------------------------------------------------
# Forward / backward over single layers. Every forward takes a batched input
# (B, ...) and returns (output, cache); backward takes the upstream delta and
# returns (input delta, weight gradient or None).
# ---------------------------------------------------------------------------

def _layer_forward(spec, w, x):
    if spec.kind == "dense":
        return x @ w.T, x
    if spec.kind == "conv":
        xp = _pad_input(x, *spec.kernel, spec.stride, spec.padding)
        win = sliding_window_view(xp, spec.kernel, axis=(2, 3))[:, :, ::spec.stride, ::spec.stride]
        y = np.einsum("bchwij,fcij->bfhw", win, w)
        return y, (x.shape, xp.shape, win)
    if spec.kind == "relu":
        return np.maximum(0.0, x), x
    if spec.kind == "maxpool":
        kh, kw = spec.kernel
        s = spec.stride
        win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
        b, c, ho, wo = win.shape[:4]
        flat = win.reshape(b, c, ho, wo, kh * kw)
        arg = flat.argmax(axis=-1)
        y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        return y, (x.shape, arg)
    if spec.kind == "global-avg-pool":
        return x.mean(axis=(-2, -1)), x.shape
    if spec.kind == "flatten":
        return x.reshape(x.shape[0], -1), x.shape
    if spec.kind == "softmax":
        p = _softmax(x)
        return p, p
    raise AssertionError(spec.kind)


def _layer_backward(spec, w, cache, dy):
    if spec.kind == "dense":
        x = cache
        return dy @ w, dy.T @ x
    if spec.kind == "conv":
        x_shape, xp_shape, win = cache
        dw = np.einsum("bfhw,bchwij->fcij", dy, win)
        dxp = np.zeros(xp_shape)
        kh, kw = spec.kernel
        s = spec.stride
        ho, wo = dy.shape[2:]
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += np.einsum(
                    "bfhw,fc->bchw", dy, w[:, :, i, j]
                )
        pt = (xp_shape[2] - x_shape[2]) // 2
        pl = (xp_shape[3] - x_shape[3]) // 2
        return dxp[:, :, pt:pt + x_shape[2], pl:pl + x_shape[3]], dw
    if spec.kind == "relu":
        return dy * (cache > 0), None
    if spec.kind == "maxpool":
        x_shape, arg = cache
        kh, kw = spec.kernel
        s = spec.stride
        b, c, ho, wo = arg.shape
        dx = np.zeros(x_shape)
        rows = arg // kw
        cols = arg % kw
        bi, ci, oi, oj = np.indices(arg.shape)
        np.add.at(dx, (bi, ci, oi * s + rows, oj * s + cols), dy)
        return dx, None
    if spec.kind == "global-avg-pool":
        x_shape = cache
        h, w_ = x_shape[-2:]
        return np.broadcast_to(dy[..., None, None] / (h * w_), x_shape).copy(), None
    if spec.kind == "flatten":
        return dy.reshape(cache), None
    if spec.kind == "softmax":
        p = cache
        return p * (dy - (dy * p).sum(axis=-1, keepdims=True)), None
    raise AssertionError(spec.kind)


def run_layers(net, x):
    """Forward through all layers of a Network; returns (activations, caches).

    activations[0] is the input; activations[i+1] the output of layer i.
    """
    acts = [x]
    caches = []
    wi = 0
    for pos, spec in enumerate(net.specs):
        w = None
        if spec.kind in WEIGHT_KINDS:
            w = net.weights[wi]
            wi += 1
        y, cache = _layer_forward(spec, w, acts[-1])
        acts.append(y)
        caches.append(cache)
    return acts, caches


def run_layers_backward(net, caches, dtop, extra_deltas=None):
    """Backward through all layers given the forward caches.

    dtop is the delta at the final activation; extra_deltas maps an
    activation index (1-based over layer outputs) to a delta injected there.
    Returns (weight gradients, delta at the input).
    """
    extra_deltas = extra_deltas or {}
    grads = [None] * len(net.weights)
    dx = dtop
    wi = len(net.weights)
    for pos in range(len(net.specs) - 1, -1, -1):
        if pos + 1 in extra_deltas:
            dx = dx + extra_deltas[pos + 1]
        spec = net.specs[pos]
        w = None
        if spec.kind in WEIGHT_KINDS:
            wi -= 1
            w = net.weights[wi]
        dx, dw = _layer_backward(spec, w, caches[pos], dx)
        if dw is not None:
            grads[wi] = dw
    if 0 in extra_deltas:
        dx = dx + extra_deltas[0]
    return grads, dx


def _as_batch(x, input_shape):
    x = np.asarray(x, dtype=np.float64)
    if x.shape == tuple(input_shape):
        return x[None], True
    if x.shape[1:] == tuple(input_shape):
        return x, False
    raise ShapeError(f"input shape {x.shape} does not match network input {tuple(input_shape)}")


def head_forward(head, x_rm):
    """Probability vector(s) produced by one head from its attach activation."""
    x, single = _as_batch(x_rm, head.net.input_shape)
    acts, _ = run_layers(head.net, x)
    p = acts[-1]
    return p[0] if single else p


def forward(net, heads, x):
    """Full forward pass: body activations plus the per-head score matrix.

    Returns (activations, scores). For a single sample, scores has shape
    (M, K); for a batch, (B, M, K). activations[l] is X^(l) (batched).
    """
    xb, single = _as_batch(x, net.input_shape)
    acts, _ = run_layers(net, xb)
    scores = np.stack(
        [head_forward(h, acts[net.block_end(h.attach) + 1]) for h in heads], axis=1
    )
    if single:
        acts = [a[0] for a in acts]
        scores = scores[0]
    return acts, scores
