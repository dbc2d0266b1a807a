"""Convolutional network engine with hand-derived gradients.

Layer kernels follow the ``forward -> (out, cache)`` / ``backward(dout,
cache)`` pairing. Networks are described by an immutable :class:`NetworkSpec`
and their parameters live in a mutable :class:`NetworkState`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import LabelError, ParameterError, ShapeError

LAYER_KINDS = ("convolution", "max_pool", "relu", "inner_product", "dropout", "softmax")


# ---------------------------------------------------------------------------
# Threshold perceptron


@dataclass(frozen=True)
class Perceptron:
    weights: tuple
    threshold: float

    def __post_init__(self):
        if len(self.weights) < 1:
            raise ShapeError("perceptron needs at least one weight")


def perceptron_output(p, x):
    """1 if the weighted sum strictly exceeds the threshold, else 0."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(p.weights, dtype=np.float64)
    if x.shape != w.shape:
        raise ShapeError(f"perceptron has {w.size} weights, got {x.size} inputs")
    return int(float(w @ x) > p.threshold)


# ---------------------------------------------------------------------------
# Layer kernels


def _conv_out(size, k, stride, pad):
    span = size + 2 * pad - k
    if span < 0 or span % stride:
        return None
    return span // stride + 1


def conv_forward(x, w, b, stride=1, pad=0):
    """Cross-correlate ``x`` (N, C, H, W) with filters ``w`` (F, C, k, k).

    Returns ``(out, cache)`` with ``out`` of shape (N, F, H', W').
    """
    n, c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    if cw != c or kh != kw:
        raise ShapeError(f"filters {w.shape} do not match input {x.shape}")
    ho, wo = _conv_out(h, kh, stride, pad), _conv_out(wd, kw, stride, pad)
    if ho is None or wo is None:
        raise ShapeError(
            f"conv k={kh} s={stride} p={pad} gives non-integral output on {h}x{wd}"
        )
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    out = cols @ w.reshape(f, -1).T + b
    out = out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), (x.shape, cols, w, stride, pad)


def conv_backward(dout, cache):
    """Return ``(dx, dw, db)`` for :func:`conv_forward`."""
    xshape, cols, w, stride, pad = cache
    n, c, h, wd = xshape
    f, _, k, _ = w.shape
    ho, wo = dout.shape[2], dout.shape[3]
    dflat = dout.transpose(0, 2, 3, 1).reshape(-1, f)
    db = dflat.sum(axis=0)
    dw = (dflat.T @ cols).reshape(w.shape)
    dcols = (dflat @ w.reshape(f, -1)).reshape(n, ho, wo, c, k, k)
    dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    for u in range(k):
        for v in range(k):
            dxp[:, :, u:u + stride * ho:stride, v:v + stride * wo:stride] += (
                dcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
            )
    dx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
    return dx, dw, db


def maxpool_forward(x, k, stride):
    """Windowed max. The cache keeps the flat argmax of every window."""
    n, c, h, wd = x.shape
    if k > h or k > wd:
        raise ShapeError(f"pool kernel {k} larger than input {h}x{wd}")
    ho, wo = _conv_out(h, k, stride, 0), _conv_out(wd, k, stride, 0)
    if ho is None or wo is None:
        raise ShapeError(f"pool k={k} s={stride} gives non-integral output on {h}x{wd}")
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win.reshape(n, c, ho, wo, k * k)
    # np.argmax returns the first maximal element, which fixes the tie rule.
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg, k, stride)


def maxpool_backward(dout, cache):
    xshape, arg, k, stride = cache
    ho, wo = arg.shape[2], arg.shape[3]
    dx = np.zeros(xshape)
    for u in range(k):
        for v in range(k):
            hit = arg == u * k + v
            dx[:, :, u:u + stride * ho:stride, v:v + stride * wo:stride] += dout * hit
    return dx


def relu_forward(x):
    return np.maximum(x, 0.0), x


def relu_backward(dout, cache):
    return dout * (cache > 0)


def inner_product_forward(x, w, b):
    """Affine map of the flattened input: (N, D) @ (D, U) + b."""
    flat = x.reshape(x.shape[0], -1)
    if flat.shape[1] != w.shape[0]:
        raise ShapeError(f"inner product expects {w.shape[0]} inputs, got {flat.shape[1]}")
    return flat @ w + b, (x.shape, flat, w)


def inner_product_backward(dout, cache):
    xshape, flat, w = cache
    dx = (dout @ w.T).reshape(xshape)
    return dx, flat.T @ dout, dout.sum(axis=0)


def dropout_forward(x, rate, mode, rng=None, mask=None):
    """Inverted dropout.

    In ``"test"`` mode this is the identity. In ``"train"`` mode each element
    survives with probability ``1 - rate`` and survivors are scaled by
    ``1 / (1 - rate)``. A precomputed ``mask`` (already scaled) can be passed
    to replay an earlier draw.
    """
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode == "test" or rate == 0.0:
        return x, None
    if mask is None:
        if rng is None:
            raise ParameterError("training-mode dropout needs an rng")
        keep = rng.uniform(x.size).reshape(x.shape) >= rate
        mask = keep / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(dout, probs):
    """Vector-Jacobian product of the row-wise softmax."""
    return probs * (dout - (dout * probs).sum(axis=1, keepdims=True))


def cross_entropy_loss(probs, labels):
    """Mean negative log-likelihood and its gradient w.r.t. the logits.

    The gradient is that of the fused softmax + loss, ``(p - onehot) / N``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = probs.shape
    if labels.shape != (n,):
        raise LabelError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise LabelError(f"label outside [0, {k})")
    picked = probs[np.arange(n), labels]
    loss = float(-np.log(np.maximum(picked, 1e-12)).mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def predict(probs):
    # argmax picks the lowest index on ties
    return np.asarray(probs).argmax(axis=1)


def accuracy(probs, labels):
    return float(np.mean(predict(probs) == np.asarray(labels)))


# ---------------------------------------------------------------------------
# Network descriptions


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: int = 1
    stride: int = 1
    pad: int = 0
    units: int = 0
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ParameterError(f"unknown layer kind {self.kind!r}")
        if self.kernel < 1 or self.stride < 1 or self.pad < 0:
            raise ParameterError(f"bad geometry in {self}")
        if self.kind in ("convolution", "inner_product") and self.units < 1:
            raise ParameterError(f"{self.kind} needs units >= 1")
        if not 0.0 <= self.rate < 1.0:
            raise ParameterError(f"dropout rate must lie in [0, 1), got {self.rate}")

    @property
    def has_params(self):
        return self.kind in ("convolution", "inner_product")


def conv(units, kernel, stride=1, pad=0):
    return LayerSpec("convolution", kernel=kernel, stride=stride, pad=pad, units=units)


def max_pool(kernel, stride):
    return LayerSpec("max_pool", kernel=kernel, stride=stride)


def inner_product(units):
    return LayerSpec("inner_product", units=units)


def relu():
    return LayerSpec("relu")


def dropout(rate=0.5):
    return LayerSpec("dropout", rate=rate)


def softmax_head():
    return LayerSpec("softmax")


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple
    layers: tuple
    num_classes: int
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        # a NetworkSpec never changes, so its shapes are inferred once
        object.__setattr__(self, "_shapes", tuple(self._infer_shapes()))

    def shapes(self):
        """Per-sample output shape of every layer; ``shapes()[0]`` is the input."""
        return list(self._shapes)

    def _infer_shapes(self):
        shape = self.input_shape
        if len(shape) != 3 or min(shape) < 1:
            raise ShapeError(f"input shape must be (C, H, W), got {shape}")
        out = [shape]
        for i, ls in enumerate(self.layers):
            try:
                shape = _infer(ls, shape)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({ls.kind}): {exc}") from None
            out.append(shape)
        if self.layers:
            ips = [i for i, ls in enumerate(self.layers) if ls.kind == "inner_product"]
            if ips and self.layers[ips[-1]].units != self.num_classes:
                raise ShapeError(
                    f"final inner product has {self.layers[ips[-1]].units} outputs,"
                    f" expected {self.num_classes} classes"
                )
        return out

    def param_shapes(self):
        """``{name: shape}`` for every weight and bias tensor, in layer order."""
        shapes = self.shapes()
        out = {}
        for i, ls in enumerate(self.layers):
            if ls.kind == "convolution":
                c = shapes[i][0]
                out[f"{i}.weight"] = (ls.units, c, ls.kernel, ls.kernel)
                out[f"{i}.bias"] = (ls.units,)
            elif ls.kind == "inner_product":
                out[f"{i}.weight"] = (int(np.prod(shapes[i])), ls.units)
                out[f"{i}.bias"] = (ls.units,)
        return out

    def count(self, kind):
        return sum(ls.kind == kind for ls in self.layers)


def _infer(ls, shape):
    c, h, w = shape
    if ls.kind == "convolution":
        ho, wo = _conv_out(h, ls.kernel, ls.stride, ls.pad), _conv_out(w, ls.kernel, ls.stride, ls.pad)
        if ho is None or wo is None:
            raise ShapeError(f"k={ls.kernel} s={ls.stride} p={ls.pad} does not tile {h}x{w}")
        return (ls.units, ho, wo)
    if ls.kind == "max_pool":
        if ls.kernel > h or ls.kernel > w:
            raise ShapeError(f"pool kernel {ls.kernel} larger than {h}x{w}")
        ho, wo = _conv_out(h, ls.kernel, ls.stride, 0), _conv_out(w, ls.kernel, ls.stride, 0)
        if ho is None or wo is None:
            raise ShapeError(f"pool k={ls.kernel} s={ls.stride} does not tile {h}x{w}")
        return (c, ho, wo)
    if ls.kind == "inner_product":
        return (ls.units, 1, 1)
    return shape


def build_emex(input_shape, num_classes):
    """LeNet-style stack: conv20-pool-conv50-pool-ip500-relu-ipK + softmax."""
    c, h, w = input_shape
    if h < 16 or w < 16:
        raise ShapeError(f"EmEx needs inputs of at least 16x16, got {h}x{w}")
    layers = (
        conv(20, 5),
        max_pool(2, 2),
        conv(50, 5),
        max_pool(2, 2),
        inner_product(500),
        relu(),
        inner_product(num_classes),
        softmax_head(),
    )
    return NetworkSpec(input_shape, layers, num_classes, name="emex")


ALEXNET_CHANNELS = (96, 256, 384, 384, 256)
ALEXNET_FC = (4096, 4096)


def build_alexnet_mini(input_shape, num_classes, width_scale=1 / 16):
    """Five convolutions and three fully connected layers, scaled in width.

    Pools follow convolutions 1, 2 and 5; dropout(0.5) follows the first two
    fully connected layers. Channel and unit counts are the AlexNet ones times
    ``width_scale`` (at least 8). Kernel geometry is shrunk to suit small
    crops: 5x5 then 3x3 "same" convolutions and 2x2/2 pools, so the input
    height and width must be multiples of 8.
    """
    if not 0.0 < width_scale <= 1.0:
        raise ParameterError(f"width_scale must lie in (0, 1], got {width_scale}")
    ch = [max(8, round(width_scale * n)) for n in ALEXNET_CHANNELS]
    fc = [max(8, round(width_scale * n)) for n in ALEXNET_FC]
    layers = (
        conv(ch[0], 5, pad=2), relu(), max_pool(2, 2),
        conv(ch[1], 5, pad=2), relu(), max_pool(2, 2),
        conv(ch[2], 3, pad=1), relu(),
        conv(ch[3], 3, pad=1), relu(),
        conv(ch[4], 3, pad=1), relu(), max_pool(2, 2),
        inner_product(fc[0]), relu(), dropout(0.5),
        inner_product(fc[1]), relu(), dropout(0.5),
        inner_product(num_classes),
        softmax_head(),
    )
    return NetworkSpec(input_shape, layers, num_classes, name="alexnet-mini")


BUILDERS = {"emex": build_emex, "alexnet-mini": build_alexnet_mini}


# ---------------------------------------------------------------------------
# Parameters, forward and backward passes


@dataclass
class NetworkState:
    params: dict = field(default_factory=dict)

    def copy(self):
        return NetworkState({k: v.copy() for k, v in self.params.items()})


def init_state(spec, rng):
    """Xavier-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    params = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape)
            continue
        if len(shape) == 4:
            f, c, k, _ = shape
            fan_in, fan_out = c * k * k, f * k * k
        else:
            fan_in, fan_out = shape
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        u = rng.uniform(int(np.prod(shape))).reshape(shape)
        params[name] = (2.0 * u - 1.0) * bound
    return NetworkState(params)


@dataclass
class Trace:
    """Activations and per-layer caches recorded by :func:`net_forward`.

    ``activations[i]`` is the input of layer ``start + i``; the last entry is
    the network output. ``masks`` maps layer index to the dropout mask used.
    """

    start: int
    activations: list
    caches: list
    masks: dict

    @property
    def output(self):
        return self.activations[-1]


def net_forward(spec, state, batch, mode="test", rng=None, masks=None, start=0):
    """Run layers ``start..end`` of ``spec`` on ``batch``.

    ``batch`` must have the shape expected at layer ``start`` (the network
    input for the default ``start=0``). ``masks`` replays recorded dropout
    masks instead of drawing new ones.
    """
    if mode not in ("train", "test"):
        raise ParameterError(f"mode must be 'train' or 'test', got {mode!r}")
    x = np.asarray(batch, dtype=np.float64)
    shapes = spec.shapes()
    if x.shape[1:] != shapes[start] and not (
        x.ndim == 2 and x.shape[1] == int(np.prod(shapes[start]))
    ):
        raise ShapeError(f"layer {start}: expected input {shapes[start]}, got {x.shape[1:]}")
    masks = masks or {}
    acts, caches, used = [x], [], {}
    p = state.params
    for i in range(start, len(spec.layers)):
        ls = spec.layers[i]
        try:
            if ls.kind == "convolution":
                x, cache = conv_forward(x, p[f"{i}.weight"], p[f"{i}.bias"], ls.stride, ls.pad)
            elif ls.kind == "max_pool":
                x, cache = maxpool_forward(x, ls.kernel, ls.stride)
            elif ls.kind == "relu":
                x, cache = relu_forward(x)
            elif ls.kind == "inner_product":
                x, cache = inner_product_forward(x, p[f"{i}.weight"], p[f"{i}.bias"])
            elif ls.kind == "dropout":
                x, cache = dropout_forward(x, ls.rate, mode, rng, masks.get(i))
                used[i] = cache
            else:
                x = softmax(x.reshape(x.shape[0], -1))
                cache = x
        except ShapeError as exc:
            raise ShapeError(f"layer {i} ({ls.kind}): {exc}") from None
        acts.append(x)
        caches.append(cache)
    return Trace(start, acts, caches, used)


def net_backward(spec, state, trace, loss_grad):
    """Gradients of every parameter touched by ``trace``.

    When the last layer is a softmax head, ``loss_grad`` is taken to be the
    gradient w.r.t. the logits (the fused softmax + cross-entropy gradient
    from :func:`cross_entropy_loss`) and the head itself is skipped. The
    returned dict also carries the gradient w.r.t. the traced input under the
    key ``"input"``.
    """
    grads = {}
    d = np.asarray(loss_grad, dtype=np.float64)
    layers = spec.layers
    stop = len(layers)
    if layers and layers[-1].kind == "softmax" and stop - 1 >= trace.start:
        stop -= 1
    for i in range(stop - 1, trace.start - 1, -1):
        ls, cache = layers[i], trace.caches[i - trace.start]
        if ls.kind == "convolution":
            d, grads[f"{i}.weight"], grads[f"{i}.bias"] = conv_backward(d, cache)
        elif ls.kind == "max_pool":
            d = maxpool_backward(d, cache)
        elif ls.kind == "relu":
            d = relu_backward(d, cache)
        elif ls.kind == "inner_product":
            d, grads[f"{i}.weight"], grads[f"{i}.bias"] = inner_product_backward(d, cache)
        elif ls.kind == "dropout":
            d = dropout_backward(d, cache)
        else:
            d = softmax_backward(d, cache)
        d = d.reshape(trace.activations[i - trace.start].shape)
    grads["input"] = d.reshape(trace.activations[0].shape)
    return grads


def loss_and_grads(spec, state, x, labels, mode="train", rng=None):
    """Forward pass, cross-entropy loss and parameter gradients for one batch."""
    trace = net_forward(spec, state, x, mode=mode, rng=rng)
    loss, dlogits = cross_entropy_loss(trace.output, labels)
    grads = net_backward(spec, state, trace, dlogits)
    grads.pop("input")
    return loss, grads, trace


def predict_proba(spec, state, x, batch_size=64):
    """Inference-mode class probabilities, evaluated in chunks."""
    x = np.asarray(x, dtype=np.float64)
    out = [net_forward(spec, state, x[i:i + batch_size]).output
           for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, spec.num_classes))
