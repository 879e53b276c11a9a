"""Network container, exact forward pass with cache, and hand-written backward.

A Network is an ordered list of LayerSpec plus named parameter tensors.
Forward/backward are pure functions; the cache records every intermediate
activation (and max-pool argmax indices) so the backward pass is exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFinite, ShapeMismatch, StaleCache
from . import layers as L
from .layers import LayerSpec, softmax


def weight_name(i: int) -> str:
    return f"layer{i}.weight"


def bias_name(i: int) -> str:
    return f"layer{i}.bias"


@dataclass(frozen=True)
class Network:
    layers: tuple[LayerSpec, ...]
    params: dict[str, np.ndarray]
    input_shape: tuple[int, int, int]  # (C, H, W)
    num_classes: int

    def param_layer_indices(self) -> list[int]:
        return [i for i, spec in enumerate(self.layers) if spec.has_params]

    def conv_layer_indices(self) -> list[int]:
        return [i for i, spec in enumerate(self.layers) if spec.kind == "Conv2D"]


@dataclass
class ForwardCache:
    inputs: list  # input activation of each layer; inputs[i] feeds layers[i]
    pool_argmax: dict  # layer index -> argmax array for MaxPool2D layers
    logits: np.ndarray
    probabilities: np.ndarray
    batched: bool = field(default=True)


def shape_chain(net: Network) -> list[tuple]:
    """Per-layer input shapes followed by the final output shape.

    Raises ShapeMismatch if the chain is inconsistent or the final layer
    does not produce a length-num_classes vector.
    """
    shape = net.input_shape
    chain = [shape]
    for i, spec in enumerate(net.layers):
        if spec.kind == "Conv2D":
            if len(shape) != 3 or shape[0] != net.params[weight_name(i)].shape[1]:
                raise ShapeMismatch(f"layer {i}: conv expects channels "
                                    f"{net.params[weight_name(i)].shape[1]}, got {shape}")
            shape = L.conv2d_out_shape(shape, spec)
        elif spec.kind in ("MaxPool2D", "AvgPool2D"):
            if len(shape) != 3:
                raise ShapeMismatch(f"layer {i}: pool needs a CHW input, got {shape}")
            shape = L.pool_out_shape(shape, spec)
        elif spec.kind == "Flatten":
            shape = (int(np.prod(shape)),)
        elif spec.kind == "Dense":
            d = int(np.prod(shape))
            w = net.params[weight_name(i)]
            if w.shape[0] != d:
                raise ShapeMismatch(f"layer {i}: dense expects {w.shape[0]} inputs, got {d}")
            shape = (w.shape[1],)
        # ReLU and Softmax preserve shape
        chain.append(shape)
    if chain[-1] != (net.num_classes,):
        raise ShapeMismatch(f"final output shape {chain[-1]} != ({net.num_classes},)")
    return chain


def he_init_params(layers_: tuple[LayerSpec, ...], input_shape, num_classes, seed) -> dict:
    """He-style normal init (std = sqrt(2/fan_in)), zero biases, seeded."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    shape = input_shape
    for i, spec in enumerate(layers_):
        if spec.kind == "Conv2D":
            c_in = shape[0]
            k = spec.kernel_size
            fan_in = c_in * k * k
            params[weight_name(i)] = rng.normal(
                0.0, np.sqrt(2.0 / fan_in), size=(spec.channels_out, c_in, k, k))
            params[bias_name(i)] = np.zeros(spec.channels_out)
            shape = L.conv2d_out_shape(shape, spec)
        elif spec.kind in ("MaxPool2D", "AvgPool2D"):
            shape = L.pool_out_shape(shape, spec)
        elif spec.kind == "Flatten":
            shape = (int(np.prod(shape)),)
        elif spec.kind == "Dense":
            d = int(np.prod(shape))
            params[weight_name(i)] = rng.normal(0.0, np.sqrt(2.0 / d),
                                                size=(d, spec.channels_out))
            params[bias_name(i)] = np.zeros(spec.channels_out)
            shape = (spec.channels_out,)
    return params


def make_network(layers_, input_shape, num_classes, seed=0) -> Network:
    net = Network(tuple(layers_), he_init_params(tuple(layers_), input_shape, num_classes, seed),
                  tuple(input_shape), num_classes)
    shape_chain(net)  # validate
    return net


def _as_batch(x, input_shape):
    x = np.asarray(x, dtype=np.float64)
    if x.shape == tuple(input_shape):
        return x[None], False
    if x.ndim == 4 and x.shape[1:] == tuple(input_shape):
        return x, True
    raise ShapeMismatch(f"input shape {x.shape} does not match {tuple(input_shape)}")


def forward(net: Network, x) -> ForwardCache:
    """Run the network, caching every layer input. Deterministic and pure."""
    xb, batched = _as_batch(x, net.input_shape)
    inputs = []
    pool_argmax = {}
    a = xb
    logits = None
    for i, spec in enumerate(net.layers):
        inputs.append(a)
        if spec.kind == "Conv2D":
            a = L.conv2d_forward(a, net.params[weight_name(i)], net.params[bias_name(i)], spec)
        elif spec.kind == "Dense":
            a = L.dense_forward(a, net.params[weight_name(i)], net.params[bias_name(i)])
        elif spec.kind == "ReLU":
            a = L.relu_forward(a)
        elif spec.kind == "MaxPool2D":
            a, am = L.maxpool_forward(a, spec)
            pool_argmax[i] = am
        elif spec.kind == "AvgPool2D":
            a = L.avgpool_forward(a, spec)
        elif spec.kind == "Flatten":
            a = a.reshape(a.shape[0], -1)
        elif spec.kind == "Softmax":
            logits = a
            a = softmax(a)
        if not np.all(np.isfinite(a)):
            raise NonFinite(f"non-finite activation after layer {i} ({spec.kind})")
    if logits is None:
        logits = a
        probs = softmax(logits)
    else:
        probs = a
    if not batched:
        logits, probs = logits[0], probs[0]
        inputs = [v[0] if isinstance(v, np.ndarray) else v for v in inputs]
        pool_argmax = {k: v[0] for k, v in pool_argmax.items()}
    return ForwardCache(inputs=inputs, pool_argmax=pool_argmax,
                        logits=logits, probabilities=probs, batched=batched)


def _rebatch_cache(cache: ForwardCache):
    if cache.batched:
        return cache.inputs, cache.pool_argmax, cache.logits
    return ([v[None] for v in cache.inputs],
            {k: v[None] for k, v in cache.pool_argmax.items()},
            cache.logits[None])


def check_cache(net: Network, cache: ForwardCache):
    if len(cache.inputs) != len(net.layers):
        raise StaleCache("cache layer count does not match network")
    chain = shape_chain(net)
    inputs, _, _ = _rebatch_cache(cache)
    for i, a in enumerate(inputs):
        if tuple(a.shape[1:]) != tuple(chain[i]):
            raise StaleCache(f"cache activation {i} shape {a.shape[1:]} != {chain[i]}")


def backward(net: Network, cache: ForwardCache, dlogits, relu_mode="standard",
             want_param_grads=False, collect_cotangents=False):
    """Backpropagate a cotangent on the logits to the input.

    Returns (dx, param_grads, cotangents). ``cotangents[i]`` is the gradient
    w.r.t. the input of layer i (populated only when requested). A trailing
    Softmax layer is skipped: the pass always starts at the logits.
    """
    check_cache(net, cache)
    if relu_mode not in ("standard", "guided"):
        raise ValueError(f"unknown relu_mode {relu_mode!r}")
    inputs, pool_argmax, logits = _rebatch_cache(cache)
    g = np.asarray(dlogits, dtype=np.float64)
    if g.ndim == 1:
        g = g[None]
    if g.shape != logits.shape:
        raise ShapeMismatch(f"dlogits shape {g.shape} != logits shape {logits.shape}")
    grads = {} if want_param_grads else None
    cotangents = [None] * len(net.layers) if collect_cotangents else None
    guided = relu_mode == "guided"
    for i in range(len(net.layers) - 1, -1, -1):
        spec = net.layers[i]
        x_in = inputs[i]
        if spec.kind == "Softmax":
            pass  # gradient is taken w.r.t. the logits directly
        elif spec.kind == "Conv2D":
            g, dw, db = L.conv2d_backward(x_in, net.params[weight_name(i)], g, spec,
                                          want_param_grads)
            if want_param_grads:
                grads[weight_name(i)] = dw
                grads[bias_name(i)] = db
        elif spec.kind == "Dense":
            g, dw, db = L.dense_backward(x_in, net.params[weight_name(i)], g,
                                         want_param_grads)
            if want_param_grads:
                grads[weight_name(i)] = dw
                grads[bias_name(i)] = db
        elif spec.kind == "ReLU":
            g = L.relu_backward(x_in, g, guided)
        elif spec.kind == "MaxPool2D":
            g = L.maxpool_backward(x_in.shape, pool_argmax[i], g, spec)
        elif spec.kind == "AvgPool2D":
            g = L.avgpool_backward(x_in.shape, g, spec)
        elif spec.kind == "Flatten":
            g = g.reshape(x_in.shape)
        if collect_cotangents:
            cotangents[i] = g if cache.batched else g[0]
    dx = g if cache.batched else g[0]
    return dx, grads, cotangents


def backward_input(net: Network, cache: ForwardCache, target_class, relu_mode="standard"):
    """Gradient of the target-class logit w.r.t. the network input."""
    inputs, _, logits = _rebatch_cache(cache)
    b, nc = logits.shape
    targets = np.atleast_1d(np.asarray(target_class, dtype=int))
    if targets.size == 1 and b > 1:
        targets = np.full(b, targets[0])
    if targets.size != b:
        raise ShapeMismatch("one target class required per batch element")
    if np.any(targets < 0) or np.any(targets >= nc):
        raise ValueError("target_class out of range")
    onehot = np.zeros((b, nc))
    onehot[np.arange(b), targets] = 1.0
    if not cache.batched:
        onehot = onehot[0]
    dx, _, _ = backward(net, cache, onehot, relu_mode=relu_mode)
    return dx


def randomize_weights(net: Network, through_layer: int, seed) -> Network:
    """Resample parameters of the last ``through_layer`` parameterized layers
    (counting from the output side) from the init distribution."""
    plidx = net.param_layer_indices()
    if not 0 <= through_layer <= len(plidx):
        raise ValueError(f"through_layer must be in [0, {len(plidx)}]")
    fresh = he_init_params(net.layers, net.input_shape, net.num_classes, seed)
    params = {k: v.copy() for k, v in net.params.items()}
    for i in plidx[len(plidx) - through_layer:]:
        params[weight_name(i)] = fresh[weight_name(i)]
        params[bias_name(i)] = fresh[bias_name(i)]
    return Network(net.layers, params, net.input_shape, net.num_classes)


def predict(net: Network, x):
    """Predicted class indices for a single image or a batch."""
    cache = forward(net, x)
    return np.argmax(cache.logits, axis=-1)
