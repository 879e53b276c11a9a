"""Named toy architectures.

Matched pairs share every non-pooling hyperparameter so pooling ablations
compare like with like: `cnn-max` vs `cnn-avg` differ only in the pool kind,
`cnn-stride{1,2,4}` only in the pool stride.
"""
from __future__ import annotations

from .layers import LayerSpec
from .network import Network, make_network

INPUT_SHAPE = (1, 28, 28)
NUM_CLASSES = 2

PRESET_NAMES = ("cnn-max", "cnn-avg", "cnn-stride1", "cnn-stride2", "cnn-stride4", "linear")


def _conv(channels: int) -> LayerSpec:
    return LayerSpec("Conv2D", kernel_size=3, stride=1, channels_out=channels,
                     padding="same")


def _deep_layers(pool_kind: str):
    """Four conv/pool stages (28 -> 14 -> 7 -> 3 -> 1). Deep enough that raw
    per-pixel gradients stop being faithful, which is what the repair acts on."""
    pool = LayerSpec(pool_kind, kernel_size=2, stride=2)
    relu = LayerSpec("ReLU")
    return (
        _conv(8), relu, pool,
        _conv(16), relu, pool,
        _conv(32), relu, pool,
        _conv(32), relu, pool,
        LayerSpec("Flatten"),
        LayerSpec("Dense", channels_out=NUM_CLASSES),
        LayerSpec("Softmax"),
    )


def _stride_layers(pool_stride: int):
    """Two conv/pool stages with a variable pool stride (ablation family)."""
    pool = LayerSpec("MaxPool2D", kernel_size=2, stride=pool_stride)
    relu = LayerSpec("ReLU")
    return (
        _conv(8), relu, pool,
        _conv(16), relu, pool,
        LayerSpec("Flatten"),
        LayerSpec("Dense", channels_out=NUM_CLASSES),
        LayerSpec("Softmax"),
    )


def make_preset(name: str, seed: int = 0) -> Network:
    if name == "cnn-max":
        layers = _deep_layers("MaxPool2D")
    elif name == "cnn-avg":
        layers = _deep_layers("AvgPool2D")
    elif name.startswith("cnn-stride"):
        stride = int(name.removeprefix("cnn-stride"))
        if stride not in (1, 2, 4):
            raise ValueError(f"unsupported pool stride {stride}")
        layers = _stride_layers(stride)
    elif name == "linear":
        layers = (LayerSpec("Dense", channels_out=NUM_CLASSES), LayerSpec("Softmax"))
    else:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    return make_network(layers, INPUT_SHAPE, NUM_CLASSES, seed=seed)
