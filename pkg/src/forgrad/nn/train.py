"""Minibatch SGD training with cross-entropy loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import Divergence
from .layers import softmax
from .network import Network, backward, forward


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    epochs: int
    batch_size: int = 32
    seed: int = 0
    loss: str = "cross-entropy"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.loss != "cross-entropy":
            raise ValueError("only cross-entropy loss is supported")


def train(net: Network, images, labels, cfg: TrainConfig):
    """Train and return (new network, per-epoch mean loss history).

    Deterministic given cfg.seed; the input network is left unmodified.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    n = len(images)
    if n == 0:
        raise ValueError("dataset is empty")
    if np.any(labels < 0) or np.any(labels >= net.num_classes):
        raise ValueError("label out of range")
    rng = np.random.default_rng(cfg.seed)
    params = {k: v.copy() for k, v in net.params.items()}
    net = Network(net.layers, params, net.input_shape, net.num_classes)
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = images[idx], labels[idx]
            cache = forward(net, xb)
            probs = cache.probabilities
            p_true = probs[np.arange(len(idx)), yb]
            with np.errstate(divide="ignore"):
                loss = -np.mean(np.log(p_true))
            if not np.isfinite(loss):
                raise Divergence(f"loss became non-finite ({loss})")
            losses.append(loss)
            dlogits = probs.copy()
            dlogits[np.arange(len(idx)), yb] -= 1.0
            dlogits /= len(idx)
            _, grads, _ = backward(net, cache, dlogits, want_param_grads=True)
            for name, g in grads.items():
                params[name] -= cfg.learning_rate * g
        history.append(float(np.mean(losses)))
    return net, history


def accuracy(net: Network, images, labels) -> float:
    cache = forward(net, np.asarray(images, dtype=np.float64))
    pred = np.argmax(cache.logits, axis=-1)
    return float(np.mean(pred == np.asarray(labels)))
