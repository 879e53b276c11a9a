from .layers import (LayerSpec, avgpool_backward, avgpool_forward, conv2d_backward,
                     conv2d_forward, dense_backward, dense_forward, maxpool_backward,
                     maxpool_forward, relu_backward, relu_forward, softmax)
from .network import (ForwardCache, Network, backward, backward_input, forward,
                      he_init_params, make_network, predict, randomize_weights,
                      shape_chain)
from .presets import PRESET_NAMES, make_preset
from .serialize import load_model, save_model
from .train import TrainConfig, accuracy, train

__all__ = [
    "LayerSpec", "Network", "ForwardCache", "TrainConfig",
    "forward", "backward", "backward_input", "train", "accuracy",
    "make_network", "make_preset", "predict", "randomize_weights",
    "he_init_params", "shape_chain", "save_model", "load_model",
    "softmax", "PRESET_NAMES",
    "conv2d_forward", "conv2d_backward", "dense_forward", "dense_backward",
    "relu_forward", "relu_backward", "maxpool_forward", "maxpool_backward",
    "avgpool_forward", "avgpool_backward",
]
