"""Attribution methods: white-box gradients, GradCAM, Occlusion, and RISE.

All white-box methods draw their gradients from a GradientProvider so a
spectral low-pass filter can be slotted in front of every gradient
evaluation without the methods knowing about it.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateMasks, NotAConvLayer
from .nn.network import Network, backward, backward_input, forward
from .spectral import lowpass, lowpass_nchw

WHITE_BOX_METHODS = ("saliency", "gradient_input", "integrated_gradients",
                     "smoothgrad", "squaregrad", "vargrad", "guided_backprop")
ALL_METHODS = WHITE_BOX_METHODS + ("gradcam", "occlusion", "rise")


@dataclass(frozen=True)
class AttributionMap:
    values: np.ndarray  # (H, W)
    method: str
    target_class: int
    sigma: float | None = None
    provenance: str = "unfiltered"  # {unfiltered, gradient-filtered, map-filtered}


@dataclass(frozen=True)
class MethodConfig:
    n_samples: int = 50
    noise_std: float = 0.1  # fraction of the input dynamic range
    ig_steps: int = 64
    ig_baseline: float = 0.0
    occlusion_patch: int = 4
    occlusion_stride: int = 4
    occlusion_baseline: float = 0.0
    rise_grid: int = 7
    rise_keep_prob: float = 0.5
    rise_n_samples: int = 4000
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1 or self.ig_steps < 1 or self.rise_n_samples < 1:
            raise ValueError("sample counts must be >= 1")
        if not 0 < self.rise_keep_prob < 1:
            raise ValueError("rise_keep_prob must lie in (0, 1)")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


class GradientProvider:
    """Yields d(logit_c)/dx for a network, optionally low-passing each gradient.

    With sigma unset the output is exactly the raw backward pass; with sigma
    set, each gradient is filtered per channel before it leaves the provider.
    """

    def __init__(self, net: Network, relu_mode: str = "standard",
                 sigma: float | None = None):
        self.net = net
        self.relu_mode = relu_mode
        self.sigma = sigma

    def with_relu_mode(self, relu_mode: str) -> "GradientProvider":
        return GradientProvider(self.net, relu_mode, self.sigma)

    def __call__(self, x, c):
        """Gradient for a single (C,H,W) input or a (B,C,H,W) batch."""
        cache = forward(self.net, x)
        grad = backward_input(self.net, cache, c, relu_mode=self.relu_mode)
        if self.sigma is not None:
            grad = lowpass_nchw(grad, self.sigma)
        return grad


def channel_reduce(signed_grad) -> np.ndarray:
    """Mean over channels of absolute values: (C,H,W) -> (H,W)."""
    g = np.asarray(signed_grad, dtype=np.float64)
    if g.ndim != 3:
        raise ValueError(f"expected (C,H,W), got shape {g.shape}")
    return np.mean(np.abs(g), axis=0)


def _logits(net: Network, x_batch) -> np.ndarray:
    return forward(net, x_batch).logits


def _finish(values, method, c, provider=None) -> AttributionMap:
    sigma = getattr(provider, "sigma", None)
    prov = "gradient-filtered" if sigma is not None else "unfiltered"
    return AttributionMap(values=values, method=method, target_class=int(c),
                          sigma=sigma, provenance=prov)


def saliency(provider: GradientProvider, x, c) -> AttributionMap:
    return _finish(channel_reduce(provider(x, c)), "saliency", c, provider)


def gradient_input(provider: GradientProvider, x, c) -> AttributionMap:
    x = np.asarray(x, dtype=np.float64)
    return _finish(channel_reduce(provider(x, c) * x), "gradient_input", c, provider)


def integrated_gradients_signed(provider: GradientProvider, x, c,
                                cfg: MethodConfig) -> np.ndarray:
    """Signed (C,H,W) path-integral attribution; sums to f(x)-f(baseline)."""
    x = np.asarray(x, dtype=np.float64)
    b = np.broadcast_to(np.asarray(cfg.ig_baseline, dtype=np.float64), x.shape)
    m = cfg.ig_steps
    alphas = np.arange(1, m + 1) / m
    points = b[None] + alphas[:, None, None, None] * (x - b)[None]
    grads = provider(points, np.full(m, c))
    return (x - b) * grads.mean(axis=0)


def integrated_gradients(provider: GradientProvider, x, c,
                         cfg: MethodConfig) -> AttributionMap:
    signed = integrated_gradients_signed(provider, x, c, cfg)
    return _finish(channel_reduce(signed), "integrated_gradients", c, provider)


def _noise_samples(x, cfg: MethodConfig):
    """Seeded perturbed copies of x used by SmoothGrad/SquareGrad/VarGrad."""
    x = np.asarray(x, dtype=np.float64)
    scale = cfg.noise_std * (x.max() - x.min())
    if scale == 0.0:
        # all samples coincide; one copy keeps the reductions bitwise exact
        return x[None].copy()
    rng = np.random.default_rng(cfg.seed)
    return x[None] + rng.normal(0.0, scale, size=(cfg.n_samples,) + x.shape)


def _sample_grads(provider, x, c, cfg):
    pts = _noise_samples(x, cfg)
    return provider(pts, np.full(len(pts), c))


def smoothgrad(provider: GradientProvider, x, c, cfg: MethodConfig) -> AttributionMap:
    grads = _sample_grads(provider, x, c, cfg)
    return _finish(channel_reduce(grads.mean(axis=0)), "smoothgrad", c, provider)


def squaregrad(provider: GradientProvider, x, c, cfg: MethodConfig) -> AttributionMap:
    grads = _sample_grads(provider, x, c, cfg)
    return _finish(channel_reduce((grads**2).mean(axis=0)), "squaregrad", c, provider)


def vargrad(provider: GradientProvider, x, c, cfg: MethodConfig) -> AttributionMap:
    if cfg.n_samples < 2:
        raise ValueError("vargrad needs n_samples >= 2")
    grads = _sample_grads(provider, x, c, cfg)
    return _finish(channel_reduce(grads.var(axis=0)), "vargrad", c, provider)


def guided_backprop(provider: GradientProvider, x, c) -> AttributionMap:
    guided = provider.with_relu_mode("guided")
    return _finish(channel_reduce(guided(x, c)), "guided_backprop", c, provider)


def bilinear_resize(map2d, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear upsampling with half-pixel-aligned sample centers."""
    m = np.asarray(map2d, dtype=np.float64)
    h, w = m.shape
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = m[np.ix_(y0, x0)] * (1 - wx) + m[np.ix_(y0, x1)] * wx
    bot = m[np.ix_(y1, x0)] * (1 - wx) + m[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def gradcam(net: Network, x, c, conv_layer: int | None = None) -> AttributionMap:
    """Weighted combination of conv feature maps, ReLU-clamped and upsampled."""
    conv_indices = net.conv_layer_indices()
    if conv_layer is None:
        if not conv_indices:
            raise NotAConvLayer("network has no Conv2D layer")
        conv_layer = conv_indices[-1]
    if conv_layer not in conv_indices:
        raise NotAConvLayer(f"layer {conv_layer} is not a Conv2D layer")
    x = np.asarray(x, dtype=np.float64)
    cache = forward(net, x)
    onehot = np.zeros(net.num_classes)
    onehot[int(c)] = 1.0
    _, _, cotangents = backward(net, cache, onehot, collect_cotangents=True)
    # feature maps A and dlogit/dA live at the input of the following layer
    acts = cache.inputs[conv_layer + 1]
    grads = cotangents[conv_layer + 1]
    alphas = grads.mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(alphas, acts, axes=1), 0.0)
    h, w = net.input_shape[1], net.input_shape[2]
    values = bilinear_resize(cam, h, w)
    return AttributionMap(values=values, method="gradcam", target_class=int(c))


def occlusion(net: Network, x, c, cfg: MethodConfig) -> AttributionMap:
    """Logit drop per occluded patch, written to all patch pixels; overlaps averaged."""
    x = np.asarray(x, dtype=np.float64)
    _, h, w = x.shape
    p, s = cfg.occlusion_patch, cfg.occlusion_stride
    if p > min(h, w):
        raise ValueError(f"patch {p} exceeds spatial size {(h, w)}")
    tops = list(range(0, h - p + 1, s))
    lefts = list(range(0, w - p + 1, s))
    if tops[-1] != h - p:
        tops.append(h - p)
    if lefts[-1] != w - p:
        lefts.append(w - p)
    batch = []
    for t in tops:
        for l in lefts:
            xo = x.copy()
            xo[:, t : t + p, l : l + p] = cfg.occlusion_baseline
            batch.append(xo)
    base = float(_logits(net, x)[int(c)])
    drops = base - _logits(net, np.stack(batch))[:, int(c)]
    acc = np.zeros((h, w))
    cnt = np.zeros((h, w))
    k = 0
    for t in tops:
        for l in lefts:
            acc[t : t + p, l : l + p] += drops[k]
            cnt[t : t + p, l : l + p] += 1.0
            k += 1
    values = acc / np.maximum(cnt, 1.0)
    return AttributionMap(values=values, method="occlusion", target_class=int(c))


def _rise_masks(h, w, cfg: MethodConfig, seed):
    rng = np.random.default_rng(seed)
    g = cfg.rise_grid
    cell_h = -(-h // g)
    cell_w = -(-w // g)
    up_h, up_w = (g + 1) * cell_h, (g + 1) * cell_w
    masks = np.empty((cfg.rise_n_samples, h, w))
    for i in range(cfg.rise_n_samples):
        coarse = (rng.random((g, g)) < cfg.rise_keep_prob).astype(np.float64)
        big = bilinear_resize(coarse, up_h, up_w)
        dy = rng.integers(0, cell_h)
        dx = rng.integers(0, cell_w)
        masks[i] = big[dy : dy + h, dx : dx + w]
    return masks


def rise(net: Network, x, c, cfg: MethodConfig) -> AttributionMap:
    """Monte-Carlo masking: per-pixel average logit weighted by mask coverage."""
    x = np.asarray(x, dtype=np.float64)
    _, h, w = x.shape
    for attempt, seed in enumerate((cfg.seed, cfg.seed + 1)):
        masks = _rise_masks(h, w, cfg, seed)
        coverage = masks.sum(axis=0)
        if np.all(coverage > 0):
            break
        if attempt == 1:
            raise DegenerateMasks("some pixel was never unmasked after a retry")
    scores = np.empty(cfg.rise_n_samples)
    chunk = 256
    for start in range(0, cfg.rise_n_samples, chunk):
        mb = masks[start : start + chunk]
        batch = x[None] * mb[:, None]
        scores[start : start + chunk] = _logits(net, batch)[:, int(c)]
    values = np.tensordot(scores, masks, axes=1) / coverage
    return AttributionMap(values=values, method="rise", target_class=int(c))


def compute(method: str, net: Network, x, c, cfg: MethodConfig | None = None,
            provider: GradientProvider | None = None,
            conv_layer: int | None = None) -> AttributionMap:
    """Dispatch an attribution method by name."""
    cfg = cfg or MethodConfig()
    if method in WHITE_BOX_METHODS:
        provider = provider or GradientProvider(net)
        if method == "saliency":
            return saliency(provider, x, c)
        if method == "gradient_input":
            return gradient_input(provider, x, c)
        if method == "integrated_gradients":
            return integrated_gradients(provider, x, c, cfg)
        if method == "smoothgrad":
            return smoothgrad(provider, x, c, cfg)
        if method == "squaregrad":
            return squaregrad(provider, x, c, cfg)
        if method == "vargrad":
            return vargrad(provider, x, c, cfg)
        if method == "guided_backprop":
            return guided_backprop(provider, x, c)
    if method == "gradcam":
        return gradcam(net, x, c, conv_layer)
    if method == "occlusion":
        return occlusion(net, x, c, cfg)
    if method == "rise":
        return rise(net, x, c, cfg)
    raise ValueError(f"unknown method {method!r}")


def filtered_map(amap: AttributionMap, sigma: float) -> AttributionMap:
    """Low-pass the finished map (map-space filtering)."""
    return replace(amap, values=lowpass(amap.values, sigma), sigma=sigma,
                   provenance="map-filtered")
