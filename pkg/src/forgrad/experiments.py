"""The four analysis experiments: first-order approximation error, layer-wise
gradient slopes, the weight-randomization sanity check, and the metric-bias
control with paired random maps."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import spearmanr

from . import attribution as attr
from .attribution import AttributionMap, MethodConfig
from .metrics import MetricConfig, faithfulness, mu_fidelity
from .nn.network import Network, backward, backward_input, forward, randomize_weights
from .repair import SigmaGrid, attribute_filtered
from .spectral import lowpass_nchw, power_slope, radial_signature


@dataclass(frozen=True)
class TaylorReport:
    sigma_grid: tuple[float, ...]
    epsilon_scales: tuple[float, ...]
    # normalized mean zeta per (scale, sigma): mean zeta(sigma) / mean zeta(bypass)
    filtered: dict
    # normalized mean zeta per (scale, control name)
    controls: dict
    n_images: int


CONTROL_NAMES = ("zero", "permuted", "uniform", "gaussian2d")


def _match_norm(candidate, reference):
    n_ref = np.linalg.norm(reference)
    n_c = np.linalg.norm(candidate)
    return candidate * (n_ref / n_c) if n_c > 0 else candidate


def _gaussian_blob(rng, h, w):
    cy = rng.uniform(0, h)
    cx = rng.uniform(0, w)
    std = rng.uniform(2.0, 6.0)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * std**2))


def _control_gradients(rng, g):
    """Uninformative stand-ins for the true gradient, matched in l2 norm."""
    c, h, w = g.shape
    permuted = rng.permutation(g.ravel()).reshape(g.shape)
    uniform = _match_norm(rng.uniform(-1.0, 1.0, size=g.shape), g)
    blob = np.zeros_like(g)
    for ch in range(c):
        blob[ch] = sum(_gaussian_blob(rng, h, w) for _ in range(3))
    gaussian2d = _match_norm(blob, g)
    return {"zero": np.zeros_like(g), "permuted": permuted,
            "uniform": uniform, "gaussian2d": gaussian2d}


def experiment_taylor(net: Network, images, grid: SigmaGrid,
                      epsilon_scales=(0.01, 0.05, 0.1), seed: int = 0) -> TaylorReport:
    """First-order approximation error of filtered gradients vs controls.

    zeta(x, sigma) = ||f(x+eps) - f(x) - J_sigma eps||_2 over the logit
    vector, where J_sigma stacks the per-class low-passed input gradients.
    Each curve is the mean zeta over images divided by the mean unfiltered
    (bypass) zeta; normalizing the means, rather than averaging per-image
    ratios, keeps the estimate stable when an image's bypass remainder is
    near zero.
    """
    images = np.asarray(images, dtype=np.float64)
    scales = tuple(float(s) for s in epsilon_scales)
    sigmas = grid.values
    zeta_sum = {(s, sg): 0.0 for s in scales for sg in sigmas}
    ctrl_sum = {(s, name): 0.0 for s in scales for name in CONTROL_NAMES}
    for i, x in enumerate(images):
        rng = np.random.default_rng([seed, i])
        cache = forward(net, x)
        c = int(np.argmax(cache.logits))
        f_x = cache.logits.copy()
        grads = [backward_input(net, cache, k) for k in range(net.num_classes)]
        direction = rng.normal(size=x.shape)
        direction /= np.linalg.norm(direction)
        controls = _control_gradients(rng, grads[c])
        filtered = {sg: [lowpass_nchw(g, sg) for g in grads] for sg in sigmas}
        x_norm = np.linalg.norm(x)
        for s in scales:
            eps = direction * (s * x_norm)
            f_pert = forward(net, x + eps).logits
            def zeta(per_class_grads):
                first_order = np.array([np.sum(eps * g) for g in per_class_grads])
                return float(np.linalg.norm(f_pert - f_x - first_order))
            for sg in sigmas:
                zeta_sum[(s, sg)] += zeta(filtered[sg])
            for name in CONTROL_NAMES:
                ctrl_sum[(s, name)] += zeta([controls[name]] * net.num_classes)
    bypass = {s: max(zeta_sum[(s, sigmas[0])], 1e-300) for s in scales}
    return TaylorReport(
        sigma_grid=sigmas, epsilon_scales=scales,
        filtered={(s, sg): v / bypass[s] for (s, sg), v in zeta_sum.items()},
        controls={(s, name): v / bypass[s] for (s, name), v in ctrl_sum.items()},
        n_images=len(images))


@dataclass(frozen=True)
class LayerSlopeReport:
    # variant name -> list of (layer_index, layer_kind, slope)
    slopes: dict
    n_images: int


def probe_layer_indices(net: Network, min_side: int = 8) -> list[int]:
    """Layers whose input is a spatial map large enough for a slope fit."""
    from .nn.network import shape_chain
    chain = shape_chain(net)
    return [i for i, shape in enumerate(chain[:-1])
            if len(shape) == 3 and min(shape[1], shape[2]) >= min_side]


def layer_gradient_maps(net: Network, x, layer_index: int) -> np.ndarray:
    """d(predicted-class logit)/d(input of the given layer), per channel."""
    cache = forward(net, x)
    c = int(np.argmax(cache.logits))
    onehot = np.zeros(net.num_classes)
    onehot[c] = 1.0
    _, _, cotangents = backward(net, cache, onehot, collect_cotangents=True)
    return cotangents[layer_index]


def experiment_layer_slopes(net_variants: dict, images) -> LayerSlopeReport:
    """Power/frequency slope of per-layer input gradients for each variant."""
    images = np.asarray(images, dtype=np.float64)
    slopes = {}
    for name, net in net_variants.items():
        probe = probe_layer_indices(net)
        per_layer_maps = {i: [] for i in probe}
        for x in images:
            cache = forward(net, x)
            c = int(np.argmax(cache.logits))
            onehot = np.zeros(net.num_classes)
            onehot[c] = 1.0
            _, _, cot = backward(net, cache, onehot, collect_cotangents=True)
            for i in probe:
                per_layer_maps[i].extend(cot[i])  # one 2D map per channel
        rows = []
        for i in probe:
            sig = radial_signature(per_layer_maps[i])
            rows.append((i, net.layers[i].kind, power_slope(sig).slope))
        slopes[name] = rows
    return LayerSlopeReport(slopes=slopes, n_images=len(images))


@dataclass(frozen=True)
class SanityReport:
    method: str
    sigma: float
    depths: tuple[int, ...]
    # per depth: mean Spearman correlation between original and randomized maps
    unfiltered: tuple[float, ...]
    filtered: tuple[float, ...]
    n_images: int


def _maps_for(net, images, classes, method, cfg, sigma=None):
    out = []
    for x, c in zip(images, classes):
        if sigma is None:
            out.append(attr.compute(method, net, x, int(c), cfg=cfg).values)
        else:
            out.append(attribute_filtered(net, x, int(c), method, sigma,
                                          "gradient", cfg).values)
    return out


def _mean_spearman(maps_a, maps_b) -> float:
    vals = []
    for a, b in zip(maps_a, maps_b):
        rho = spearmanr(a.ravel(), b.ravel()).statistic
        vals.append(0.0 if np.isnan(rho) else float(rho))
    return float(np.mean(vals))


def experiment_sanity(net: Network, images, method: str, sigma: float,
                      seed: int = 0, cfg: MethodConfig | None = None) -> SanityReport:
    """Cascading weight randomization from the output side; maps should decorrelate."""
    images = np.asarray(images, dtype=np.float64)
    cfg = cfg or MethodConfig()
    classes = [int(np.argmax(forward(net, x).logits)) for x in images]
    base_plain = _maps_for(net, images, classes, method, cfg)
    base_filt = _maps_for(net, images, classes, method, cfg, sigma=sigma)
    n_param = len(net.param_layer_indices())
    depths = tuple(range(n_param + 1))
    plain, filt = [], []
    for d in depths:
        rnet = randomize_weights(net, d, seed)
        plain.append(_mean_spearman(base_plain,
                                    _maps_for(rnet, images, classes, method, cfg)))
        filt.append(_mean_spearman(base_filt,
                                   _maps_for(rnet, images, classes, method, cfg,
                                             sigma=sigma)))
    return SanityReport(method=method, sigma=float(sigma), depths=depths,
                        unfiltered=tuple(plain), filtered=tuple(filt),
                        n_images=len(images))


@dataclass(frozen=True)
class MetricBiasReport:
    n_pairs: int
    mu_fidelity_blob: float
    mu_fidelity_dispersed: float
    faithfulness_blob: float
    faithfulness_dispersed: float


def make_bias_pair(rng, h: int, w: int):
    """A low-frequency Gaussian-blob map and its pixel-dispersed twin.

    Both maps carry the identical value multiset; only spatial layout differs.
    """
    blob = _gaussian_blob(rng, h, w)
    dispersed = rng.permutation(blob.ravel()).reshape(h, w)
    return blob, dispersed


def experiment_metric_bias(net: Network, images, seed: int = 0,
                           metric_cfg: MetricConfig | None = None) -> MetricBiasReport:
    """Paired random maps expose muFidelity's layout bias.

    The default protocol scores muFidelity over 4x4 cells with i.i.d.
    inclusion against a zero baseline (varying subset sizes are what a
    dispersed map's near-uniform cell sums track), while the deletion and
    insertion curves use a noise baseline so neither map gains spurious
    faithfulness from revealing the object against a blank canvas. Passing
    `metric_cfg` overrides both.
    """
    images = np.asarray(images, dtype=np.float64)
    mu_cfg = metric_cfg or MetricConfig(mufid_cell_size=4, mufid_subset_prob=0.15)
    f_cfg = metric_cfg or replace(mu_cfg, baseline_mode="uniform_noise")
    h, w = images.shape[2], images.shape[3]
    mub, mud, fb, fd = [], [], [], []
    for i, x in enumerate(images):
        rng = np.random.default_rng([seed, i])
        blob, dispersed = make_bias_pair(rng, h, w)
        c = int(np.argmax(forward(net, x).logits))
        amap_b = AttributionMap(values=blob, method="random-blob", target_class=c)
        amap_d = AttributionMap(values=dispersed, method="random-dispersed",
                                target_class=c)
        mub.append(mu_fidelity(net, x, amap_b, c, mu_cfg))
        mud.append(mu_fidelity(net, x, amap_d, c, mu_cfg))
        fb.append(faithfulness(net, x, amap_b, c, f_cfg))
        fd.append(faithfulness(net, x, amap_d, c, f_cfg))
    return MetricBiasReport(
        n_pairs=len(images),
        mu_fidelity_blob=float(np.mean(mub)),
        mu_fidelity_dispersed=float(np.mean(mud)),
        faithfulness_blob=float(np.mean(fb)),
        faithfulness_dispersed=float(np.mean(fd)))
