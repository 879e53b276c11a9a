"""XAI evaluation metrics: Deletion, Insertion, Faithfulness, muFidelity,
Sensitivity, and the aggregate ranking score.

Deletion/Insertion curves track the softmax probability of the evaluated
class while pixels are removed/inserted in attribution order; muFidelity
correlates subset attribution sums with the logit drop when those subsets
are set to baseline.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSubsetSize
from .nn.network import Network, forward


@dataclass(frozen=True)
class MetricConfig:
    pixel_step: int = 16
    baseline_mode: str = "zero"  # {"zero", "uniform_noise"}
    mufid_subset_size: int = 32
    mufid_n_subsets: int = 200
    mufid_cell_size: int = 1  # side of square pixel groups occluded together
    mufid_subset_prob: float | None = None  # None: fixed-size subsets; else i.i.d. inclusion
    sens_radius: float = 0.02  # fraction of the input dynamic range
    sens_n_samples: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.pixel_step < 1:
            raise ValueError("pixel_step must be >= 1")
        if self.baseline_mode not in ("zero", "uniform_noise"):
            raise ValueError(f"unknown baseline_mode {self.baseline_mode!r}")
        if self.mufid_n_subsets < 2:
            raise ValueError("mufid_n_subsets must be >= 2 for a correlation")
        if self.mufid_cell_size < 1:
            raise ValueError("mufid_cell_size must be >= 1")
        if self.mufid_subset_prob is not None \
                and not 0.0 < self.mufid_subset_prob < 1.0:
            raise ValueError("mufid_subset_prob must lie in (0, 1)")
        if self.sens_n_samples < 1:
            raise ValueError("sens_n_samples must be >= 1")


def _map_values(amap) -> np.ndarray:
    return np.asarray(getattr(amap, "values", amap), dtype=np.float64)


def _ranking(values: np.ndarray) -> np.ndarray:
    """Pixel order by descending attribution; ties broken row-major."""
    flat = values.ravel()
    return np.argsort(-flat, kind="stable")


def _baseline_image(x, cfg: MetricConfig):
    if cfg.baseline_mode == "zero":
        return np.zeros_like(x)
    rng = np.random.default_rng(cfg.seed + 0x5EED)
    return rng.uniform(-1.0, 1.0, size=x.shape)


def _stages(n_pixels: int, step: int):
    stages = list(range(0, n_pixels, step))
    if stages[-1] != n_pixels:
        stages.append(n_pixels)
    return stages


def _curve_auc(net: Network, x, values, c, cfg: MetricConfig, insert: bool) -> float:
    x = np.asarray(x, dtype=np.float64)
    ch, h, w = x.shape
    order = _ranking(values)
    base = _baseline_image(x, cfg)
    n = h * w
    stages = _stages(n, cfg.pixel_step)
    xf = x.reshape(ch, n)
    bf = base.reshape(ch, n)
    batch = np.empty((len(stages), ch, n))
    for i, k in enumerate(stages):
        img = bf.copy() if insert else xf.copy()
        src = xf if insert else bf
        sel = order[:k]
        img[:, sel] = src[:, sel]
        batch[i] = img
    probs = forward(net, batch.reshape(len(stages), ch, h, w)).probabilities[:, int(c)]
    fractions = np.asarray(stages, dtype=np.float64) / n
    return float(np.trapezoid(probs, fractions))


def deletion(net: Network, x, amap, c, cfg: MetricConfig) -> float:
    """AUC of class probability as top-attribution pixels are set to baseline."""
    return _curve_auc(net, x, _map_values(amap), c, cfg, insert=False)


def insertion(net: Network, x, amap, c, cfg: MetricConfig) -> float:
    """AUC of class probability as top-attribution pixels are restored into baseline."""
    return _curve_auc(net, x, _map_values(amap), c, cfg, insert=True)


def faithfulness(net: Network, x, amap, c, cfg: MetricConfig) -> float:
    return insertion(net, x, amap, c, cfg) - deletion(net, x, amap, c, cfg)


def faithfulness_from_aucs(insertion_auc: float, deletion_auc: float) -> float:
    return insertion_auc - deletion_auc


def mu_fidelity(net: Network, x, amap, c, cfg: MetricConfig) -> float:
    """Pearson correlation of subset attribution sums vs logit drops.

    Subsets are drawn over square cells of side `mufid_cell_size` (1 = single
    pixels). By default each subset has exactly `mufid_subset_size` cells;
    with `mufid_subset_prob` set, cells are included independently with that
    probability, so subset sizes vary.
    """
    x = np.asarray(x, dtype=np.float64)
    values = _map_values(amap)
    ch, h, w = x.shape
    cell = cfg.mufid_cell_size
    if h % cell or w % cell:
        raise DegenerateSubsetSize(
            f"cell size {cell} must divide the spatial dims {h}x{w}")
    gh, gw = h // cell, w // cell
    n = gh * gw
    k = cfg.mufid_subset_size
    if cfg.mufid_subset_prob is None and not 0 < k < n:
        raise DegenerateSubsetSize(f"subset size {k} must lie in (0, {n})")
    cell_sums = values.reshape(gh, cell, gw, cell).sum(axis=(1, 3)).ravel()
    base = _baseline_image(x, cfg)
    sums = np.empty(cfg.mufid_n_subsets)
    batch = np.empty((cfg.mufid_n_subsets, ch, h, w))
    for i in range(cfg.mufid_n_subsets):
        rng = np.random.default_rng([cfg.seed, i])  # counter-based: order-independent
        if cfg.mufid_subset_prob is None:
            sel = np.zeros(n, dtype=bool)
            sel[rng.choice(n, size=k, replace=False)] = True
        else:
            sel = rng.random(n) < cfg.mufid_subset_prob
        sums[i] = cell_sums[sel].sum()
        mask = np.repeat(np.repeat(sel.reshape(gh, gw), cell, axis=0), cell, axis=1)
        img = x.copy()
        img[:, mask] = base[:, mask]
        batch[i] = img
    logits = forward(net, batch).logits[:, int(c)]
    base_logit = forward(net, x).logits[int(c)]
    drops = base_logit - logits
    if np.ptp(sums) == 0.0 or np.ptp(drops) == 0.0:
        return 0.0
    r = np.corrcoef(sums, drops)[0, 1]
    return float(r)


def sensitivity(attribution_fn, x, cfg: MetricConfig) -> float:
    """Mean normalized map distance under small uniform input perturbations."""
    x = np.asarray(x, dtype=np.float64)
    r = cfg.sens_radius * (x.max() - x.min())
    base_map = _map_values(attribution_fn(x))
    norm = np.linalg.norm(base_map)
    if norm == 0.0:
        return 0.0
    dists = np.empty(cfg.sens_n_samples)
    for i in range(cfg.sens_n_samples):
        rng = np.random.default_rng([cfg.seed, i])
        delta = rng.uniform(-r, r, size=x.shape)
        pert_map = _map_values(attribution_fn(x + delta))
        dists[i] = np.linalg.norm(pert_map - base_map) / norm
    return float(dists.mean())


def aggregate_score(faith: float, mu_fid: float, sens: float) -> float:
    """Single ranking score: faithfulness + muFidelity - sensitivity."""
    return faith + mu_fid - sens
