"""forgrad: white-box attribution repair by spectral low-pass filtering of
gradients, with a from-scratch CNN engine, attribution methods, and XAI
metrics for measuring the effect."""

from . import attribution, data, experiments, metrics, nn, repair, report, spectral
from .attribution import AttributionMap, GradientProvider, MethodConfig
from .metrics import MetricConfig
from .nn import Network, TrainConfig, make_preset
from .repair import SigmaGrid, SigmaSearchResult, attribute_filtered, sigma_search

__version__ = "0.1.0"

__all__ = [
    "attribution", "data", "experiments", "metrics", "nn", "repair", "report",
    "spectral", "AttributionMap", "GradientProvider", "MethodConfig",
    "MetricConfig", "Network", "TrainConfig", "make_preset", "SigmaGrid",
    "SigmaSearchResult", "attribute_filtered", "sigma_search", "__version__",
]
