"""Joint throughput/localization-aware site selection for two-tier networks."""

from .model import (
    NoiseModel,
    Position,
    RadioConstants,
    TierParams,
    Topology,
    channel_gain,
    check_deployment,
    gnb_rate,
    joint_value,
    lte_best_rate,
    sinr,
)
from .peb import (
    Geometry,
    h_integrand,
    noise_sigma,
    nu_weight,
    peb,
    peb_quadratic_form,
    precompute_geometry,
)

__all__ = [
    "NoiseModel",
    "Position",
    "RadioConstants",
    "TierParams",
    "Topology",
    "Geometry",
    "channel_gain",
    "check_deployment",
    "gnb_rate",
    "joint_value",
    "lte_best_rate",
    "sinr",
    "h_integrand",
    "noise_sigma",
    "nu_weight",
    "peb",
    "peb_quadratic_form",
    "precompute_geometry",
]

__version__ = "0.1.0"
