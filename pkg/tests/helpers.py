"""Shared topology builders for the test suite."""

import math

import numpy as np

from radioplan.model import (
    NoiseModel,
    Position,
    RadioConstants,
    TierParams,
    Topology,
)

# Tier parameter sets used throughout: dense-urban values.
DU_LTE = dict(
    tx_power=30.0, carrier_freq=1.8e9, bandwidth=20e6,
    pathloss_exp=3.5, shadowing_std=6.0,
    noise=dict(sigma0=1e-3, d0=1.0, alpha_meas=3.5, lambda_max=10.0),
)
DU_NR = dict(
    tx_power=20.0, carrier_freq=3.5e9, bandwidth=100e6,
    pathloss_exp=3.5, shadowing_std=9.0,
    noise=dict(sigma0=1e-4, d0=1.0, alpha_meas=3.5, lambda_max=1.0),
)


def make_tier(spec: dict, **overrides) -> TierParams:
    cfg = {k: v for k, v in spec.items() if k != "noise"}
    noise_cfg = dict(spec["noise"])
    noise_cfg.update(overrides.pop("noise", {}))
    cfg.update(overrides)
    return TierParams(noise_model=NoiseModel(**noise_cfg), **cfg)


def unit_noise() -> NoiseModel:
    """Distance-invariant nearly-unbiased ranging noise (nu ~ 1/sigma0^2)."""
    return NoiseModel(sigma0=1.0, d0=1.0, alpha_meas=0.0, lambda_max=1e-3)


def ring_positions(center: Position, radius: float, n: int, phase: float = 0.0):
    return [
        Position(
            center.x + radius * math.cos(phase + 2 * math.pi * k / n),
            center.y + radius * math.sin(phase + 2 * math.pi * k / n),
        )
        for k in range(n)
    ]


def random_positions(rng, n, width, height, margin=10.0, existing=None):
    """n positions uniform in the box, at least `margin` from existing ones."""
    out = []
    taken = list(existing or [])
    while len(out) < n:
        p = Position(float(rng.uniform(0, width)), float(rng.uniform(0, height)))
        if all(p.distance_to(q) > margin for q in taken):
            out.append(p)
            taken.append(p)
    return out


def desk_instance(seed, n_sites=6, n_test=8, n_enbs=3, budget=3, side=300.0):
    """Small dense-urban-parameterized instance for oracle comparisons."""
    rng = np.random.default_rng(10_000 + seed)
    enbs = random_positions(rng, n_enbs, side, side, margin=40.0)
    sites = random_positions(rng, n_sites, side, side, margin=30.0, existing=enbs)
    tps = random_positions(rng, n_test, side, side, margin=12.0, existing=enbs + sites)
    return Topology(
        enbs=enbs,
        candidate_sites=sites,
        test_points=tps,
        lte=make_tier(DU_LTE),
        nr=make_tier(DU_NR),
        budget=budget,
    )
