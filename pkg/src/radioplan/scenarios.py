"""Synthetic topologies for the three deployment archetypes, plus file I/O.

Default tier parameters follow the standard two-tier values (legacy at
1.8 GHz / 20 MHz, new radio at 3.5 GHz / 100 MHz) with per-archetype
propagation factors and shadowing levels. Densities are desk-scale
estimates: the operator figures behind the archetypes are not public.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

from .errors import ValidationError
from .model import (
    NoiseModel,
    Position,
    RadioConstants,
    TierParams,
    Topology,
)
from .seeding import stream_rng

TOPOLOGY_SCHEMA_VERSION = 1

LTE_TABLE = dict(sigma0=1e-3, lambda_max=10.0, tx_power=30.0,
                 carrier_freq=1.8e9, bandwidth=20e6)
NR_TABLE = dict(sigma0=1e-4, lambda_max=1.0, tx_power=20.0,
                carrier_freq=3.5e9, bandwidth=100e6)

# per-archetype propagation factor and shadowing (legacy, new) in dB;
# areas in meters and densities per km^2 are calibrated so the dense-urban
# case lands near 20 candidate sites and 10 legacy stations
SCENARIO_DEFAULTS = {
    "H": dict(area=(5000.0, 500.0), alpha=2.5, shadow=(3.0, 5.0),
              enb_density=2.0, cs_density=3.2, spacing=250.0),
    "SU": dict(area=(3000.0, 3000.0), alpha=3.0, shadow=(5.0, 7.0),
               enb_density=0.6, cs_density=1.2, spacing=300.0),
    "DU": dict(area=(1500.0, 1500.0), alpha=3.5, shadow=(6.0, 9.0),
               enb_density=4.4, cs_density=8.9, spacing=150.0),
}


@dataclass
class ScenarioSpec:
    """Recipe for one synthetic topology."""

    kind: str                      # "H" | "SU" | "DU"
    seed: int = 0
    area: tuple | None = None      # meters; archetype default when None
    enb_density: float | None = None   # per km^2
    cs_density: float | None = None
    test_grid_spacing: float | None = None
    budget: int | None = None      # None: no cap (G = S)
    lambda_kappa: float | None = None  # optional bias-shadowing coupling
    lte_overrides: dict = field(default_factory=dict)
    nr_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SCENARIO_DEFAULTS:
            raise ValidationError("kind", f"must be one of {sorted(SCENARIO_DEFAULTS)}")
        defaults = SCENARIO_DEFAULTS[self.kind]
        if self.area is None:
            self.area = defaults["area"]
        if self.enb_density is None:
            self.enb_density = defaults["enb_density"]
        if self.cs_density is None:
            self.cs_density = defaults["cs_density"]
        if self.test_grid_spacing is None:
            self.test_grid_spacing = defaults["spacing"]
        if self.area[0] <= 0 or self.area[1] <= 0:
            raise ValidationError("area", "must be positive")
        if self.enb_density < 0 or self.cs_density <= 0:
            raise ValidationError("density", "cs_density must be > 0, enb_density >= 0")
        if self.test_grid_spacing <= 0:
            raise ValidationError("test_grid_spacing", "must be > 0")


def _tier(table: dict, alpha: float, shadow: float, kappa: float | None,
          overrides: dict) -> TierParams:
    cfg = dict(table)
    cfg.update({k: v for k, v in overrides.items() if k != "noise"})
    noise = NoiseModel(
        sigma0=cfg.pop("sigma0"),
        d0=1.0,
        alpha_meas=overrides.get("noise", {}).get("alpha_meas", alpha),
        lambda_max=cfg.pop("lambda_max"),
        lambda_kappa=kappa,
    )
    return TierParams(
        tx_power=cfg["tx_power"],
        carrier_freq=cfg["carrier_freq"],
        bandwidth=cfg["bandwidth"],
        pathloss_exp=overrides.get("pathloss_exp", alpha),
        shadowing_std=overrides.get("shadowing_std", shadow),
        noise_model=noise,
    )


def grid_test_points(area: tuple, spacing: float) -> list[Position]:
    """Cell-center lattice over the area: ceil(W/s) * ceil(H/s) points."""
    if spacing <= 0:
        raise ValidationError("spacing", "must be > 0")
    w, h = area
    nx, ny = math.ceil(w / spacing), math.ceil(h / spacing)
    step_x, step_y = w / nx, h / ny
    return [
        Position((i + 0.5) * step_x, (j + 0.5) * step_y)
        for j in range(ny)
        for i in range(nx)
    ]


def _place(rng, n: int, area: tuple, strip: bool) -> list[Position]:
    w, h = area
    out = []
    seen = set()
    while len(out) < n:
        x = float(rng.uniform(0.0, w))
        if strip:
            y = float(h / 2.0 + rng.uniform(-h / 4.0, h / 4.0))
        else:
            y = float(rng.uniform(0.0, h))
        if (x, y) in seen:
            continue
        seen.add((x, y))
        out.append(Position(x, y))
    return out


def generate(spec: ScenarioSpec) -> Topology:
    """Sample a topology: uniform placement at the configured densities.

    Deterministic per seed; the highway archetype places stations along the
    strip axis with lateral jitter. Raises when the densities produce no
    candidate site or the grid no test point.
    """
    defaults = SCENARIO_DEFAULTS[spec.kind]
    area_km2 = spec.area[0] * spec.area[1] / 1e6
    n_enb = round(spec.enb_density * area_km2)
    n_cs = round(spec.cs_density * area_km2)
    if n_cs < 1:
        raise ValidationError("cs_density", f"yields {n_cs} candidate sites")
    test_points = grid_test_points(spec.area, spec.test_grid_spacing)
    if not test_points:
        raise ValidationError("test_grid_spacing", "yields no test points")

    rng = stream_rng(spec.seed, f"scenario.{spec.kind}")
    strip = spec.kind == "H"
    enbs = _place(rng, n_enb, spec.area, strip)
    sites = _place(rng, n_cs, spec.area, strip)

    alpha = defaults["alpha"]
    sh_lte, sh_nr = defaults["shadow"]
    budget = spec.budget if spec.budget is not None else n_cs
    return Topology(
        enbs=enbs,
        candidate_sites=sites,
        test_points=test_points,
        lte=_tier(LTE_TABLE, alpha, sh_lte, spec.lambda_kappa, spec.lte_overrides),
        nr=_tier(NR_TABLE, alpha, sh_nr, spec.lambda_kappa, spec.nr_overrides),
        budget=budget,
    )


# -- topology file format ----------------------------------------------------

def _tier_to_json(tier: TierParams) -> dict:
    nm = tier.noise_model
    return {
        "tx_power_w": tier.tx_power,
        "carrier_freq_hz": tier.carrier_freq,
        "bandwidth_hz": tier.bandwidth,
        "pathloss_exp": tier.pathloss_exp,
        "shadowing_std_db": tier.shadowing_std,
        "noise": {
            "sigma0_m": nm.sigma0,
            "d0_m": nm.d0,
            "alpha_meas": nm.alpha_meas,
            "lambda_max_m": nm.lambda_max,
            "lambda_kappa": nm.lambda_kappa,
        },
    }


def _require(raw: dict, key: str, where: str):
    if key not in raw:
        raise ValidationError(f"{where}.{key}", "missing field")
    return raw[key]


def _tier_from_json(raw: dict, where: str) -> TierParams:
    noise_raw = _require(raw, "noise", where)
    try:
        noise = NoiseModel(
            sigma0=float(_require(noise_raw, "sigma0_m", f"{where}.noise")),
            d0=float(_require(noise_raw, "d0_m", f"{where}.noise")),
            alpha_meas=float(_require(noise_raw, "alpha_meas", f"{where}.noise")),
            lambda_max=float(_require(noise_raw, "lambda_max_m", f"{where}.noise")),
            lambda_kappa=noise_raw.get("lambda_kappa"),
        )
        return TierParams(
            tx_power=float(_require(raw, "tx_power_w", where)),
            carrier_freq=float(_require(raw, "carrier_freq_hz", where)),
            bandwidth=float(_require(raw, "bandwidth_hz", where)),
            pathloss_exp=float(_require(raw, "pathloss_exp", where)),
            shadowing_std=float(_require(raw, "shadowing_std_db", where)),
            noise_model=noise,
        )
    except (TypeError, ValueError) as err:
        if isinstance(err, ValidationError):
            raise
        raise ValidationError(where, str(err)) from err


def _positions_from_json(raw, where: str) -> list[Position]:
    out = []
    for i, pair in enumerate(raw):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ValidationError(f"{where}[{i}]", "expected [x_m, y_m]")
        out.append(Position(float(pair[0]), float(pair[1])))
    return out


def topology_to_json(topo: Topology) -> str:
    payload = {
        "schema_version": TOPOLOGY_SCHEMA_VERSION,
        "budget": topo.budget,
        "enbs_m": [[p.x, p.y] for p in topo.enbs],
        "candidate_sites_m": [[p.x, p.y] for p in topo.candidate_sites],
        "test_points_m": [[p.x, p.y] for p in topo.test_points],
        "lte": _tier_to_json(topo.lte),
        "nr": _tier_to_json(topo.nr),
        "constants": {
            "light_speed_mps": topo.constants.light_speed,
            "xi": topo.constants.xi,
            "noise_psd_w_per_hz": topo.constants.noise_psd,
        },
    }
    return json.dumps(payload, sort_keys=True, indent=2)


def topology_from_json(text: str) -> Topology:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ValidationError("document", f"invalid JSON: {err}") from err
    version = raw.get("schema_version")
    if version != TOPOLOGY_SCHEMA_VERSION:
        raise ValidationError("schema_version", f"unsupported version {version}")
    consts_raw = raw.get("constants", {})
    constants = RadioConstants(
        light_speed=float(consts_raw.get("light_speed_mps", RadioConstants().light_speed)),
        xi=float(consts_raw.get("xi", RadioConstants().xi)),
        noise_psd=float(consts_raw.get("noise_psd_w_per_hz", RadioConstants().noise_psd)),
    )
    return Topology(
        enbs=_positions_from_json(_require(raw, "enbs_m", "document"), "enbs_m"),
        candidate_sites=_positions_from_json(
            _require(raw, "candidate_sites_m", "document"), "candidate_sites_m"
        ),
        test_points=_positions_from_json(
            _require(raw, "test_points_m", "document"), "test_points_m"
        ),
        lte=_tier_from_json(_require(raw, "lte", "document"), "lte"),
        nr=_tier_from_json(_require(raw, "nr", "document"), "nr"),
        budget=int(_require(raw, "budget", "document")),
        constants=constants,
    )


def save(topo: Topology, path) -> None:
    with open(path, "w") as fh:
        fh.write(topology_to_json(topo))
        fh.write("\n")


def load(path) -> Topology:
    with open(path) as fh:
        return topology_from_json(fh.read())
