"""Network topology, two-tier radio parameters, attenuation, SINR and rates.

Two non-interfering tiers share the model: the pre-deployed legacy (LTE)
tier is fixed, the new (5G-NR) tier is deployed on a subset of candidate
sites selected by the planner. All rates are Shannon capacities in bit/s;
reporting layers convert to Mbit/s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstraintViolationError, DomainError, ValidationError

LIGHT_SPEED = 299792458.0
XI = 10.0 / math.log(10.0)
# thermal noise floor -174 dBm/Hz, two-sided
DEFAULT_NOISE_PSD = 10.0 ** (-174.0 / 10.0) / 1000.0


@dataclass(frozen=True)
class Position:
    """Planar coordinates in meters."""

    x: float
    y: float

    def distance_to(self, other: "Position") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def angle_to(self, other: "Position") -> float:
        """Angle of `other` as seen from here, w.r.t. the horizontal axis."""
        return math.atan2(other.y - self.y, other.x - self.x)


@dataclass(frozen=True)
class NoiseModel:
    """Ranging-error statistics: distance-scaled Gaussian noise + uniform NLoS bias.

    sigma(d) = sigma0 * (d/d0)^(alpha_meas/2); the bias is uniform on
    [0, lambda], with lambda either the constant `lambda_max` or, when
    `lambda_kappa` is set, proportional to the tier shadowing standard
    deviation (lambda = lambda_kappa * shadowing_std).
    """

    sigma0: float
    d0: float = 1.0
    alpha_meas: float = 0.0
    lambda_max: float = 1.0
    lambda_kappa: float | None = None

    def __post_init__(self):
        if self.sigma0 <= 0:
            raise ValidationError("sigma0", "must be > 0")
        if self.d0 <= 0:
            raise ValidationError("d0", "must be > 0")
        if self.alpha_meas < 0:
            raise ValidationError("alpha_meas", "must be >= 0")
        if self.lambda_max <= 0:
            raise ValidationError("lambda_max", "must be > 0")


@dataclass(frozen=True)
class TierParams:
    """Per-tier transmit and propagation constants."""

    tx_power: float          # W
    carrier_freq: float      # Hz
    bandwidth: float         # Hz
    pathloss_exp: float      # channel propagation factor
    shadowing_std: float     # dB
    noise_model: NoiseModel

    def __post_init__(self):
        for name in ("tx_power", "carrier_freq", "bandwidth"):
            if getattr(self, name) <= 0:
                raise ValidationError(name, "must be > 0")
        if self.pathloss_exp < 2:
            raise ValidationError("pathloss_exp", "must be >= 2")
        if self.shadowing_std < 0:
            raise ValidationError("shadowing_std", "must be >= 0")

    def effective_lambda(self) -> float:
        """Max NLoS bias in meters, optionally tied to the shadowing level."""
        if self.noise_model.lambda_kappa is not None:
            return self.noise_model.lambda_kappa * self.shadowing_std
        return self.noise_model.lambda_max


@dataclass(frozen=True)
class RadioConstants:
    light_speed: float = LIGHT_SPEED
    xi: float = XI
    noise_psd: float = DEFAULT_NOISE_PSD  # W/Hz, two-sided

    def __post_init__(self):
        if self.noise_psd <= 0:
            raise ValidationError("noise_psd", "must be > 0")


@dataclass
class Topology:
    """Fixed eNBs, candidate 5G sites, test points and the deployment budget."""

    enbs: list[Position]
    candidate_sites: list[Position]
    test_points: list[Position]
    lte: TierParams
    nr: TierParams
    budget: int
    constants: RadioConstants = field(default_factory=RadioConstants)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if len(self.candidate_sites) < 1:
            raise ValidationError("candidate_sites", "need at least one site")
        if len(self.test_points) < 1:
            raise ValidationError("test_points", "need at least one test point")
        if not 1 <= self.budget <= len(self.candidate_sites):
            raise ValidationError(
                "budget", f"must be in [1, {len(self.candidate_sites)}]"
            )
        for name, pts in (
            ("enbs", self.enbs),
            ("candidate_sites", self.candidate_sites),
            ("test_points", self.test_points),
        ):
            seen = set()
            for p in pts:
                if not (math.isfinite(p.x) and math.isfinite(p.y)):
                    raise ValidationError(name, "coordinates must be finite")
                key = (p.x, p.y)
                if key in seen:
                    raise ValidationError(name, f"duplicate position {key}")
                seen.add(key)

    @property
    def n_sites(self) -> int:
        return len(self.candidate_sites)

    @property
    def n_test_points(self) -> int:
        return len(self.test_points)

    @property
    def n_enbs(self) -> int:
        return len(self.enbs)


def channel_gain(tier: TierParams, consts: RadioConstants, d: float) -> float:
    """Average channel attenuation with log-normal shadowing.

    g = (4*pi*f*d/v)^(-alpha) * exp(-sigma_s^2 / (2*xi^2)), sigma_s in dB.
    Strictly positive and strictly decreasing in d.
    """
    if d <= 0:
        raise DomainError(f"distance must be > 0, got {d}")
    path = (4.0 * math.pi * tier.carrier_freq * d / consts.light_speed) ** (
        -tier.pathloss_exp
    )
    shadow = math.exp(-tier.shadowing_std**2 / (2.0 * consts.xi**2))
    return path * shadow


def normalized_noise(tier: TierParams, consts: RadioConstants) -> float:
    """N' = N0 * W / P, the power-normalized noise of a tier."""
    return consts.noise_psd * tier.bandwidth / tier.tx_power


def sinr(topo: Topology, x: np.ndarray, t: int, j: int) -> float:
    """Downlink SINR of test point t served by candidate site j (5G tier).

    Interference comes from the other active sites of the same tier; j is
    treated as active regardless of x[j].
    """
    x = np.asarray(x, dtype=float)
    p = topo.test_points[t]
    gains = np.array(
        [channel_gain(topo.nr, topo.constants, p.distance_to(s))
         for s in topo.candidate_sites]
    )
    interf = float(np.dot(gains, x)) - gains[j] * x[j]
    n_prime = normalized_noise(topo.nr, topo.constants)
    return gains[j] / (interf + n_prime)


def lte_best_rate(topo: Topology, t: int) -> float:
    """Best legacy-tier Shannon rate at test point t (bit/s); 0 when no eNB."""
    if topo.n_enbs == 0:
        return 0.0
    p = topo.test_points[t]
    gains = np.array(
        [channel_gain(topo.lte, topo.constants, p.distance_to(e)) for e in topo.enbs]
    )
    n_prime = normalized_noise(topo.lte, topo.constants)
    total = float(gains.sum())
    best = 0.0
    for m in range(topo.n_enbs):
        gamma = gains[m] / (total - gains[m] + n_prime)
        best = max(best, topo.lte.bandwidth * math.log2(1.0 + gamma))
    return best


def gnb_rate(topo: Topology, x: np.ndarray, t: int, j: int) -> float:
    """Shannon rate (bit/s) of test point t on candidate site j."""
    return topo.nr.bandwidth * math.log2(1.0 + sinr(topo, x, t, j))


def check_deployment(topo: Topology, x: np.ndarray, A: np.ndarray) -> None:
    """Raise ConstraintViolationError if (x, A) breaks any problem constraint.

    Checks, in order: binary domains, the budget cap, row sums <= 1 and
    association only to deployed sites.
    """
    x = np.asarray(x)
    A = np.asarray(A)
    if x.shape != (topo.n_sites,) or A.shape != (topo.n_test_points, topo.n_sites):
        raise ConstraintViolationError("shape", f"x{x.shape} A{A.shape}")
    if not np.isin(x, (0, 1)).all() or not np.isin(A, (0, 1)).all():
        raise ConstraintViolationError("binary", "x and A must be 0/1")
    if int(x.sum()) > topo.budget:
        raise ConstraintViolationError(
            "budget", f"{int(x.sum())} sites deployed, budget {topo.budget}"
        )
    rows = A.sum(axis=1)
    if (rows > 1).any():
        t = int(np.argmax(rows > 1))
        raise ConstraintViolationError("row_sum", f"test point {t} has {rows[t]} associations")
    bad = A > x[None, :]
    if bad.any():
        t, j = map(int, np.argwhere(bad)[0])
        raise ConstraintViolationError(
            "association_without_deployment", f"test point {t} -> undeployed site {j}"
        )


def rate_vector(geom, x: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Per-test-point rate (bit/s) under deployment x and binary association A.

    Rows with no 5G association fall back to the legacy rate c_t.
    """
    x = np.asarray(x, dtype=float)
    A = np.asarray(A)
    total = geom.gains @ x
    r = np.array(geom.lte_rate, dtype=float, copy=True)
    for t, j in zip(*np.nonzero(A)):
        interf = total[t] - geom.gains[t, j] * x[j]
        gamma = geom.gains[t, j] / (interf + geom.n_prime)
        r[t] = geom.bandwidth * math.log2(1.0 + gamma)
    return r


def row_option_values(geom, x: np.ndarray, mu: float) -> tuple[np.ndarray, np.ndarray]:
    """Best per-row joint value r_t - mu*b_t (Mbit/s scale) and the arg site.

    Every 5G option of a row shares the bound term, so the best site is the
    rate maximizer; the legacy option (site -1) wins only on a strictly
    larger value (5G preferred on ties).
    """
    x = np.asarray(x, dtype=int)
    active = np.nonzero(x)[0]
    T = geom.n_test_points
    values = np.full(T, -math.inf)
    sites = np.full(T, -1, dtype=int)

    if len(active) > 0:
        xf = x.astype(float)
        quad = np.einsum("i,tij,j->t", xf, geom.F, xf)
        nu_x = geom.nu @ xf
        with np.errstate(divide="ignore", invalid="ignore"):
            b5g = np.where(quad > 0, nu_x / quad, math.inf)
        total = geom.gains @ xf
        for t in range(T):
            interf = total[t] - geom.gains[t, active]
            rates = geom.bandwidth * np.log2(
                1.0 + geom.gains[t, active] / (interf + geom.n_prime)
            )
            best = int(np.argmax(rates))
            value = rates[best] / 1e6
            if mu > 0:
                value = -math.inf if math.isinf(b5g[t]) else value - mu * b5g[t]
            values[t] = value
            sites[t] = int(active[best])

    if geom.lte_available:
        for t in range(T):
            value = geom.lte_rate[t] / 1e6
            if mu > 0:
                u = geom.u[t]
                value = -math.inf if math.isinf(u) else value - mu * u * u
            if value > values[t]:
                values[t] = value
                sites[t] = -1
    return values, sites


def best_joint_association(topo: Topology, geom, x: np.ndarray, mu: float) -> np.ndarray:
    """Row-wise association maximizing r_t - mu*b_t given a deployment."""
    _, sites = row_option_values(geom, x, mu)
    A = np.zeros((geom.n_test_points, geom.n_sites), dtype=int)
    for t, j in enumerate(sites):
        if j >= 0:
            A[t, j] = 1
    return A


def joint_value(
    topo: Topology,
    x: np.ndarray,
    A: np.ndarray,
    mu: float,
    geom=None,
) -> tuple[np.ndarray, float]:
    """Per-test-point joint objective r_t - mu*b_t (Mbit/s scale) and its minimum.

    Rates enter in Mbit/s and b_t is the squared position error bound in m^2,
    so mu reads as Mbit/s traded per m^2 of squared PEB. Raises
    ConstraintViolationError on an infeasible (x, A).
    """
    from .peb import b_vector, precompute_geometry

    check_deployment(topo, x, A)
    if geom is None:
        geom = precompute_geometry(topo)
    r = rate_vector(geom, x, A) / 1e6
    b = b_vector(geom, x, A)
    if mu == 0.0:
        values = r
    else:
        values = r - mu * b
    return values, float(values.min())
