"""Position error bound for range-based localization with biased measurements.

Each base station contributes an information weight nu that depends on the
distance-scaled noise sigma(d) and the maximum NLoS bias lambda; the bound
combines the weights with the anchor bearing angles. The weight is an
integral evaluated by adaptive quadrature with an overflow-safe integrand.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import erfc, erfcx

from .errors import DomainError, QuadratureError, UnboundedPebError, ValidationError
from .model import (
    NoiseModel,
    Position,
    Topology,
    channel_gain,
    lte_best_rate,
    normalized_noise,
)

GEOMETRY_SCHEMA_VERSION = 1

_SQRT2 = math.sqrt(2.0)
_TRUNCATION = 1e-14     # integrand cutoff relative to its peak
_QUAD_TOL = 1e-9
_DEN_FLOOR = 1e-300


def noise_sigma(nm: NoiseModel, d: float) -> float:
    """Ranging noise standard deviation sigma0 * (d/d0)^(alpha/2), meters."""
    if d <= 0:
        raise DomainError(f"distance must be > 0, got {d}")
    return nm.sigma0 * (d / nm.d0) ** (nm.alpha_meas / 2.0)


def h_integrand(y: float, lam: float, d: float, nm: NoiseModel) -> float:
    """Integrand of the information-weight integral, evaluated stably.

    The raw expression is a squared difference of Gaussian-windowed terms
    over a difference of Q-function tails; both vanish like exp(-y^2), so
    the ratio is computed with the common exponential factored out and the
    tails expressed through the scaled complementary error function. Returns
    0 where the numerator underflows first (the limit value).
    """
    if lam <= 0 or d <= 0:
        raise DomainError("lambda and d must be > 0")
    sig = noise_sigma(nm, d)
    c = lam / (sig * _SQRT2)
    ca = nm.alpha_meas * sig / (d * _SQRT2)
    a_term = 1.0 + nm.alpha_meas * lam / (2.0 * d) + ca * y
    b_term = 1.0 + ca * y

    m1 = -((y + c) ** 2)
    m2 = -(y * y)
    m_max = max(m1, m2)

    # numerator = e^{m_max} * n0
    n0 = math.exp(m1 - m_max) * a_term - math.exp(m2 - m_max) * b_term

    # denominator = Q(sqrt2*y) - Q(sqrt2*y + lam/sig) = (erfc(y) - erfc(y+c))/2,
    # evaluated per branch to avoid cancellation in the tails.
    if y >= 0.0:
        d0 = erfcx(y) - math.exp(m1 - m2) * erfcx(y + c)
        log_den = m2
    elif y + c <= 0.0:
        d0 = erfcx(-(y + c)) - math.exp(m2 - m1) * erfcx(-y)
        log_den = m1
    else:
        d0 = erfc(y) - erfc(y + c)
        log_den = 0.0

    d0 = max(d0 / 2.0, _DEN_FLOOR)
    exponent = 2.0 * m_max - log_den
    if n0 == 0.0 or exponent < -700.0:
        return 0.0
    return math.exp(exponent) * n0 * n0 / d0


def _integration_bracket(lam: float, d: float, nm: NoiseModel) -> tuple[float, float, float]:
    """Truncation interval containing all integrand mass, plus the peak value.

    The integrand has humps near y = 0 and y = -lam/(sigma*sqrt2); start from
    a bracket covering both and double each side until the endpoint value
    falls below the truncation threshold.
    """
    sig = noise_sigma(nm, d)
    c = lam / (sig * _SQRT2)
    lo, hi = -6.0 - c, 6.0
    probe = np.concatenate(
        [np.linspace(lo, hi, 201), np.linspace(-c - 2.0, -c + 2.0, 41), np.linspace(-2.0, 2.0, 41)]
    )
    peak = max(h_integrand(float(y), lam, d, nm) for y in probe)
    if peak <= 0.0:
        return lo, hi, 0.0
    cutoff = _TRUNCATION * peak
    for _ in range(60):
        if h_integrand(lo, lam, d, nm) <= cutoff:
            break
        lo = -c + 2.0 * (lo + c)
    for _ in range(60):
        if h_integrand(hi, lam, d, nm) <= cutoff:
            break
        hi *= 2.0
    return lo, hi, peak


def nu_weight(d: float, lam: float, nm: NoiseModel) -> float:
    """Ranging information weight nu (1/m^2) of one anchor at distance d."""
    if d <= 0 or lam <= 0:
        raise DomainError("d and lambda must be > 0")
    sig = noise_sigma(nm, d)
    c = lam / (sig * _SQRT2)
    lo, hi, peak = _integration_bracket(lam, d, nm)
    if peak == 0.0:
        raise QuadratureError("integrand vanished everywhere", math.inf)
    interior = sorted({p for p in (-c, -c / 2.0, 0.0) if lo < p < hi})
    value, err = integrate.quad(
        h_integrand,
        lo,
        hi,
        args=(lam, d, nm),
        points=interior,
        limit=200,
        epsabs=_QUAD_TOL,
        epsrel=_QUAD_TOL,
    )
    if not math.isfinite(value) or err > max(_QUAD_TOL, 1e-6 * abs(value)):
        raise QuadratureError("weight integral did not converge", err)
    return value / (lam * sig * math.pi * _SQRT2)


def peb(anchors: list[tuple[Position, float]], p: Position) -> float:
    """Position error bound (meters) at p given (position, nu) anchors.

    Equals sqrt(trace(J^-1)) with J the 2x2 information matrix built from
    unit bearing vectors. Requires at least two anchors not collinear
    with p; otherwise the bound is unbounded and an error is raised.
    """
    if len(anchors) < 2:
        raise UnboundedPebError(f"need >= 2 anchors, got {len(anchors)}")
    J = np.zeros((2, 2))
    for q, nu in anchors:
        theta = p.angle_to(q)
        u = np.array([math.cos(theta), math.sin(theta)])
        J += nu * np.outer(u, u)
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    scale = (np.trace(J) / 2.0) ** 2
    if det <= 1e-12 * scale:
        raise UnboundedPebError("anchors are (near-)collinear with the target")
    return math.sqrt(np.trace(J) / det)


def peb_quadratic_form(nu_t: np.ndarray, F_t: np.ndarray, x: np.ndarray) -> float:
    """Squared PEB (m^2) restricted to the deployed sites: nu.x / (x'F'x)."""
    x = np.asarray(x, dtype=float)
    quad = float(x @ F_t @ x)
    if quad <= 0.0:
        raise UnboundedPebError("quadratic form x'F'x is zero (degenerate geometry)")
    return float(nu_t @ x) / quad


@dataclass
class Geometry:
    """Deployment-independent cache: distances, bearings, weights and gains.

    Arrays are indexed (test point, site). F[t] is strictly upper triangular
    with entries nu_it * nu_jt * sin^2(theta_jt - theta_it); u holds the
    legacy-tier PEB per test point (inf when fewer than two eNBs bound it)
    and lte_rate the best legacy rate c_t.
    """

    dists: np.ndarray       # (T, S) meters
    theta: np.ndarray       # (T, S) radians
    nu: np.ndarray          # (T, S) 1/m^2
    F: np.ndarray           # (T, S, S)
    gains: np.ndarray       # (T, S) 5G-tier channel gains
    u: np.ndarray           # (T,) meters, legacy PEB
    lte_rate: np.ndarray    # (T,) bit/s
    n_prime: float          # 5G-tier normalized noise
    bandwidth: float        # 5G-tier bandwidth, Hz
    lte_available: bool

    def V(self, t: int) -> np.ndarray:
        """Diagonal weight matrix of test point t (diag = nu_t)."""
        return np.diag(self.nu[t])

    @property
    def n_test_points(self) -> int:
        return self.dists.shape[0]

    @property
    def n_sites(self) -> int:
        return self.dists.shape[1]

    def to_json(self) -> str:
        payload = {
            "schema_version": GEOMETRY_SCHEMA_VERSION,
            "dists_m": self.dists.tolist(),
            "theta_rad": self.theta.tolist(),
            "nu_per_m2": self.nu.tolist(),
            "F": self.F.tolist(),
            "gains": self.gains.tolist(),
            "u_m": [None if not math.isfinite(v) else v for v in self.u],
            "lte_rate_bps": self.lte_rate.tolist(),
            "n_prime": self.n_prime,
            "bandwidth_hz": self.bandwidth,
            "lte_available": self.lte_available,
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Geometry":
        raw = json.loads(text)
        version = raw.get("schema_version")
        if version != GEOMETRY_SCHEMA_VERSION:
            raise ValidationError("schema_version", f"unsupported version {version}")
        u = np.array(
            [math.inf if v is None else float(v) for v in raw["u_m"]], dtype=float
        )
        return cls(
            dists=np.array(raw["dists_m"], dtype=float),
            theta=np.array(raw["theta_rad"], dtype=float),
            nu=np.array(raw["nu_per_m2"], dtype=float),
            F=np.array(raw["F"], dtype=float),
            gains=np.array(raw["gains"], dtype=float),
            u=u,
            lte_rate=np.array(raw["lte_rate_bps"], dtype=float),
            n_prime=float(raw["n_prime"]),
            bandwidth=float(raw["bandwidth_hz"]),
            lte_available=bool(raw["lte_available"]),
        )


def precompute_geometry(topo: Topology) -> Geometry:
    """Populate the per-test-point cache used by the solver stages."""
    T, S = topo.n_test_points, topo.n_sites
    dists = np.zeros((T, S))
    theta = np.zeros((T, S))
    nu = np.zeros((T, S))
    gains = np.zeros((T, S))
    F = np.zeros((T, S, S))
    u = np.full(T, math.inf)
    lte_rate = np.zeros(T)

    lam_nr = topo.nr.effective_lambda()
    lam_lte = topo.lte.effective_lambda()
    nm_nr = topo.nr.noise_model
    nm_lte = topo.lte.noise_model

    nu_cache: dict[float, float] = {}

    def cached_nu(dist: float, lam: float, nm: NoiseModel) -> float:
        key = (dist, lam, id(nm))
        if key not in nu_cache:
            nu_cache[key] = nu_weight(dist, lam, nm)
        return nu_cache[key]

    for t, p in enumerate(topo.test_points):
        for j, s in enumerate(topo.candidate_sites):
            d = p.distance_to(s)
            if d <= 0:
                raise DomainError(f"test point {t} coincides with site {j}")
            dists[t, j] = d
            theta[t, j] = p.angle_to(s)
            nu[t, j] = cached_nu(d, lam_nr, nm_nr)
            gains[t, j] = channel_gain(topo.nr, topo.constants, d)
        for i in range(S):
            for j in range(i + 1, S):
                F[t, i, j] = (
                    nu[t, i]
                    * nu[t, j]
                    * math.sin(theta[t, j] - theta[t, i]) ** 2
                )
        if topo.n_enbs >= 2:
            anchors = []
            for e in topo.enbs:
                de = p.distance_to(e)
                anchors.append((e, cached_nu(de, lam_lte, nm_lte)))
            try:
                u[t] = peb(anchors, p)
            except UnboundedPebError:
                u[t] = math.inf
        lte_rate[t] = lte_best_rate(topo, t)

    return Geometry(
        dists=dists,
        theta=theta,
        nu=nu,
        F=F,
        gains=gains,
        u=u,
        lte_rate=lte_rate,
        n_prime=normalized_noise(topo.nr, topo.constants),
        bandwidth=topo.nr.bandwidth,
        lte_available=topo.n_enbs >= 1,
    )


def b_vector(geom: Geometry, x: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Per-test-point squared PEB (m^2): 5G bound where associated, else u_t^2.

    Degenerate 5G geometry yields +inf rather than raising, so callers can
    use the vector inside feasibility predicates.
    """
    x = np.asarray(x, dtype=float)
    A = np.asarray(A)
    T = geom.n_test_points
    b = np.empty(T)
    assoc_5g = A.sum(axis=1) > 0
    nu_x = geom.nu @ x
    quad = np.einsum("i,tij,j->t", x, geom.F, x)
    for t in range(T):
        if assoc_5g[t]:
            b[t] = nu_x[t] / quad[t] if quad[t] > 0 else math.inf
        else:
            b[t] = geom.u[t] ** 2 if math.isfinite(geom.u[t]) else math.inf
    return b
