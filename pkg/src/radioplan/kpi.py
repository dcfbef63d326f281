"""Adaptive threshold orchestration trading throughput against positioning.

Bootstraps with an effectively unconstrained rate stage, then alternates the
two routines while ratcheting their thresholds from the bootstrap anchors:
zeta_b = ((b-1)/b) * b0 and zeta_r = ((r-mu)/r) * r0, clamped to sane
ranges. Iterates until the achieved rate loss per unit of squared-bound gain
matches the configured ratio, and always returns the best feasible plan seen
under the joint objective.

Units: rates are tracked in Mbit/s and squared bounds in m^2 here; the
routines consume thresholds in bit/s and meters respectively.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .convex_core import SolverConfig, top_g
from .errors import ThresholdInfeasibleError
from .model import (
    Topology,
    best_joint_association,
    check_deployment,
    joint_value,
    rate_vector,
)
from .peb import Geometry, b_vector, precompute_geometry
from .routines import positioning_routine, throughput_routine
from .seeding import stream_rng

RESULT_SCHEMA_VERSION = 1


@dataclass
class PlanConfig:
    """Knobs of the adaptive processing loop."""

    mu: float = 0.0                    # Mbit/s conceded per m^2 of squared bound
    eps_outer: float | None = None     # None: 0.05*mu, or 0.5 when mu == 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    max_tau: int = 6
    boot_factor: float = 10.0          # bootstrap zeta_b = factor * max legacy bound

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if self.eps_outer is not None and self.eps_outer <= 0:
            raise ValueError("eps_outer must be > 0")

    def resolved_eps(self) -> float:
        if self.eps_outer is not None:
            return self.eps_outer
        return 0.05 * self.mu if self.mu > 0 else 0.5


@dataclass
class PlanState:
    """Threshold-tuning state across iterations."""

    mu: float
    r0: float                 # bootstrap min rate, Mbit/s
    b0: float                 # bootstrap worst squared bound, m^2
    prev_r: float             # r of the previous iteration, Mbit/s
    prev_b: float             # b of the previous iteration, m^2
    floor_zeta_b: float       # estimated best achievable bound, meters
    cap_zeta_b: float         # 10x the worst legacy bound, meters
    tau: int = 0
    zeta_r: float = math.nan
    zeta_b: float = math.nan
    omega_r: float = math.nan
    omega_b: float = math.nan
    r_star: float = math.nan
    b_star: float = math.nan


def update_thresholds(state: PlanState, which: str) -> float:
    """Next threshold from the ratchet formulas, clamped against sign flips.

    `which` is "rate" (zeta_r, Mbit/s, clamped to [0, r0]) or "peb"
    (zeta_b, clamped to [floor, cap]). The squared-bound ratchet
    (b-1)/b mixes units deliberately; the clamps absorb the pathologies.
    """
    if which == "rate":
        prev = state.prev_r
        if prev is None or prev <= 0:
            state.omega_r = 0.0
            state.zeta_r = 0.0
            return 0.0
        state.omega_r = (prev - state.mu) / prev
        state.zeta_r = min(max(state.omega_r * state.r0, 0.0), state.r0)
        return state.zeta_r
    if which == "peb":
        prev = state.prev_b
        if prev is None or prev <= 0:
            state.omega_b = 0.0
            state.zeta_b = state.floor_zeta_b
            return state.zeta_b
        state.omega_b = (prev - 1.0) / prev
        raw = state.omega_b * state.b0
        state.zeta_b = min(max(raw, state.floor_zeta_b), state.cap_zeta_b)
        return state.zeta_b
    raise ValueError(f"unknown threshold {which!r}")


def quantize(
    x_hat: np.ndarray,
    A_hat: np.ndarray,
    delta: float,
    topo: Topology,
    geom: Geometry,
) -> tuple[np.ndarray, np.ndarray]:
    """Round the relaxed pair to a feasible binary plan.

    The selection keeps the G largest entries of x_hat. Association entries
    on undeployed sites or below delta times their column peak are pruned;
    each remaining row picks the surviving site with the best SINR under the
    rounded selection, and empty rows fall back to the legacy tier.
    """
    x_hat = np.asarray(x_hat, dtype=float)
    A_hat = np.asarray(A_hat, dtype=float)
    T, S = A_hat.shape
    x_star = top_g(x_hat, topo.budget)

    col_peak = A_hat.max(axis=0)
    keep = A_hat > delta * col_peak[None, :]
    keep &= (x_star == 1)[None, :]
    keep &= A_hat > 0

    xf = x_star.astype(float)
    total = geom.gains @ xf
    A_star = np.zeros((T, S), dtype=int)
    for t in range(T):
        cols = np.nonzero(keep[t])[0]
        if len(cols) == 0:
            continue
        interf = total[t] - geom.gains[t, cols] * xf[cols]
        sinr = geom.gains[t, cols] / (interf + geom.n_prime)
        A_star[t, cols[int(np.argmax(sinr))]] = 1
    return x_star, A_star


@dataclass
class PlanResult:
    """Final plan with per-test-point metrics and the iteration trace."""

    x_star: np.ndarray
    A_star: np.ndarray
    rates_mbps: np.ndarray
    peb_m: np.ndarray
    tier: list
    min_rate_mbps: float
    max_peb_m: float
    avg_peb_m: float
    joint_objective: float
    converged: bool
    n_iterations: int
    trace: list
    config: dict

    def validate(self, topo: Topology) -> None:
        check_deployment(topo, self.x_star, self.A_star)

    def to_json(self) -> str:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None
            return v

        payload = {
            "schema_version": RESULT_SCHEMA_VERSION,
            "x_star": self.x_star.tolist(),
            "A_star": self.A_star.tolist(),
            "rates_mbps": [clean(float(v)) for v in self.rates_mbps],
            "peb_m": [clean(float(v)) for v in self.peb_m],
            "tier": list(self.tier),
            "min_rate_mbps": clean(float(self.min_rate_mbps)),
            "max_peb_m": clean(float(self.max_peb_m)),
            "avg_peb_m": clean(float(self.avg_peb_m)),
            "joint_objective": clean(float(self.joint_objective)),
            "converged": self.converged,
            "n_iterations": self.n_iterations,
            "trace": self.trace,
            "config": self.config,
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    def to_csv(self, topo: Topology) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["x_m", "y_m", "tier", "rate_mbps", "peb_m"])
        for t, p in enumerate(topo.test_points):
            peb = self.peb_m[t]
            writer.writerow(
                [
                    f"{p.x:.3f}",
                    f"{p.y:.3f}",
                    self.tier[t],
                    f"{self.rates_mbps[t]:.6f}",
                    "inf" if not math.isfinite(peb) else f"{peb:.6f}",
                ]
            )
        return buf.getvalue()


def evaluate_plan(
    topo: Topology,
    geom: Geometry,
    x: np.ndarray,
    A: np.ndarray,
    mu: float,
    converged: bool,
    n_iterations: int,
    trace: list,
    config: dict,
) -> PlanResult:
    """Assemble the reporting view of a binary plan."""
    rates = rate_vector(geom, x, A) / 1e6
    b = b_vector(geom, x, A)
    peb = np.sqrt(b)
    tier = []
    for t in range(geom.n_test_points):
        if A[t].sum() > 0:
            tier.append("nr")
        elif geom.lte_available:
            tier.append("lte")
        else:
            tier.append("none")
    _, vmin = joint_value(topo, x, A, mu, geom=geom)
    finite_peb = peb[np.isfinite(peb)]
    result = PlanResult(
        x_star=np.asarray(x, dtype=int),
        A_star=np.asarray(A, dtype=int),
        rates_mbps=rates,
        peb_m=peb,
        tier=tier,
        min_rate_mbps=float(rates.min()),
        max_peb_m=float(peb.max()),
        avg_peb_m=float(finite_peb.mean()) if finite_peb.size else math.inf,
        joint_objective=vmin,
        converged=converged,
        n_iterations=n_iterations,
        trace=trace,
        config=config,
    )
    result.validate(topo)
    return result


def plan(topo: Topology, cfg: PlanConfig, geom: Geometry | None = None) -> PlanResult:
    """Run the full adaptive loop and return the best feasible plan seen.

    The bootstrap rate stage runs with a bound threshold far above the
    legacy baseline; afterwards each iteration tightens one threshold from
    the ratchet formulas, runs the corresponding routine, quantizes and
    evaluates. A routine that turns infeasible is skipped for the iteration;
    if both fail the loop stops and the best plan so far is returned with
    the non-converged flag.
    """
    if geom is None:
        geom = precompute_geometry(topo)
    solver = cfg.solver
    mu = cfg.mu
    eps = cfg.resolved_eps()
    program_cache: dict = {}

    finite_u = geom.u[np.isfinite(geom.u)]
    zeta_b_boot = cfg.boot_factor * float(finite_u.max()) if finite_u.size else math.inf
    cap_zeta_b = zeta_b_boot if math.isfinite(zeta_b_boot) else math.inf

    # best achievable bound guess: full deployment, worst row
    xf = np.ones(geom.n_sites)
    quad = np.einsum("i,tij,j->t", xf, geom.F, xf)
    with np.errstate(divide="ignore"):
        full_b = np.where(quad > 0, geom.nu @ xf / quad, math.inf)
    finite_full = full_b[np.isfinite(full_b)]
    floor_zeta_b = math.sqrt(float(finite_full.max())) if finite_full.size else 1e-6

    boot = throughput_routine(
        topo, geom, zeta_b_boot, cfg=solver, label="plan.boot",
        program_cache=program_cache,
    )
    x_cur, A_cur = boot.x, boot.A
    r0 = float(boot.rates.min()) / 1e6
    b0 = float(b_vector(geom, x_cur, A_cur).max())
    state = PlanState(
        mu=mu, r0=r0, b0=b0, prev_r=r0, prev_b=b0,
        floor_zeta_b=floor_zeta_b, cap_zeta_b=cap_zeta_b,
    )

    def candidate_pairs(x, A):
        """The plan as produced plus the same selection under the
        joint-value-optimal hybrid association."""
        yield x, A
        yield x, best_joint_association(topo, geom, x, mu)

    best_val, best_pair = -math.inf, None
    for x_c, A_c in candidate_pairs(x_cur, A_cur):
        _, val_c = joint_value(topo, x_c, A_c, mu, geom=geom)
        if val_c > best_val:
            best_val, best_pair = val_c, (x_c.copy(), A_c.copy())
    trace: list[dict] = [
        {
            "tau": 0,
            "stage": "bootstrap",
            "zeta_b_m": zeta_b_boot if math.isfinite(zeta_b_boot) else None,
            "zeta_r_mbps": None,
            "r_mbps": r0,
            "b_m2": b0,
            "joint_value": best_val,
            "tr_feasible": True,
            "pr_feasible": None,
        }
    ]

    converged = False
    tau = 0
    for tau in range(1, cfg.max_tau + 1):
        state.tau = tau
        zeta_b = update_thresholds(state, "peb")
        tr_ok = True
        r_tau = state.prev_r
        try:
            tr = throughput_routine(
                topo, geom, zeta_b, cfg=solver, x_init=x_cur,
                label=f"plan.tau{tau}.tr", program_cache=program_cache,
            )
            x_cur, A_cur = tr.x, tr.A
            r_tau = float(tr.rates.min()) / 1e6
        except ThresholdInfeasibleError:
            tr_ok = False

        zeta_r = update_thresholds(state, "rate")  # uses r of the previous iteration
        if tr_ok:
            state.prev_r = r_tau

        # alternate warm starts with seeded random restarts so the bound
        # stage explores basins beyond one-swap moves around the incumbent
        if tau % 2 == 0:
            rng = stream_rng(solver.seed, f"plan.tau{tau}.restart")
            pr_init = np.zeros(geom.n_sites, dtype=int)
            pr_init[rng.choice(geom.n_sites, size=topo.budget, replace=False)] = 1
        else:
            pr_init = x_cur
        pr_ok = True
        try:
            pr = positioning_routine(
                topo, geom, zeta_r * 1e6, cfg=solver, x_init=pr_init,
                label=f"plan.tau{tau}.pr", program_cache=program_cache,
            )
            x_cur, A_cur = pr.x, pr.A
            state.prev_b = float(pr.bounds.max())
        except ThresholdInfeasibleError:
            pr_ok = False

        if not tr_ok and not pr_ok:
            trace.append(
                {
                    "tau": tau, "stage": "infeasible",
                    "zeta_b_m": zeta_b, "zeta_r_mbps": zeta_r,
                    "tr_feasible": False, "pr_feasible": False,
                }
            )
            break

        x_star, A_star = quantize(
            x_cur.astype(float), A_cur.astype(float), solver.delta, topo, geom
        )
        r_star = float(rate_vector(geom, x_star, A_star).min()) / 1e6
        b_star = float(b_vector(geom, x_star, A_star).max())
        state.r_star, state.b_star = r_star, b_star
        _, val = joint_value(topo, x_star, A_star, mu, geom=geom)
        for x_c, A_c in candidate_pairs(x_star, A_star):
            _, val_c = joint_value(topo, x_c, A_c, mu, geom=geom)
            if val_c > best_val:
                best_val, best_pair = val_c, (x_c.copy(), A_c.copy())

        num = state.r0 - r_star
        den = state.b0 - b_star
        if abs(den) < 1e-12:
            ratio = 0.0 if abs(num) < 1e-9 else math.inf
        else:
            ratio = num / den
        trace.append(
            {
                "tau": tau, "stage": "iteration",
                "zeta_b_m": zeta_b, "zeta_r_mbps": zeta_r,
                "r_mbps": r_tau, "b_m2": state.prev_b,
                "r_star_mbps": r_star, "b_star_m2": b_star,
                "tpr_ratio": None if not math.isfinite(ratio) else ratio,
                "joint_value": val,
                "tr_feasible": tr_ok, "pr_feasible": pr_ok,
            }
        )
        if abs(ratio - mu) <= eps:
            converged = True
            break

    config_echo = {
        "mu": mu,
        "eps_outer": eps,
        "max_tau": cfg.max_tau,
        "boot_factor": cfg.boot_factor,
        "solver": asdict(solver),
    }
    x_best, A_best = best_pair
    return evaluate_plan(
        topo, geom, x_best, A_best, mu,
        converged=converged, n_iterations=tau, trace=trace, config=config_echo,
    )
