"""Reference planners: greedy elimination, fixed-variance selection, exhaustive search.

All baselines emit the same result shape as the adaptive planner so the
compare command can serialize them uniformly. Wall-clock goes only into the
run manifest, never into result payloads, to keep outputs byte-reproducible.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .convex_core import SolverConfig
from .errors import OracleBudgetError
from .kpi import PlanResult, evaluate_plan
from .model import Topology, best_joint_association, row_option_values
from .peb import Geometry, precompute_geometry
from .routines import positioning_routine

_COMB = math.comb


@dataclass
class BaselineResult:
    name: str
    plan: PlanResult
    runtime_s: float   # reported in manifests only, excluded from payloads

    @property
    def x(self) -> np.ndarray:
        return self.plan.x_star

    @property
    def A(self) -> np.ndarray:
        return self.plan.A_star

    @property
    def min_rate_mbps(self) -> float:
        return self.plan.min_rate_mbps

    @property
    def max_peb_m(self) -> float:
        return self.plan.max_peb_m

    @property
    def avg_peb_m(self) -> float:
        return self.plan.avg_peb_m

    @property
    def joint_objective(self) -> float:
        return self.plan.joint_objective

    def to_json(self) -> str:
        payload = json.loads(self.plan.to_json())
        payload["planner"] = self.name
        return json.dumps(payload, sort_keys=True, indent=2)


def _lte_best_sinr(geom: Geometry, lte_bandwidth: float) -> np.ndarray:
    """Best legacy SINR per row, recovered from the cached legacy rate."""
    return 2.0 ** (geom.lte_rate / lte_bandwidth) - 1.0


def hybrid_max_sinr_association(topo: Topology, geom: Geometry, x: np.ndarray) -> np.ndarray:
    """Associate each row to its highest-SINR option, 5G preferred on ties."""
    x = np.asarray(x, dtype=int)
    active = np.nonzero(x)[0]
    T, S = geom.n_test_points, geom.n_sites
    A = np.zeros((T, S), dtype=int)
    lte_sinr = _lte_best_sinr(geom, topo.lte.bandwidth) if geom.lte_available else None
    if len(active) == 0:
        return A
    xf = x.astype(float)
    total = geom.gains @ xf
    for t in range(T):
        interf = total[t] - geom.gains[t, active]
        sinr = geom.gains[t, active] / (interf + geom.n_prime)
        best = int(np.argmax(sinr))
        if lte_sinr is not None and lte_sinr[t] > sinr[best]:
            continue  # legacy row
        A[t, active[best]] = 1
    return A


def best_association_given_x(
    topo: Topology, geom: Geometry, x: np.ndarray, mu: float
) -> np.ndarray:
    """Exact row-wise association maximizing r_t - mu*b_t given a deployment."""
    return best_joint_association(topo, geom, x, mu)


def modified_bse(
    topo: Topology, geom: Geometry, budget: int | None = None, mu: float = 0.0
) -> BaselineResult:
    """Greedy elimination from a full deployment down to the budget.

    Each of the S - G rounds discards the site whose removal leaves the
    highest total max-SINR over the test points; the final association is
    the hybrid max-SINR rule.
    """
    start = time.perf_counter()
    budget = topo.budget if budget is None else budget
    S = geom.n_sites
    active = list(range(S))
    for _ in range(S - budget):
        best_score, best_j = -math.inf, None
        for j in active:
            remaining = [n for n in active if n != j]
            xf = np.zeros(S)
            xf[remaining] = 1.0
            total = geom.gains @ xf
            sub = geom.gains[:, remaining]
            sinr = sub / (total[:, None] - sub + geom.n_prime)
            score = float(sinr.max(axis=1).sum())
            if score > best_score:
                best_score, best_j = score, j
        active.remove(best_j)
    x = np.zeros(S, dtype=int)
    x[active] = 1
    A = hybrid_max_sinr_association(topo, geom, x)
    result = evaluate_plan(
        topo, geom, x, A, mu, converged=True, n_iterations=S - budget,
        trace=[], config={"planner": "bse", "mu": mu},
    )
    return BaselineResult("bse", result, time.perf_counter() - start)


def modified_sdr_toa(
    topo: Topology,
    geom: Geometry,
    budget: int | None = None,
    zeta_r: float = 0.0,
    cfg: SolverConfig | None = None,
    mu: float = 0.0,
) -> BaselineResult:
    """Fixed-variance bound optimization, evaluated under the true error law.

    Runs the positioning machinery with the distance exponent of the ranging
    noise forced to zero (sigma = sigma0 everywhere, bias bounds unchanged),
    keeps the selection and association it produces, and reports every
    metric under the true distance-dependent bound.
    """
    start = time.perf_counter()
    budget = topo.budget if budget is None else budget
    topo_mod = replace(
        topo,
        lte=replace(
            topo.lte, noise_model=replace(topo.lte.noise_model, alpha_meas=0.0)
        ),
        nr=replace(
            topo.nr, noise_model=replace(topo.nr.noise_model, alpha_meas=0.0)
        ),
        budget=budget,
    )
    geom_mod = precompute_geometry(topo_mod)
    res = positioning_routine(
        topo_mod, geom_mod, zeta_r, cfg=cfg or SolverConfig(), label="sdr_toa"
    )
    result = evaluate_plan(
        topo, geom, res.x, res.A, mu, converged=res.trace.converged,
        n_iterations=res.trace.outer_iterations, trace=[],
        config={"planner": "sdr-toa", "mu": mu, "zeta_r": zeta_r},
    )
    return BaselineResult("sdr-toa", result, time.perf_counter() - start)


def exhaustive_oracle(
    topo: Topology,
    geom: Geometry,
    mu: float,
    budget: int | None = None,
    max_evals: int = 10_000_000,
) -> BaselineResult:
    """Global max-min optimum by enumerating every selection within budget.

    Each subset is scored with its exact row-wise optimal association (the
    row objective r_t - mu*b_t is separable, so per-row maximization also
    maximizes the minimum). Refuses instances whose row-evaluation count
    exceeds `max_evals`.
    """
    start = time.perf_counter()
    budget = topo.budget if budget is None else budget
    S, T = geom.n_sites, geom.n_test_points
    required = sum(_COMB(S, k) for k in range(budget + 1)) * T
    if required > max_evals:
        raise OracleBudgetError(required, max_evals)

    best_val, best_x = -math.inf, None
    for k in range(budget + 1):
        if k == 0 and not geom.lte_available:
            continue
        for subset in itertools.combinations(range(S), k):
            x = np.zeros(S, dtype=int)
            x[list(subset)] = 1
            values, _ = row_option_values(geom, x, mu)
            val = float(values.min())
            if val > best_val:
                best_val, best_x = val, x
    if best_x is None:
        raise OracleBudgetError(0, max_evals)  # unreachable with a valid topology

    A = best_association_given_x(topo, geom, best_x, mu)
    result = evaluate_plan(
        topo, geom, best_x, A, mu, converged=True, n_iterations=0,
        trace=[], config={"planner": "oracle", "mu": mu, "max_evals": max_evals},
    )
    return BaselineResult("oracle", result, time.perf_counter() - start)
