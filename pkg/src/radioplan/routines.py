"""Alternating-stage planners over a fixed geometry.

The throughput routine alternates a closed-form auxiliary update, a lifted
SDP stage and Gaussian randomization inside an inner ascent loop, then
re-derives the association exactly; the positioning routine replaces the
inner loop with a bisection over the worst squared-bound threshold. Outer
iterates are accepted only when they do not regress, which keeps the traced
objective monotone within tolerance.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .convex_core import (
    SolverConfig,
    SubproblemSpec,
    bisection,
    gaussian_randomize,
    optimal_y,
    solve_feasibility_sdr,
    solve_maximin_sdr,
    top_g,
)
from .errors import (
    AssociationInfeasibleError,
    InfeasibleSubproblemError,
    NoFeasibleEtaError,
    RandomizationFailureError,
    ThresholdInfeasibleError,
)
from .model import Topology, rate_vector
from .peb import Geometry, b_vector
from .seeding import stream_seed

log = logging.getLogger(__name__)


@dataclass
class RoutineTrace:
    """One record per accepted outer iteration plus the convergence verdict."""

    objectives: list = field(default_factory=list)
    inner_counts: list = field(default_factory=list)
    n_feasible_candidates: list = field(default_factory=list)
    bisection_iterations: list = field(default_factory=list)
    budget_modes: list = field(default_factory=list)
    stop_reason: str = ""
    converged: bool = False

    @property
    def outer_iterations(self) -> int:
        return len(self.objectives)

    def record(self, objective, inner_count, n_feasible, budget_mode, bisect_iters=None):
        self.objectives.append(float(objective))
        self.inner_counts.append(int(inner_count))
        self.n_feasible_candidates.append(int(n_feasible))
        self.budget_modes.append(budget_mode)
        self.bisection_iterations.append(bisect_iters)

    def jsonl_records(self) -> list[dict]:
        return [
            {
                "outer_iteration": k,
                "objective": self.objectives[k],
                "inner_iterations": self.inner_counts[k],
                "n_feasible_candidates": self.n_feasible_candidates[k],
                "budget_mode": self.budget_modes[k],
                "bisection_iterations": self.bisection_iterations[k],
            }
            for k in range(self.outer_iterations)
        ]


@dataclass
class ThroughputResult:
    x: np.ndarray
    A: np.ndarray
    rates: np.ndarray        # bit/s per test point
    trace: RoutineTrace


@dataclass
class PositioningResult:
    x: np.ndarray
    A: np.ndarray
    bounds: np.ndarray       # m^2 per test point
    trace: RoutineTrace


def assoc_from_A(A: np.ndarray) -> np.ndarray:
    """Serving site per row (-1 for legacy rows) from a binary association."""
    A = np.asarray(A)
    assoc = np.full(A.shape[0], -1, dtype=int)
    rows, cols = np.nonzero(A)
    assoc[rows] = cols
    return assoc


def _active_rates(geom: Geometry, x: np.ndarray, active: np.ndarray) -> dict[int, np.ndarray]:
    """Per-row rates (bit/s) of every active site under deployment x."""
    xf = np.asarray(x, dtype=float)
    total = geom.gains @ xf
    out = {}
    for j in active:
        g = geom.gains[:, j]
        interf = total - g * xf[j]
        out[j] = geom.bandwidth * np.log2(1.0 + g / (interf + geom.n_prime))
    return out


def _served_bounds(geom: Geometry, x: np.ndarray) -> float:
    """Squared 5G bound shared by served rows; +inf on degenerate geometry.

    Returns the worst (largest) value across rows.
    """
    xf = np.asarray(x, dtype=float)
    quad = np.einsum("i,tij,j->t", xf, geom.F, xf)
    nu_x = geom.nu @ xf
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.where(quad > 0, nu_x / quad, math.inf)
    return vals


def association_step(
    topo: Topology,
    geom: Geometry,
    x: np.ndarray,
    mode: str,
    zeta_b: float = math.inf,
    zeta_r: float = 0.0,
) -> np.ndarray:
    """Exact per-row association given a binary deployment.

    Each row independently picks the option (legacy or an active site)
    maximizing its rate subject to the bound threshold (`throughput` mode)
    or minimizing its bound subject to the rate threshold (`positioning`
    mode). Equal-value ties keep a 5G option over legacy and resolve among
    sites by the higher SINR (the hybrid association rule), then the lowest
    index. Raises AssociationInfeasibleError naming the first row with no
    option.
    """
    if mode not in ("throughput", "positioning"):
        raise ValueError(f"unknown mode {mode!r}")
    x = np.asarray(x, dtype=int)
    active = np.nonzero(x)[0]
    T, S = geom.n_test_points, geom.n_sites
    A = np.zeros((T, S), dtype=int)
    rates = _active_rates(geom, x, active)
    b5g = _served_bounds(geom, x)
    zeta_b_sq = zeta_b**2 if math.isfinite(zeta_b) else math.inf

    for t in range(T):
        best_value, best_rate, best_j = -math.inf, -math.inf, None
        for j in active:
            if mode == "throughput":
                if b5g[t] > zeta_b_sq:
                    continue
                value = rates[j][t]
            else:
                if rates[j][t] < zeta_r * (1 - 1e-12):
                    continue
                value = -b5g[t]
            if value > best_value or (value == best_value and rates[j][t] > best_rate):
                best_value, best_rate, best_j = value, rates[j][t], int(j)
        if geom.lte_available:
            u_sq = geom.u[t] ** 2 if math.isfinite(geom.u[t]) else math.inf
            if mode == "throughput":
                lte_ok = u_sq <= zeta_b_sq
                lte_value = geom.lte_rate[t]
            else:
                lte_ok = geom.lte_rate[t] >= zeta_r * (1 - 1e-12)
                lte_value = -u_sq
            if lte_ok and lte_value > best_value:
                best_value, best_j = lte_value, -1
                best_rate = geom.lte_rate[t]
        if best_j is None and best_value == -math.inf:
            raise AssociationInfeasibleError(
                t, mode,
                f"zeta_b={zeta_b:.4g} m, zeta_r={zeta_r:.4g} bit/s, "
                f"{len(active)} active sites",
            )
        if best_j is not None and best_j >= 0:
            A[t, best_j] = 1
    return A


def _bootstrap_selection(geom: Geometry, budget: int) -> np.ndarray:
    """Top-G sites by max-SINR popularity under a full deployment."""
    votes = np.zeros(geom.n_sites)
    best_sites = np.argmax(geom.gains, axis=1)  # max gain == max SINR at fixed total
    for j in best_sites:
        votes[j] += 1
    return top_g(votes, budget)


def _spec_from_geometry(geom: Geometry, budget: int, program_cache: dict | None) -> SubproblemSpec:
    T = geom.n_test_points
    return SubproblemSpec(
        gains=geom.gains,
        nu=geom.nu,
        F=geom.F,
        u=geom.u,
        n_prime=geom.n_prime,
        bandwidth=geom.bandwidth,
        budget=budget,
        assoc=np.full(T, -1, dtype=int),
        y=np.zeros(T),
        lte_rate=geom.lte_rate,
        cache=program_cache if program_cache is not None else {},
    )


def _y_step(spec: SubproblemSpec, assoc: np.ndarray, x: np.ndarray) -> np.ndarray:
    xf = np.asarray(x, dtype=float)
    ghat = spec.gains_hat
    total = ghat @ xf
    y = np.zeros(len(assoc))
    for t, j in enumerate(assoc):
        if j >= 0:
            g_int = total[t] - ghat[t, j] * xf[j]
            y[t] = optimal_y(ghat[t, j], g_int, 1.0)
    return y


def _inner_rate(geom: Geometry, x: np.ndarray, assoc: np.ndarray) -> float:
    """Worst served-row rate (bit/s) with the serving site counted as active."""
    xf = np.asarray(x, dtype=float)
    total = geom.gains @ xf
    worst = math.inf
    for t, j in enumerate(assoc):
        if j < 0:
            continue
        g = geom.gains[t, j]
        interf = total[t] - g * xf[j]
        worst = min(worst, geom.bandwidth * math.log2(1.0 + g / (interf + geom.n_prime)))
    return worst


class _PebPredicate:
    """Bound-threshold filter for randomized candidates, tracking the best seen."""

    def __init__(self, geom: Geometry, served: np.ndarray, zeta_b: float):
        self.geom = geom
        self.served = served
        self.limit = zeta_b**2 if math.isfinite(zeta_b) else math.inf
        self.n_feasible = 0
        self.best_worst_bound = math.inf

    def __call__(self, cand: np.ndarray) -> bool:
        if len(self.served) == 0:
            self.n_feasible += 1
            return True
        vals = _served_bounds(self.geom, cand)[self.served]
        worst = float(vals.max())
        self.best_worst_bound = min(self.best_worst_bound, worst)
        if worst <= self.limit:
            self.n_feasible += 1
            return True
        return False


class _RatePredicate:
    """Rate-threshold filter for randomized candidates, tracking the best seen."""

    def __init__(self, geom: Geometry, assoc: np.ndarray, zeta_r: float):
        self.geom = geom
        self.assoc = assoc
        self.zeta_r = zeta_r
        self.n_feasible = 0
        self.best_min_rate = -math.inf

    def __call__(self, cand: np.ndarray) -> bool:
        worst = _inner_rate(self.geom, cand, self.assoc)
        self.best_min_rate = max(self.best_min_rate, worst)
        if worst >= self.zeta_r * (1 - 1e-12):
            self.n_feasible += 1
            return True
        return False


def _randomize_with_retry(state, budget, predicate, scorer, cfg, seed):
    try:
        return gaussian_randomize(
            state.x_bar, state.X, budget, predicate, scorer, cfg.n_rand, seed
        )
    except RandomizationFailureError:
        return gaussian_randomize(
            state.x_bar, state.X, budget, predicate, scorer, 4 * cfg.n_rand, seed + 1
        )


def throughput_routine(
    topo: Topology,
    geom: Geometry,
    zeta_b: float,
    A_init: np.ndarray | None = None,
    cfg: SolverConfig | None = None,
    x_init: np.ndarray | None = None,
    label: str = "tr",
    program_cache: dict | None = None,
) -> ThroughputResult:
    """Maximize the worst test-point rate subject to the bound threshold.

    Double-nested ascent: the inner loop alternates the auxiliary update,
    the lifted SDP stage and Gaussian randomization; the outer loop
    re-derives the association exactly and accepts only non-regressing
    iterates. Returns the selection (exactly G ones), its association, the
    per-row rates and the trace.
    """
    cfg = cfg or SolverConfig()
    finite_u = geom.u[np.isfinite(geom.u)]
    if finite_u.size and zeta_b > finite_u.min():
        log.warning(
            "zeta_b=%.4g m exceeds the legacy baseline min u=%.4g m "
            "(bootstrap override)", zeta_b, finite_u.min(),
        )
    budget = topo.budget
    if x_init is None:
        x_cur = _bootstrap_selection(geom, budget)
    else:
        x_cur = np.asarray(x_init, dtype=int)
    if A_init is None:
        try:
            A_cur = association_step(topo, geom, x_cur, "throughput", zeta_b=zeta_b)
        except AssociationInfeasibleError as err:
            worst = float(np.nanmax(np.sqrt(_served_bounds(geom, x_cur))))
            raise ThresholdInfeasibleError(
                f"no feasible bootstrap association ({err})", worst
            ) from err
    else:
        A_cur = np.asarray(A_init, dtype=int)

    spec_base = _spec_from_geometry(geom, budget, program_cache)
    spec_base = replace(spec_base, zeta_b=float(zeta_b), cache=spec_base.cache)
    trace = RoutineTrace()
    best = None
    best_obj = -math.inf
    consecutive_small = 0
    tightest_bound = math.inf

    for k in range(cfg.max_outer):
        assoc = assoc_from_A(A_cur)
        served = np.nonzero(assoc >= 0)[0]
        x_inner = x_cur.copy()
        X_warm = np.outer(x_inner.astype(float), x_inner.astype(float))
        inner_count = 0
        n_feasible = 0
        budget_mode = "eq"
        if len(served) > 0:
            prev_inner = None
            for i in range(cfg.max_inner):
                inner_count = i + 1
                y = _y_step(spec_base, assoc, x_inner)
                spec_i = spec_base.with_association(assoc, y, zeta_b=float(zeta_b))
                try:
                    state = solve_maximin_sdr(spec_i, cfg, X_init=X_warm)
                except InfeasibleSubproblemError as err:
                    raise ThresholdInfeasibleError(
                        f"rate stage infeasible at outer {k} ({err})",
                        math.sqrt(tightest_bound) if math.isfinite(tightest_bound) else zeta_b,
                    ) from err
                X_warm = state.X
                budget_mode = state.budget_mode
                predicate = _PebPredicate(geom, served, zeta_b)
                scorer = lambda cand: float(
                    spec_i.row_objectives(cand.astype(float))[served].min()
                )
                seed_i = stream_seed(cfg.seed, f"{label}.outer{k}.inner{i}")
                try:
                    x_new = _randomize_with_retry(
                        state, budget, predicate, scorer, cfg, seed_i
                    )
                except RandomizationFailureError as err:
                    tightest_bound = min(tightest_bound, predicate.best_worst_bound)
                    raise ThresholdInfeasibleError(
                        f"randomization found no selection meeting zeta_b at outer {k}",
                        math.sqrt(tightest_bound),
                    ) from err
                tightest_bound = min(tightest_bound, predicate.best_worst_bound)
                n_feasible = predicate.n_feasible
                r_inner = _inner_rate(geom, x_new, assoc)
                x_inner = x_new
                if prev_inner is not None and abs(r_inner - prev_inner) <= cfg.tol_inner * max(
                    1.0, abs(prev_inner)
                ):
                    break
                prev_inner = r_inner
        try:
            A_new = association_step(topo, geom, x_inner, "throughput", zeta_b=zeta_b)
        except AssociationInfeasibleError as err:
            raise ThresholdInfeasibleError(
                f"association infeasible at outer {k} ({err})",
                math.sqrt(tightest_bound) if math.isfinite(tightest_bound) else zeta_b,
            ) from err
        r_vec = rate_vector(geom, x_inner, A_new)
        obj = float(r_vec.min())

        if obj < best_obj - cfg.tol_inner * max(1.0, abs(best_obj)):
            trace.stop_reason = "no_improvement"
            trace.converged = True
            break
        rel_change = abs(obj - best_obj) / max(1.0, abs(best_obj))
        if obj >= best_obj:
            best = (x_inner, A_new, r_vec)
            best_obj = obj
        trace.record(obj, inner_count, n_feasible, budget_mode)
        x_cur, A_cur = x_inner, A_new
        if rel_change <= cfg.tol_inner:
            consecutive_small += 1
            if consecutive_small >= 2:
                trace.stop_reason = "objective_converged"
                trace.converged = True
                break
        else:
            consecutive_small = 0
    else:
        trace.stop_reason = "max_outer"

    x_best, A_best, r_best = best
    return ThroughputResult(x=x_best, A=A_best, rates=r_best, trace=trace)


def positioning_routine(
    topo: Topology,
    geom: Geometry,
    zeta_r: float,
    A_init: np.ndarray | None = None,
    cfg: SolverConfig | None = None,
    x_init: np.ndarray | None = None,
    label: str = "pr",
    program_cache: dict | None = None,
) -> PositioningResult:
    """Minimize the worst squared bound subject to the rate threshold.

    Outer descent over the association; each pass bisects the bound
    threshold over the lifted feasibility problem and extracts a binary
    selection by randomization filtered on the rate rows.
    """
    cfg = cfg or SolverConfig()
    if zeta_r < float(geom.lte_rate.max(initial=0.0)):
        log.warning(
            "zeta_r=%.4g bit/s is below the best legacy rate %.4g bit/s "
            "(bootstrap override)", zeta_r, float(geom.lte_rate.max(initial=0.0)),
        )
    budget = topo.budget
    if x_init is None:
        x_cur = _bootstrap_selection(geom, budget)
    else:
        x_cur = np.asarray(x_init, dtype=int)
    if A_init is None:
        try:
            A_cur = association_step(topo, geom, x_cur, "positioning", zeta_r=zeta_r)
        except AssociationInfeasibleError as err:
            est = float(geom.lte_rate.min())
            raise ThresholdInfeasibleError(
                f"no feasible bootstrap association ({err})", est
            ) from err
    else:
        A_cur = np.asarray(A_init, dtype=int)

    finite_u = geom.u[np.isfinite(geom.u)]
    if cfg.eta_hi is not None:
        eta_hi = cfg.eta_hi
    elif finite_u.size:
        eta_hi = 10.0 * float((finite_u**2).max())
    else:
        full = _served_bounds(geom, np.ones(geom.n_sites))
        eta_hi = 1e3 * float(np.nanmax(full[np.isfinite(full)]))
    eta_lo = cfg.eta_lo
    eps = cfg.eps_bisect if cfg.eps_bisect is not None else (eta_hi - eta_lo) / 256.0
    bisect_cfg = replace(cfg, eta_lo=eta_lo, eta_hi=eta_hi, eps_bisect=eps)

    spec_base = _spec_from_geometry(geom, budget, program_cache)
    trace = RoutineTrace()
    best = None
    best_obj = math.inf
    consecutive_small = 0
    best_rate_seen = -math.inf

    for k in range(cfg.max_outer):
        assoc = assoc_from_A(A_cur)
        spec_k = spec_base.with_association(assoc, np.zeros(len(assoc)), zeta_r=float(zeta_r))
        try:
            bres = bisection(bisect_cfg, lambda eta: solve_feasibility_sdr(eta, spec_k, cfg))
        except NoFeasibleEtaError as err:
            raise ThresholdInfeasibleError(
                f"rate threshold unsatisfiable at outer {k} ({err})",
                max(best_rate_seen, 0.0),
            ) from err
        centered = solve_feasibility_sdr(bres.eta, spec_k, cfg, center=True)
        state_k = centered if centered is not None else bres.state
        predicate = _RatePredicate(geom, assoc, zeta_r)
        # score by the bound achievable after the next association pass: each
        # row takes the better of the 5G bound and its legacy fallback
        u_sq = np.where(np.isfinite(geom.u), geom.u**2, math.inf)

        def scorer(cand):
            b5 = _served_bounds(geom, cand)
            vals = np.minimum(b5, u_sq) if geom.lte_available else b5
            return -float(vals.max())

        seed_k = stream_seed(cfg.seed, f"{label}.outer{k}")
        try:
            x_new = _randomize_with_retry(
                state_k, budget, predicate, scorer, cfg, seed_k
            )
        except RandomizationFailureError as err:
            best_rate_seen = max(best_rate_seen, predicate.best_min_rate)
            raise ThresholdInfeasibleError(
                f"randomization found no selection meeting zeta_r at outer {k}",
                best_rate_seen,
            ) from err
        best_rate_seen = max(best_rate_seen, predicate.best_min_rate)
        try:
            A_new = association_step(topo, geom, x_new, "positioning", zeta_r=zeta_r)
        except AssociationInfeasibleError as err:
            raise ThresholdInfeasibleError(
                f"association infeasible at outer {k} ({err})", best_rate_seen
            ) from err
        b_vec = b_vector(geom, x_new, A_new)
        obj = float(b_vec.max())

        if obj > best_obj + cfg.tol_inner * max(1.0, abs(best_obj)):
            trace.stop_reason = "no_improvement"
            trace.converged = True
            break
        rel_change = abs(obj - best_obj) / max(1.0, abs(best_obj)) if math.isfinite(best_obj) else math.inf
        if obj <= best_obj:
            best = (x_new, A_new, b_vec)
            best_obj = obj
        trace.record(obj, bres.iterations, predicate.n_feasible, bres.state.budget_mode,
                     bisect_iters=bres.iterations)
        x_cur, A_cur = x_new, A_new
        if rel_change <= cfg.tol_inner:
            consecutive_small += 1
            if consecutive_small >= 2:
                trace.stop_reason = "objective_converged"
                trace.converged = True
                break
        else:
            consecutive_small = 0
    else:
        trace.stop_reason = "max_outer"

    x_best, A_best, b_best = best
    return PositioningResult(x=x_best, A=A_best, bounds=b_best, trace=trace)
