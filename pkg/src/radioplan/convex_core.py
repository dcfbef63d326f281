"""Relaxed PSD-constrained site-selection subproblems.

Lifts the binary selection x to X = x x^T, drops the rank-1 constraint and
solves two flavours over the lifted variable: a max-min concave program for
the rate stage (the log terms are linearized repeatedly and each pass is a
linear-objective SDP, with a safeguarded line search keeping the true
concave objective monotone) and a feasibility program for the bound stage,
solved in phase-1 form so infeasibility is a clean slack verdict. Binary
selections are recovered by Gaussian randomization around the relaxed
solution.

All channel gains are normalized by the tier noise power internally, so the
auxiliary variables y and every SDP coefficient stay O(1).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import cvxpy as cp
import numpy as np

from .errors import (
    DomainError,
    InfeasibleSubproblemError,
    NoFeasibleEtaError,
    NotPsdError,
    RandomizationFailureError,
)

log = logging.getLogger(__name__)

PSD_EIG_FLOOR = -1e-8
CONSTRAINT_TOL = 1e-6
MAX_LINEARIZE_PASSES = 12
RANK1_RTOL = 1e-6
_LN2 = math.log(2.0)
_SOLVER_ORDER = ("CLARABEL", "SCS")


@dataclass
class SolverConfig:
    """Knobs shared by the relaxation stages and the routines built on them."""

    eta_lo: float = 0.0            # bisection bracket, squared-PEB units
    eta_hi: float | None = None    # None: derived from the legacy bounds
    eps_bisect: float | None = None  # None: (eta_hi - eta_lo) / 256
    n_rand: int = 200              # Gaussian randomization sample count
    delta: float = 0.1             # association pruning factor
    tol_inner: float = 1e-4        # relative objective tolerance
    max_inner: int = 8
    max_outer: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.eta_lo < 0:
            raise DomainError("eta_lo must be >= 0")
        if self.eta_hi is not None and self.eta_hi <= self.eta_lo:
            raise DomainError("eta_hi must exceed eta_lo")
        if self.eps_bisect is not None and self.eps_bisect <= 0:
            raise DomainError("eps_bisect must be > 0")
        if self.n_rand < 1:
            raise DomainError("n_rand must be >= 1")
        if not 0 < self.delta < 1:
            raise DomainError("delta must be in (0, 1)")


@dataclass
class RelaxedState:
    """Solution of a relaxed subproblem plus the association it was built on."""

    X: np.ndarray              # (S, S) symmetric PSD
    x_bar: np.ndarray          # diag(X)
    A_relax: np.ndarray        # (T, S) association used (binary rows)
    y_aux: np.ndarray          # (T, S) quadratic-transform variables
    objective: float | None = None   # bit/s for the rate stage
    budget_mode: str = "eq"    # "eq": trace == G; "ineq": trace <= G fallback
    passes: int = 0
    converged: bool = True

    def validate(self, budget: int) -> None:
        """Assert the lifted-variable invariants; raises on violation."""
        X = self.X
        if not np.allclose(X, X.T, atol=1e-8):
            raise NotPsdError("X is not symmetric")
        eigs = np.linalg.eigvalsh((X + X.T) / 2.0)
        if eigs[0] < PSD_EIG_FLOOR:
            raise NotPsdError(f"eigenvalue {eigs[0]:.3e} below floor {PSD_EIG_FLOOR}")
        d = np.diag(X)
        if (d < -CONSTRAINT_TOL).any() or (d > 1 + CONSTRAINT_TOL).any():
            raise DomainError("diag(X) outside [0, 1]")
        tr = float(np.trace(X))
        if self.budget_mode == "eq":
            if abs(tr - budget) > CONSTRAINT_TOL:
                raise DomainError(f"trace {tr} != budget {budget}")
        elif tr > budget + CONSTRAINT_TOL:
            raise DomainError(f"trace {tr} exceeds budget {budget}")


@dataclass
class BisectionResult:
    eta: float
    state: RelaxedState
    iterations: int


def optimal_y(g: float, g_int: float, n_prime: float) -> float:
    """Closed-form maximizer of 2y*sqrt(g+g'+N') - y^2*(g'+N').

    Substituting it back recovers the ratio 1 + g/(g'+N') exactly.
    """
    den = g_int + n_prime
    if den <= 0:
        raise DomainError("interference plus noise must be > 0")
    return math.sqrt(g + den) / den


def stable_factorize(X: np.ndarray) -> np.ndarray:
    """Cholesky factor of X + jitter*I, jitter escalated from 1e-12 by decades.

    Raises NotPsdError when an eigenvalue sits below the -1e-8 floor.
    """
    X = np.asarray(X, dtype=float)
    Xs = (X + X.T) / 2.0
    eigs = np.linalg.eigvalsh(Xs)
    if eigs[0] < PSD_EIG_FLOOR:
        raise NotPsdError(f"eigenvalue {eigs[0]:.3e} below floor {PSD_EIG_FLOOR}")
    jitter = 1e-12
    eye = np.eye(Xs.shape[0])
    while jitter < 1.0:
        try:
            return np.linalg.cholesky(Xs + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NotPsdError("factorization failed at all jitter levels")


def top_g(v: np.ndarray, budget: int) -> np.ndarray:
    """Binary vector with ones at the `budget` largest entries (stable ties)."""
    order = np.argsort(-np.asarray(v, dtype=float), kind="stable")
    out = np.zeros(len(v), dtype=int)
    out[order[:budget]] = 1
    return out


def gaussian_randomize(
    x_bar: np.ndarray,
    X: np.ndarray,
    budget: int,
    feasible,
    objective,
    n_samples: int,
    seed: int,
) -> np.ndarray:
    """Extract a feasible binary selection from the relaxed (x_bar, X).

    When X is numerically rank-1 the rounded mean is returned directly if
    feasible. Otherwise candidates are the rounded mean plus `n_samples`
    top-G projections of draws from N(x_bar, X); infeasible candidates are
    dropped and the feasible one maximizing `objective` wins (first on ties).
    Deterministic given the seed.
    """
    x_bar = np.asarray(x_bar, dtype=float)
    eigs = np.linalg.eigvalsh((X + X.T) / 2.0)
    if eigs[0] < PSD_EIG_FLOOR:
        raise NotPsdError(f"eigenvalue {eigs[0]:.3e} below floor {PSD_EIG_FLOOR}")
    rounded_mean = top_g(x_bar, budget)
    # rank-1 with a binary diagonal is a lifted binary point: keep it outright
    lifted_binary = (
        eigs[-2] <= RANK1_RTOL * max(eigs[-1], 1e-30)
        and np.abs(x_bar - rounded_mean).max() <= 1e-3
    )
    if lifted_binary and feasible(rounded_mean):
        return rounded_mean

    factor = stable_factorize(X)
    rng = np.random.default_rng(seed)
    candidates = [rounded_mean]
    seen = {rounded_mean.tobytes()}
    for _ in range(n_samples):
        xi = x_bar + factor @ rng.standard_normal(len(x_bar))
        cand = top_g(xi, budget)
        key = cand.tobytes()
        if key not in seen:
            seen.add(key)
            candidates.append(cand)

    best, best_score = None, -math.inf
    n_feasible = 0
    for cand in candidates:
        if not feasible(cand):
            continue
        n_feasible += 1
        score = objective(cand)
        if score > best_score:
            best, best_score = cand, score
    if best is None:
        raise RandomizationFailureError(len(candidates))
    return best


def bisection(cfg: SolverConfig, feasibility) -> BisectionResult:
    """Shrink [eta_lo, eta_hi] by exact halving until the width is <= eps.

    `feasibility(eta)` returns a RelaxedState or None and must be monotone
    (feasible stays feasible as eta grows). Runs exactly
    ceil(log2((eta_hi - eta_lo)/eps)) iterations.
    """
    lo, hi = cfg.eta_lo, cfg.eta_hi
    if hi is None or hi <= lo:
        raise DomainError("bisection needs a bracket eta_lo < eta_hi")
    eps = cfg.eps_bisect if cfg.eps_bisect is not None else (hi - lo) / 256.0
    n_iter = max(1, math.ceil(math.log2((hi - lo) / eps)))
    best_eta, best_state = None, None
    for _ in range(n_iter):
        mid = (lo + hi) / 2.0
        state = feasibility(mid)
        if state is not None:
            hi = mid
            best_eta, best_state = mid, state
        else:
            lo = mid
    if best_state is None:
        state = feasibility(cfg.eta_hi)
        if state is None:
            raise NoFeasibleEtaError(f"infeasible even at eta_hi = {cfg.eta_hi:.6g}")
        best_eta, best_state = cfg.eta_hi, state
    return BisectionResult(eta=best_eta, state=best_state, iterations=n_iter)


@dataclass
class SubproblemSpec:
    """Everything a relaxed stage needs: geometry slices plus the fixed association.

    `assoc[t]` is the serving candidate site of test point t, or -1 for a
    legacy-served row. `y` holds the quadratic-transform variable of each
    served row (in the noise-normalized domain). Compiled parametric
    programs are cached and survive `with_association` updates.
    """

    gains: np.ndarray          # (T, S) raw channel gains
    nu: np.ndarray             # (T, S)
    F: np.ndarray              # (T, S, S) strictly upper triangular
    u: np.ndarray              # (T,) legacy PEB in meters (inf allowed)
    n_prime: float
    bandwidth: float
    budget: int
    assoc: np.ndarray          # (T,) int
    y: np.ndarray              # (T,) float
    zeta_b: float = math.inf   # meters, rate-stage PEB threshold
    zeta_r: float = 0.0        # bit/s, bound-stage rate threshold
    lte_rate: np.ndarray | None = None   # (T,) bit/s, for the legacy rate rows
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=float)
        self.nu = np.asarray(self.nu, dtype=float)
        self.F = np.asarray(self.F, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        self.assoc = np.asarray(self.assoc, dtype=int)
        self.y = np.asarray(self.y, dtype=float)
        self.gains_hat = self.gains / self.n_prime

    @property
    def n_test_points(self) -> int:
        return self.gains.shape[0]

    @property
    def n_sites(self) -> int:
        return self.gains.shape[1]

    def with_association(self, assoc, y, zeta_b=None, zeta_r=None) -> "SubproblemSpec":
        """Copy with a new association block, sharing the compiled programs."""
        return replace(
            self,
            assoc=np.asarray(assoc, dtype=int),
            y=np.asarray(y, dtype=float),
            zeta_b=self.zeta_b if zeta_b is None else zeta_b,
            zeta_r=self.zeta_r if zeta_r is None else zeta_r,
            cache=self.cache,
        )

    # -- derived data -------------------------------------------------------

    def served_rows(self) -> np.ndarray:
        return np.nonzero(self.assoc >= 0)[0]

    def diag_lower_bounds(self) -> np.ndarray:
        lower = np.zeros(self.n_sites)
        for t in self.served_rows():
            lower[self.assoc[t]] = 1.0
        return lower

    def peb_row_coeff(self) -> np.ndarray:
        """alpha_t in the normalized row alpha_t * nu_t.diag(X) <= Tr(F_t^T X).

        Served rows get 1/zeta_b^2; legacy rows get 0 provided the legacy
        bound already meets the threshold (otherwise the row is unsatisfiable
        for any selection and the spec is rejected).
        """
        if self.zeta_b <= 0:
            raise InfeasibleSubproblemError("zeta_b must be positive")
        alpha = np.zeros(self.n_test_points)
        served = self.assoc >= 0
        if math.isfinite(self.zeta_b):
            alpha[served] = 1.0 / self.zeta_b**2
            bad = ~served & (self.u > self.zeta_b)
            if bad.any():
                t = int(np.argmax(bad))
                raise InfeasibleSubproblemError(
                    f"legacy row {t} exceeds the PEB threshold "
                    f"(u={self.u[t]:.3g} m > zeta_b={self.zeta_b:.3g} m)"
                )
        return alpha

    def flat_F(self) -> np.ndarray:
        """(T, S*S) layout matching column-major vec(X)."""
        T, S = self.n_test_points, self.n_sites
        return self.F.transpose(0, 2, 1).reshape(T, S * S)

    # -- objective rows (rate stage) ----------------------------------------

    def row_objectives(self, d: np.ndarray) -> np.ndarray:
        """Transformed rate of each served row at diag values d, bit/s/Hz.

        Rows where the transformed argument is non-positive evaluate to -inf.
        """
        rows = self.served_rows()
        out = np.full(self.n_test_points, np.nan)
        if len(rows) == 0:
            return out
        ghat = self.gains_hat
        total = ghat @ d
        j = self.assoc[rows]
        g_serv = ghat[rows, j]
        gpp = total[rows] - g_serv * d[j]
        q = g_serv + gpp + 1.0
        p = gpp + 1.0
        y = self.y[rows]
        arg = 2.0 * y * np.sqrt(q) - y * y * p
        vals = np.where(arg > 0, np.log2(np.maximum(arg, 1e-300)), -np.inf)
        out[rows] = vals
        return out

    def min_objective(self, d: np.ndarray) -> float:
        rows = self.served_rows()
        if len(rows) == 0:
            return math.nan
        return float(self.row_objectives(d)[rows].min())

    def row_gradients(self, d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Linearization (offsets, gradients) of the served-row objectives at d.

        Rows without a 5G association get a zero gradient and an offset high
        enough never to bind the epigraph variable.
        """
        T, S = self.n_test_points, self.n_sites
        W = np.zeros((T, S))
        offs = np.zeros(T)
        rows = self.served_rows()
        if len(rows) == 0:
            return offs, W
        ghat = self.gains_hat
        total = ghat @ d
        for t in rows:
            jj = self.assoc[t]
            g_serv = ghat[t, jj]
            gpp = total[t] - g_serv * d[jj]
            q = g_serv + gpp + 1.0
            p = gpp + 1.0
            y = self.y[t]
            arg = 2.0 * y * math.sqrt(q) - y * y * p
            if arg <= 0:
                raise DomainError("linearization point has non-positive argument")
            coeff = (y / math.sqrt(q) - y * y) / (arg * _LN2)
            W[t] = ghat[t] * coeff
            W[t, jj] = 0.0
            offs[t] = math.log2(arg) - W[t] @ d
        inert = offs[rows].max() + np.abs(W).sum() + 10.0
        mask = np.ones(T, dtype=bool)
        mask[rows] = False
        offs[mask] = inert
        return offs, W

    # -- constraint checks on explicit points --------------------------------

    def point_feasible(self, X: np.ndarray, budget_mode: str, rate_rows: bool = False) -> bool:
        d = np.diag(X)
        tol = 10 * CONSTRAINT_TOL
        if (d < self.diag_lower_bounds() - tol).any() or (d > 1 + tol).any():
            return False
        tr = float(np.trace(X))
        if budget_mode == "eq" and abs(tr - self.budget) > tol:
            return False
        if budget_mode == "ineq" and tr > self.budget + tol:
            return False
        alpha = self.peb_row_coeff()
        trf = self.flat_F() @ X.T.reshape(-1)
        lhs = alpha * (self.nu @ d)
        scale = np.maximum(self.flat_F().sum(axis=1), 1e-30)
        if ((lhs - trf) / scale > tol).any():
            return False
        if rate_rows:
            k_rate = self.rate_coeff()
            if k_rate is None:
                return False
            if k_rate > 0:
                ghat = self.gains_hat
                total = ghat @ d
                for t in self.served_rows():
                    jj = self.assoc[t]
                    gpp = total[t] - ghat[t, jj] * d[jj]
                    if k_rate * (gpp + 1.0) > ghat[t, jj] * (1 + tol):
                        return False
        return True

    def rate_coeff(self) -> float | None:
        """SINR floor 2^(zeta_r/W) - 1, or None when unattainable."""
        expo = self.zeta_r / self.bandwidth
        if expo > 40:
            return None
        return 2.0**expo - 1.0


def _project_psd(X: np.ndarray) -> np.ndarray:
    Xs = (X + X.T) / 2.0
    eigs, vecs = np.linalg.eigh(Xs)
    if eigs[0] >= PSD_EIG_FLOOR / 10:
        return Xs
    return (vecs * np.clip(eigs, 0.0, None)) @ vecs.T


def _initial_matrix(spec: SubproblemSpec, x_init: np.ndarray | None) -> np.ndarray:
    """Rank-1 starting point: the given selection or pinned sites plus spread mass."""
    if x_init is not None:
        x0 = np.asarray(x_init, dtype=float)
        return np.outer(x0, x0)
    d0 = spec.diag_lower_bounds().copy()
    spare = spec.budget - d0.sum()
    if spare > 0:
        room = 1.0 - d0
        d0 += room * (spare / max(room.sum(), 1e-12))
    x0 = np.sqrt(np.clip(d0, 0.0, 1.0))
    return np.outer(x0, x0)


def _solve_compiled(problem: cp.Problem) -> str:
    last_err = None
    for solver in _SOLVER_ORDER:
        try:
            problem.solve(solver=solver)
            return problem.status
        except cp.error.SolverError as err:  # pragma: no cover - backend specific
            last_err = err
    raise InfeasibleSubproblemError(f"all solvers failed: {last_err}")


def _maximin_programs(spec: SubproblemSpec, mode: str) -> dict:
    key = ("maximin", mode, spec.n_test_points, spec.n_sites, spec.budget)
    if key in spec.cache:
        return spec.cache[key]
    T, S = spec.n_test_points, spec.n_sites
    X = cp.Variable((S, S), symmetric=True)
    s = cp.Variable()
    d = cp.diag(X)
    lower = cp.Parameter(S, nonneg=True)
    alpha = cp.Parameter(T, nonneg=True)
    W = cp.Parameter((T, S))
    offs = cp.Parameter(T)
    trf = spec.flat_F() @ cp.vec(X, order="F")
    constraints = [
        X >> 0,
        d >= lower,
        d <= 1,
        cp.multiply(alpha, spec.nu @ d) <= trf,
        s <= offs + W @ d,
    ]
    if mode == "eq":
        constraints.append(cp.trace(X) == spec.budget)
    else:
        constraints.append(cp.trace(X) <= spec.budget)
    problem = cp.Problem(cp.Maximize(s), constraints)
    spec.cache[key] = dict(problem=problem, X=X, lower=lower, alpha=alpha, W=W, offs=offs)
    return spec.cache[key]


def _feasibility_programs(spec: SubproblemSpec, mode: str) -> dict:
    key = ("feas", mode, spec.n_test_points, spec.n_sites, spec.budget)
    if key in spec.cache:
        return spec.cache[key]
    T, S = spec.n_test_points, spec.n_sites
    X = cp.Variable((S, S), symmetric=True)
    sig = cp.Variable()
    d = cp.diag(X)
    lower = cp.Parameter(S, nonneg=True)
    alpha_scaled = cp.Parameter(T, nonneg=True)
    C = cp.Parameter((T, S))
    k_off = cp.Parameter(T)
    inv_scale = 1.0 / np.maximum(spec.flat_F().sum(axis=1), 1e-30)
    trf = spec.flat_F() @ cp.vec(X, order="F")
    constraints = [
        X >> 0,
        d >= lower,
        d <= 1,
        cp.multiply(alpha_scaled, spec.nu @ d) - cp.multiply(inv_scale, trf) <= sig,
        C @ d + k_off <= sig,
    ]
    if mode == "eq":
        constraints.append(cp.trace(X) == spec.budget)
    else:
        constraints.append(cp.trace(X) <= spec.budget)
    problem = cp.Problem(cp.Minimize(sig), constraints)
    spec.cache[key] = dict(
        problem=problem, X=X, sig=sig, lower=lower,
        alpha_scaled=alpha_scaled, C=C, k_off=k_off,
    )
    return spec.cache[key]


def _centering_programs(spec: SubproblemSpec, mode: str) -> dict:
    key = ("center", mode, spec.n_test_points, spec.n_sites, spec.budget)
    if key in spec.cache:
        return spec.cache[key]
    T, S = spec.n_test_points, spec.n_sites
    X = cp.Variable((S, S), symmetric=True)
    d = cp.diag(X)
    lower = cp.Parameter(S, nonneg=True)
    alpha_scaled = cp.Parameter(T, nonneg=True)
    C = cp.Parameter((T, S))
    k_off = cp.Parameter(T)
    inv_scale = 1.0 / np.maximum(spec.flat_F().sum(axis=1), 1e-30)
    trf = spec.flat_F() @ cp.vec(X, order="F")
    constraints = [
        X >> 0,
        d >= lower,
        d <= 1,
        cp.multiply(alpha_scaled, spec.nu @ d) - cp.multiply(inv_scale, trf) <= CONSTRAINT_TOL,
        C @ d + k_off <= CONSTRAINT_TOL,
    ]
    if mode == "eq":
        constraints.append(cp.trace(X) == spec.budget)
    else:
        constraints.append(cp.trace(X) <= spec.budget)
    problem = cp.Problem(cp.Minimize(cp.sum_squares(X)), constraints)
    spec.cache[key] = dict(
        problem=problem, X=X, lower=lower,
        alpha_scaled=alpha_scaled, C=C, k_off=k_off,
    )
    return spec.cache[key]


def _golden_max(f, iters: int = 28) -> tuple[float, float]:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = 0.0, 1.0
    c = b - invphi * (b - a)
    dd = a + invphi * (b - a)
    fc, fd = f(c), f(dd)
    for _ in range(iters):
        if fc >= fd:
            b, dd, fd = dd, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, dd, fd
            dd = a + invphi * (b - a)
            fd = f(dd)
    mid = (a + b) / 2.0
    return mid, f(mid)


def solve_maximin_sdr(
    spec: SubproblemSpec,
    cfg: SolverConfig,
    x_init: np.ndarray | None = None,
    X_init: np.ndarray | None = None,
) -> RelaxedState:
    """Maximize the worst transformed rate over the lifted selection.

    Linearizes the served-row log terms at the incumbent diagonal, solves the
    resulting linear SDP, then line-searches the true concave objective along
    the segment to the new point; repeats until the relative improvement
    falls below tol_inner. Falls back from trace == G to trace <= G when the
    equality version is infeasible.
    """
    rows = spec.served_rows()
    if len(rows) == 0:
        raise DomainError("rate stage needs at least one 5G-served row")
    if (spec.y[rows] <= 0).any():
        raise DomainError("auxiliary variables must be positive")
    lower = spec.diag_lower_bounds()
    if lower.sum() > spec.budget + CONSTRAINT_TOL:
        raise InfeasibleSubproblemError(
            f"association pins {int(lower.sum())} sites, budget is {spec.budget}"
        )
    alpha = spec.peb_row_coeff()

    X0 = X_init if X_init is not None else _initial_matrix(spec, x_init)
    X0 = _project_psd(np.asarray(X0, dtype=float))
    mode = "eq"
    converged = False
    n_pass = 0
    for n_pass in range(1, MAX_LINEARIZE_PASSES + 1):
        try:
            offs, W = spec.row_gradients(np.clip(np.diag(X0), 0, 1))
        except DomainError:
            # the incumbent drifted where a log argument closed; linearize at
            # the pinned sites only (interference there is minimal)
            offs, W = spec.row_gradients(lower)
        prog = _maximin_programs(spec, mode)
        prog["lower"].value = lower
        prog["alpha"].value = alpha
        prog["W"].value = W
        prog["offs"].value = offs
        status = _solve_compiled(prog["problem"])
        if status in ("infeasible", "infeasible_inaccurate"):
            if mode == "eq":
                mode = "ineq"
                prog = _maximin_programs(spec, mode)
                prog["lower"].value = lower
                prog["alpha"].value = alpha
                prog["W"].value = W
                prog["offs"].value = offs
                status = _solve_compiled(prog["problem"])
            if status in ("infeasible", "infeasible_inaccurate"):
                raise InfeasibleSubproblemError(
                    f"rate-stage SDP infeasible (zeta_b={spec.zeta_b:.4g} m)"
                )
        if prog["X"].value is None:
            raise InfeasibleSubproblemError(f"rate-stage SDP returned no point ({status})")
        X1 = _project_psd(prog["X"].value)

        x0_ok = spec.point_feasible(X0, mode)
        f0 = spec.min_objective(np.diag(X0)) if x0_ok else -math.inf
        if not x0_ok:
            X_new, f_new = X1, spec.min_objective(np.diag(X1))
        else:
            def along(theta):
                d_theta = (1 - theta) * np.diag(X0) + theta * np.diag(X1)
                return spec.min_objective(d_theta)

            theta_star, f_star = _golden_max(along)
            f_full = along(1.0)
            if f_full >= f_star:
                theta_star, f_star = 1.0, f_full
            X_new = (1 - theta_star) * X0 + theta_star * X1
            f_new = f_star
        if math.isfinite(f0) and f_new <= f0 + cfg.tol_inner * max(1.0, abs(f0)):
            if f_new > f0:
                X0 = X_new
            converged = True
            break
        X0 = X_new

    d_final = np.diag(X0)
    obj = spec.min_objective(d_final)
    T, S = spec.n_test_points, spec.n_sites
    A_relax = np.zeros((T, S))
    y_aux = np.zeros((T, S))
    for t in rows:
        A_relax[t, spec.assoc[t]] = 1.0
        y_aux[t, spec.assoc[t]] = spec.y[t]
    state = RelaxedState(
        X=X0,
        x_bar=np.clip(d_final, 0.0, 1.0),
        A_relax=A_relax,
        y_aux=y_aux,
        objective=obj * spec.bandwidth if math.isfinite(obj) else None,
        budget_mode=mode,
        passes=n_pass,
        converged=converged,
    )
    state.validate(spec.budget)
    return state


def _feasibility_param_values(eta: float, spec: SubproblemSpec):
    """Parameter block of the bound-stage rows, or None when trivially infeasible."""
    T, S = spec.n_test_points, spec.n_sites
    served = spec.served_rows()
    lower = spec.diag_lower_bounds()
    if lower.sum() > spec.budget + CONSTRAINT_TOL:
        return None
    k_rate = spec.rate_coeff()
    if k_rate is None:
        return None
    if spec.lte_rate is not None:
        legacy = spec.assoc < 0
        if (legacy & (np.asarray(spec.lte_rate) < spec.zeta_r - 1e-9)).any():
            return None
    if len(served) > 0 and eta <= 0:
        return None

    alpha_scaled = np.zeros(T)
    scale = np.maximum(spec.flat_F().sum(axis=1), 1e-30)
    if len(served) > 0:
        alpha_scaled[served] = 1.0 / (eta * scale[served])

    C = np.zeros((T, S))
    k_off = np.full(T, -1.0)
    if k_rate > 0:
        ghat = spec.gains_hat
        for t in served:
            jj = spec.assoc[t]
            row = ghat[t].copy()
            row[jj] = 0.0
            C[t] = k_rate * row / ghat[t, jj]
            k_off[t] = k_rate / ghat[t, jj] - 1.0
    return lower, alpha_scaled, C, k_off


def _state_from_matrix(spec: SubproblemSpec, X_val: np.ndarray, mode: str) -> RelaxedState:
    T, S = spec.n_test_points, spec.n_sites
    X = _project_psd(X_val)
    y_aux = np.zeros((T, S))
    A_relax = np.zeros((T, S))
    for t in spec.served_rows():
        A_relax[t, spec.assoc[t]] = 1.0
        y_aux[t, spec.assoc[t]] = spec.y[t] if len(spec.y) == T else 0.0
    state = RelaxedState(
        X=X,
        x_bar=np.clip(np.diag(X), 0.0, 1.0),
        A_relax=A_relax,
        y_aux=y_aux,
        objective=None,
        budget_mode=mode,
    )
    state.validate(spec.budget)
    return state


def solve_feasibility_sdr(
    eta: float,
    spec: SubproblemSpec,
    cfg: SolverConfig,
    center: bool = False,
) -> RelaxedState | None:
    """Phase-1 feasibility of the bound stage at threshold eta (squared PEB).

    Returns a RelaxedState when the scaled worst violation is within
    tolerance, None otherwise. Solver failures count as infeasible, which is
    conservative inside the bisection. Tries trace == G first, then <= G.
    With `center` the feasible point is re-solved minimizing ||X||_F^2, which
    spreads the covariance used by the randomization instead of returning a
    low-rank vertex.
    """
    params = _feasibility_param_values(eta, spec)
    if params is None:
        return None
    lower, alpha_scaled, C, k_off = params

    for mode in ("eq", "ineq"):
        prog = _feasibility_programs(spec, mode)
        prog["lower"].value = lower
        prog["alpha_scaled"].value = alpha_scaled
        prog["C"].value = C
        prog["k_off"].value = k_off
        try:
            status = _solve_compiled(prog["problem"])
        except InfeasibleSubproblemError:
            log.warning("feasibility solve failed at eta=%.4g; treating as infeasible", eta)
            return None
        if prog["X"].value is None or status not in ("optimal", "optimal_inaccurate"):
            continue
        sig = float(prog["sig"].value)
        if sig <= CONSTRAINT_TOL:
            X_val = prog["X"].value
            if center:
                cprog = _centering_programs(spec, mode)
                cprog["lower"].value = lower
                cprog["alpha_scaled"].value = alpha_scaled
                cprog["C"].value = C
                cprog["k_off"].value = k_off
                try:
                    cstatus = _solve_compiled(cprog["problem"])
                    if cprog["X"].value is not None and cstatus in (
                        "optimal", "optimal_inaccurate",
                    ):
                        X_val = cprog["X"].value
                except InfeasibleSubproblemError:
                    pass
            return _state_from_matrix(spec, X_val, mode)
    return None
