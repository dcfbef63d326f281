"""Exception types shared across the planner."""


class DomainError(ValueError):
    """An argument is outside the mathematical domain of an operation."""


class ValidationError(ValueError):
    """A topology, scenario or file field violates its invariants."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ConstraintViolationError(ValueError):
    """A deployment/association pair violates a named problem constraint."""

    def __init__(self, constraint: str, message: str):
        self.constraint = constraint
        super().__init__(f"constraint '{constraint}' violated: {message}")


class UnboundedPebError(RuntimeError):
    """Anchor geometry cannot bound the position error (singular information)."""


class QuadratureError(RuntimeError):
    """The weight integral did not converge to the requested tolerance."""

    def __init__(self, message: str, achieved_tol: float):
        self.achieved_tol = achieved_tol
        super().__init__(f"{message} (achieved tolerance {achieved_tol:.3e})")


class NotPsdError(ValueError):
    """Matrix has an eigenvalue below the allowed floor."""


class InfeasibleSubproblemError(RuntimeError):
    """A relaxed subproblem admits no feasible point."""


class NoFeasibleEtaError(RuntimeError):
    """Feasibility fails even at the top of the bisection bracket."""


class RandomizationFailureError(RuntimeError):
    """No randomized candidate satisfied the feasibility predicate."""

    def __init__(self, n_samples: int):
        self.n_samples = n_samples
        super().__init__(f"all {n_samples} randomized candidates were infeasible")


class AssociationInfeasibleError(RuntimeError):
    """Some test point has no association satisfying its row constraint."""

    def __init__(self, test_point: int, mode: str, detail: str = ""):
        self.test_point = test_point
        self.mode = mode
        msg = f"test point {test_point} has no feasible {mode} association"
        super().__init__(msg + (f": {detail}" if detail else ""))


class ThresholdInfeasibleError(RuntimeError):
    """A routine found no deployment meeting its threshold.

    Carries the tightest threshold estimated to be satisfiable, in the
    native unit of the routine (meters for the PEB threshold, bit/s for
    the rate threshold).
    """

    def __init__(self, message: str, tightest: float):
        self.tightest = tightest
        super().__init__(f"{message} (tightest satisfiable estimate: {tightest:.6g})")


class OracleBudgetError(RuntimeError):
    """Exhaustive enumeration would exceed the configured evaluation budget."""

    def __init__(self, required: int, budget: int):
        self.required = required
        self.budget = budget
        super().__init__(
            f"exhaustive search needs {required} row evaluations, budget is {budget}"
        )
