"""Typed exceptions raised across the library."""


class FlowFilterError(Exception):
    """Base class for all library errors."""


class NonFiniteState(FlowFilterError):
    """A trajectory or particle state became NaN/inf."""

    def __init__(self, step: int, detail: str = ""):
        self.step = step
        super().__init__(f"non-finite state at step {step}" + (f": {detail}" if detail else ""))


class OutOfRange(FlowFilterError):
    pass


class FilterAborted(FlowFilterError):
    """A filter run failed mid-trajectory; carries the cause and the moments
    recorded up to the failing mesh point."""

    def __init__(self, step: int, cause: Exception, partial=None):
        self.step = step
        self.cause = cause
        self.partial = partial
        super().__init__(f"aborted at fine step {step}: "
                         f"{type(cause).__name__}: {cause}")


class ConditionViolation(FlowFilterError):
    """A log-concave OU condition failed on the sample cloud."""

    def __init__(self, condition: str, witness, margin: float):
        self.condition = condition
        self.witness = witness
        self.margin = margin
        super().__init__(f"condition {condition} violated (margin {margin:.3e}) at {witness}")


class DegenerateCloud(FlowFilterError):
    pass


class SingularCovariance(FlowFilterError):
    pass


class UnresolvedTail(FlowFilterError):
    """Cumulative right-hand-side integral does not vanish: grid too narrow."""


class IllConditioned(FlowFilterError):
    def __init__(self, cond: float):
        self.cond = cond
        super().__init__(f"stiffness matrix condition number {cond:.3e} exceeds 1e12")


class DimensionError(FlowFilterError):
    pass


class ModelMismatch(FlowFilterError):
    pass


class CFLViolation(FlowFilterError):
    def __init__(self, dt: float, bound: float):
        self.dt = dt
        self.bound = bound
        super().__init__(f"explicit step dt={dt:.3e} exceeds stability bound {bound:.3e}")


class GridMismatch(FlowFilterError):
    pass


class CovarianceBlowup(FlowFilterError):
    pass


class NonPositiveParameter(FlowFilterError):
    pass


class NonPositiveDelta(FlowFilterError):
    pass


class NonPositiveDensity(FlowFilterError):
    pass


class NotLogConcave(FlowFilterError):
    def __init__(self, witness_x: float, value: float):
        self.witness_x = witness_x
        self.value = value
        super().__init__(f"(-log rho)'' = {value:.3e} <= 0 at x = {witness_x:.6g}")


class ConfigError(FlowFilterError):
    """Invalid experiment configuration; carries the offending field path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config.{field}: {message}")


class NonNestedMeshes(FlowFilterError):
    pass
