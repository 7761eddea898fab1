"""Exception hierarchy shared by every solver stage."""


class InviscidLimitError(Exception):
    """Base class for all package errors."""


class GridError(InviscidLimitError, ValueError):
    """Invalid grid parameters or a grid too small for an operator."""


class AxisError(InviscidLimitError, ValueError):
    """Tangential axis outside ``1..d``."""


class ShapeMismatch(InviscidLimitError, ValueError):
    """Fields or traces defined on incompatible grids."""


class DecayViolation(InviscidLimitError):
    """A field that must decay is too large at the top of its column."""

    def __init__(self, field, ratio, tol):
        self.field = field
        self.ratio = ratio
        self.tol = tol
        super().__init__(
            f"field '{field}' does not decay at the top boundary: "
            f"|f(top)|/max|f| = {ratio:.3e} > {tol:.1e}"
        )


class CompatibilityError(InviscidLimitError):
    """Mean-mode data incompatible with a Neumann-type problem."""


class DivergenceError(InviscidLimitError):
    """Input that must be divergence-free is not."""


class CFLViolation(InviscidLimitError):
    """Explicit transport step exceeds the stability bound."""


class SupportErosion(InviscidLimitError):
    """Outer vorticity reached the wall guard band."""


class WindowError(InviscidLimitError):
    """Requested time lies outside a stored trajectory."""


class BlowUpDetected(InviscidLimitError):
    """Layer gradients exceeded the blow-up cap; the window ends here."""

    def __init__(self, t, value, cap):
        self.t = t
        super().__init__(f"max|dz u_p| = {value:.3e} exceeds cap {cap:.3e} at t={t:.4f}")


class ResolutionError(InviscidLimitError):
    """Wall-normal grid does not resolve the viscous layer."""

    def __init__(self, eps, count, required, ny_estimate):
        self.eps = eps
        self.count = count
        self.required = required
        self.ny_estimate = ny_estimate
        super().__init__(
            f"only {count} grid points in y <= 3*eps (eps={eps}); need {required}. "
            f"Try ny >= {ny_estimate}."
        )


class OverflowGuard(InviscidLimitError):
    """Analytic weight amplification exceeds the overflow guard."""


class ConfigError(InviscidLimitError, ValueError):
    """Invalid study configuration."""


class StageRefusal(InviscidLimitError):
    """A pipeline stage refused to run; carries the stage name and a hint."""

    def __init__(self, stage, cause, hint=""):
        self.stage = stage
        self.cause = cause
        self.hint = hint
        msg = f"stage '{stage}' failed: {cause}"
        if hint:
            msg += f" (hint: {hint})"
        super().__init__(msg)


class SplitDefect(InviscidLimitError):
    """Vorticity split no longer sums to the error vorticity."""


class MissingSplit(InviscidLimitError, ValueError):
    """Vorticity energies were requested without the vorticity split."""
