"""Exception hierarchy shared by all modules."""


class SacdropError(Exception):
    """Base class; ``code`` is the machine-readable identifier used by the CLI."""

    code = "error"

    def to_dict(self):
        return {"error": self.code, "message": str(self)}


class NonStarShaped(SacdropError):
    code = "non_star_shaped"


class ResolutionTooLow(SacdropError):
    code = "resolution_too_low"


class GridMismatch(SacdropError):
    code = "grid_mismatch"


class EigensolveFailure(SacdropError):
    code = "eigensolve_failure"


class ModeCountExceedsGrid(SacdropError):
    code = "mode_count_exceeds_grid"


class CalibrationFailure(SacdropError):
    code = "calibration_failure"


class ParamOutOfRange(SacdropError):
    code = "param_out_of_range"


class StencilFailure(SacdropError):
    code = "stencil_failure"


class ProjectionDiverged(SacdropError):
    code = "projection_diverged"


class OutsideNeighborhood(SacdropError):
    code = "outside_neighborhood"


class SingularA(SacdropError):
    code = "singular_A"


class LinearSolveFailure(SacdropError):
    code = "linear_solve_failure"


class StepTooLarge(SacdropError):
    code = "step_too_large"


class InsufficientPoints(SacdropError):
    code = "insufficient_points"


class ParseError(SacdropError):
    code = "parse_error"

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")

    def to_dict(self):
        d = super().to_dict()
        d.update(line=self.line, field=self.field)
        return d


class ValidationError(SacdropError):
    code = "validation_error"

    def __init__(self, violations):
        # violations: list of (constraint_id, message)
        self.violations = list(violations)
        text = "; ".join(f"[{cid}] {msg}" for cid, msg in self.violations)
        super().__init__(text)

    @property
    def constraint_ids(self):
        return [cid for cid, _ in self.violations]

    def to_dict(self):
        d = super().to_dict()
        d["violations"] = [{"constraint": c, "message": m} for c, m in self.violations]
        return d
