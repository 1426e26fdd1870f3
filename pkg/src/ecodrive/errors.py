"""Exception hierarchy shared by all modules."""


class EcoDriveError(Exception):
    """Base class for every error raised by this package."""


class SchemaError(EcoDriveError, ValueError):
    """A config or data file does not parse against its documented schema."""

    def __init__(self, message, path=None, line=None, field=None):
        self.path = path
        self.line = line
        self.field = field
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class ValidationError(EcoDriveError, ValueError):
    """A parsed object violates a domain invariant."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ContractViolation(EcoDriveError, ValueError):
    """A caller broke an operation's precondition (shape, length, range)."""


class InfeasibleTransition(EcoDriveError):
    """The vehicle cannot traverse the spatial step with the given control."""


class PowerLimitError(InfeasibleTransition):
    """Battery power demand exceeds what the equivalent circuit can deliver."""


class SolverInfeasible(EcoDriveError):
    """No admissible control sequence exists from the queried state.

    ``binding`` maps a constraint label to the number of candidate controls
    it eliminated.
    """

    def __init__(self, message, stage=None, state=None, binding=None):
        self.stage = stage
        self.state = state
        self.binding = dict(binding or {})
        detail = ""
        if self.binding:
            detail = " (binding: " + ", ".join(
                f"{k}={v}" for k, v in sorted(self.binding.items())) + ")"
        super().__init__(message + detail)


class TrainingDivergence(EcoDriveError):
    """Training loss became non-finite."""

    def __init__(self, epoch):
        self.epoch = epoch
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch}")


class SafetyViolation(EcoDriveError):
    """Closed-loop run produced a collision or an unsafe gap."""
