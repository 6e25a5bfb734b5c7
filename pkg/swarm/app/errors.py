class SwarmError(Exception):
    """Base class for every error raised by the simulator."""


class UnknownEntityError(SwarmError, KeyError):
    """Lookup of a node, hole, box or agent id that does not exist."""

    def __init__(self, kind, entity_id):
        self.kind = kind
        self.entity_id = entity_id
        super().__init__(f"unknown {kind} id: {entity_id}")

    def __str__(self):
        return self.args[0]


class BoxStateError(SwarmError):
    pass


class PlacementError(SwarmError, ValueError):
    pass


class ScenarioValidationError(SwarmError, ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        summary = "; ".join(self.violations)
        super().__init__(f"scenario has {len(self.violations)} problem(s): {summary}")


class NumericError(SwarmError, ArithmeticError):
    pass


class ConfigurationError(SwarmError):
    pass


class TrainingDivergedError(SwarmError):
    def __init__(self, episode, gradient_step, loss):
        self.episode = episode
        self.gradient_step = gradient_step
        self.loss = loss
        super().__init__(
            f"training diverged in episode {episode} at gradient step {gradient_step} "
            f"(loss={loss})"
        )


class ArtifactError(SwarmError):
    """A checkpoint, forest or dataset file is missing or unreadable."""
