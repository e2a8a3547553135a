"""Exception types shared across the package."""


class ShapeError(ValueError):
    """An input's dimensions do not match what the operation requires."""


class DegenerateTriangleError(ValueError):
    """A triangle's area is below the degeneracy threshold."""


class ConsistencyError(RuntimeError):
    """Paired forward/backward state (or stats) does not match its inputs."""


class LoadError(RuntimeError):
    """A rig / dataset / checkpoint file failed validation on load."""


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss; carries the iteration and a dump path."""

    def __init__(self, message, iteration=None, dump_path=None):
        super().__init__(message)
        self.iteration = iteration
        self.dump_path = dump_path
