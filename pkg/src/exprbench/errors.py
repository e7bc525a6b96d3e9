"""Exception hierarchy; every error the package raises on bad input derives from ExprbenchError."""


class ExprbenchError(Exception):
    pass


class ShapeError(ExprbenchError, ValueError):
    pass


class DataError(ExprbenchError, ValueError):
    pass


class ArchitectureError(ExprbenchError, ValueError):
    pass


class CheckpointError(ExprbenchError):
    pass


class TrainingError(ExprbenchError):
    pass


class PlanError(ExprbenchError, ValueError):
    pass
