"""Exception hierarchy shared by the library and the CLI exit-code mapping."""

from __future__ import annotations


class SpecMetricError(Exception):
    pass


class DataError(SpecMetricError):
    """Bad or unreadable input data (files, manifests, shapes)."""


class ShapeMismatchError(DataError, ValueError):
    def __init__(self, shape_a, shape_b):
        self.shapes = (tuple(shape_a), tuple(shape_b))
        super().__init__(f"shape mismatch: {tuple(shape_a)} vs {tuple(shape_b)}")


class NumericalError(SpecMetricError):
    """Optimisation diverged or a statistic is undefined."""


class DivergenceError(NumericalError):
    def __init__(self, epoch: int, stage: int | None = None, detail: str = "non-finite loss"):
        self.epoch = epoch
        self.stage = stage
        where = f"epoch {epoch}" + ("" if stage is None else f", stage {stage}")
        super().__init__(f"{detail} at {where}")


class UndefinedCorrelationError(NumericalError, ValueError):
    pass
