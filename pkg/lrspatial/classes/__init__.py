from lrspatial.classes.history import FitCall, OptimizerStart

__all__ = ["FitCall", "OptimizerStart"]
