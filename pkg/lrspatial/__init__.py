# Set up __init__.py so that users can do from lrspatial import fit, bootstrap, etc.

from lrspatial.bootstrap import bootstrap
from lrspatial.effects import estimate_effects
from lrspatial.eigenbasis import EigenBasis, top_l_eigenpairs
from lrspatial.logging_utils import configure_logging
from lrspatial.model import DesignData, ModelKind, ThetaPoint
from lrspatial.oracle import fit_fullrank, moran_z
from lrspatial.reml import FitOptions, FittedModel, fit
from lrspatial.weights import SpatialWeights, build_delaunay_adjacency, load_edge_list

__all__ = [
    "DesignData",
    "EigenBasis",
    "FitOptions",
    "FittedModel",
    "ModelKind",
    "SpatialWeights",
    "ThetaPoint",
    "bootstrap",
    "build_delaunay_adjacency",
    "configure_logging",
    "estimate_effects",
    "fit",
    "fit_fullrank",
    "load_edge_list",
    "moran_z",
    "top_l_eigenpairs",
]
