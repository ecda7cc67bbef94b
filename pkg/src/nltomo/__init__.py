"""Non-local TomoSAR: scatterer elevations from very small bistatic interferogram stacks."""

__version__ = "0.1.0"

from .geometry import (AcquisitionGeometry, ElevationGrid, MUNICH_GEOMETRY, SensingMatrix,  # noqa: E402
                       build_sensing_matrix, rayleigh_resolution, wavenumber)
from .crlb import crlb_double, crlb_single  # noqa: E402
from .nlfilter import FilterParams, InterferometricStack, filter_stack  # noqa: E402
from .inversion import cs_invert, svd_invert  # noqa: E402
from .modelsel import select_order  # noqa: E402
from .fusion import FusionParams, m_estimate  # noqa: E402
from .pipeline import PipelineParams, run_pipeline  # noqa: E402

__all__ = [
    "AcquisitionGeometry", "ElevationGrid", "MUNICH_GEOMETRY", "SensingMatrix", "build_sensing_matrix",
    "rayleigh_resolution", "wavenumber", "crlb_single", "crlb_double", "FilterParams",
    "InterferometricStack", "filter_stack", "svd_invert", "cs_invert", "select_order", "FusionParams",
    "m_estimate", "PipelineParams", "run_pipeline",
]
