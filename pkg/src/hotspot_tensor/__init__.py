"""Smooth-trend / sparse-hot-spot tensor decomposition with CUSUM monitoring."""

__version__ = "0.1.0"

from .exceptions import (
    CalibrationError,
    ConditioningError,
    DataError,
    DivergenceError,
    IdentifiabilityError,
    ParameterError,
    ShapeError,
)
from .tensor_core import fold, mode_n_product, tensorize, tucker_apply, unfold, vectorize
from .operators import (
    BasisSet,
    DifferenceSet,
    ProjectionFactors,
    circular_difference,
    forward_difference_anchored,
    gaussian_kernel_basis,
    projection_factors,
    select_bandwidth,
    spectral_bound,
)
from .estimator import FistaConfig, HotspotDecomposition, ModelFit, fit, prox_combined, prox_fused
from .monitor import (
    CusumConfig,
    CusumState,
    HotspotMonitor,
    LambdaGrid,
    Phase1Stats,
    Pipeline,
    calibrate_limit,
    cusum_update,
    monitor_run,
    phase1_calibrate,
    positive_part_statistic,
    standardized_max,
)
from .localizer import HotspotReport, localize
from .simlab import SimConfig, benchmark, generate, metrics
