"""Light-field disparity estimation with sub-pixel cost volumes and an
uncertainty-aware focal loss."""

from .costvol import (
    AggregatorParams,
    CostKind,
    CostVolume,
    DisparityGrid,
    aggregate_box,
    aggregate_learned,
    aggregate_learned_backward,
    build_cost_volume,
)
from .distrib import (
    DisparityDistribution,
    UncertaintyMap,
    cost_to_distribution,
    discretize_gt,
    js_divergence,
    kl_divergence,
    regress_disparity,
    uncertainty_map,
)
from .lf_io import CameraParams, DisparityMap, LightField, depth_from_disparity, load_scene
from .loss import LossConfig, LossKind, LossReport, dist_loss, l1_loss, loss_backward, mse_loss, uafl
from .metrics import MetricConfig, badpix, error_map, mse100
from .pipeline import Aggregation, estimate
from .shift import Boundary, Interpolation, ShiftSpec, shift_stack, shift_view
from .synth import SceneKind, SceneSpec, Texture, render

__version__ = "0.1.0"
