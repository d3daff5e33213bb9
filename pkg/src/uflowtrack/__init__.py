"""Uncertainty-aware flow-mask tracking with a synthetic benchmark harness."""

from .flowmask import (
    B_MIN,
    FlowField,
    KernelConfig,
    correspondence_kernel,
    laplace_density,
    propagate_mask,
    propagate_mask_oracle,
)
from .geometry import AABox, RotBox, alb_of_mask, iou_axis_aligned, mbr_of_mask, polygon_overlap
from .grids import BinaryMask, ProbMask, ScalarGrid, read_ufg, threshold_mask, write_ufg
from .scoring import (
    FlowNormalizer,
    Proposal,
    ScoreConfig,
    compute_normalizer,
    cosine_penalty,
    flow_score,
    motion_score,
    normalized_flow_score,
    select_best,
    size_penalty,
    total_score,
)
from .tracker import Tracker, TrackerState, VariantConfig, flow_rejection_filter
from .evaluate import ProtocolConfig, SequenceResult, ablation_report, eao, random_search, run_protocol
from .synth import (
    NoiseModel,
    ObjectSpec,
    SceneSpec,
    corrupt_flow,
    generate_proposals,
    render_scene,
    synth_appearance,
)

__version__ = "0.1.0"
