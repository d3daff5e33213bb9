"""Per-frame tracking state machine.

Each step: build the variant's effective flow field, propagate the stored
foreground probabilities into the current frame, score every proposal,
select the winner, fetch its predicted segmentation mask, and emit the
minimum bounding rectangle of the thresholded mask as the frame output.

Variants
    full            flow field as given (means and per-pixel scales)
    no_flow         zero-mean field with a fixed scale (identity flow)
    no_uncertainty  given means, fixed scale
    segmask_alb     full flow, but the stored mask is replaced by its
                    filled axis-aligned box before the next propagation
    segmask_mbr     as above with the filled minimum bounding rectangle
    flow_reject     no flow scoring; proposals containing too few
                    flow-warped previous-box pixels are discarded
    baseline        appearance + cosine position penalty only
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .flowmask import B_MIN, FlowField, KernelConfig, propagate_mask
from .geometry import (
    AABox,
    EmptyMaskError,
    RotBox,
    alb_of_mask,
    fill_aabox_mask,
    fill_rotbox_mask,
    mbr_of_mask,
)
from .grids import BinaryMask, ProbMask, threshold_mask
from .scoring import (
    FlowNormalizer,
    Proposal,
    ScoreConfig,
    compute_normalizer,
    score_proposals,
    select_best,
)

VARIANT_MODES = (
    "full",
    "no_flow",
    "no_uncertainty",
    "segmask_alb",
    "segmask_mbr",
    "flow_reject",
    "baseline",
)

# Variants whose motion term is the bare cosine penalty.
_NO_FLOW_SCORING = ("flow_reject", "baseline")


class TrackError(ValueError):
    pass


@dataclass(frozen=True)
class VariantConfig:
    """Which pipeline variant to run, plus the ablation knobs."""

    mode: str = "full"
    fixed_scale_b: float = 1.0
    reject_threshold: float = 0.25

    def __post_init__(self):
        if self.mode not in VARIANT_MODES:
            raise TrackError(f"unknown variant {self.mode!r}; expected one of {VARIANT_MODES}")
        if self.fixed_scale_b < B_MIN:
            raise TrackError(f"fixed_scale_b must be >= {B_MIN}")
        if not 0.0 <= self.reject_threshold <= 1.0:
            raise TrackError("reject_threshold must be in [0, 1]")


@dataclass
class TrackerState:
    """Everything carried from one frame to the next."""

    prev_box: AABox
    prev_rot_box: RotBox
    prev_binary_mask: BinaryMask
    prev_prob_mask: ProbMask
    normalizer: FlowNormalizer
    frame_index: int = 0


@dataclass
class StepDiagnostics:
    """Per-frame flags and score breakdown."""

    winner: int = -1
    degenerate_mask: bool = False
    mask_dropout: bool = False
    rejection_bypass: bool = False
    n_rejected: int = 0
    totals: list[float] = field(default_factory=list)
    flow_scores: list[float] = field(default_factory=list)


MaskSource = Callable[[int], ProbMask]


def _filled_box_masks(box: AABox, height: int, width: int) -> tuple[BinaryMask, ProbMask]:
    binary = fill_aabox_mask(box, height, width)
    return binary, binary.to_prob()


def init_state(
    gt_box: AABox | RotBox,
    init_mask: ProbMask,
    cfg: ScoreConfig,
) -> tuple[TrackerState, StepDiagnostics]:
    """Seed tracker state from a ground-truth box and initial mask.

    The mask is thresholded with t_seg; if nothing survives, a filled-box
    mask is used instead and the degenerate flag is raised.
    """
    if isinstance(gt_box, RotBox):
        box = gt_box.enclosing_aabox()
        rot = gt_box
    else:
        box = gt_box
        rot = RotBox.from_aabox(gt_box)

    h, w = init_mask.shape
    diag = StepDiagnostics()
    binary = threshold_mask(init_mask, cfg.t_seg)
    if binary.is_empty():
        binary, prob = _filled_box_masks(box, h, w)
        diag.degenerate_mask = True
    else:
        prob = init_mask
    norm = compute_normalizer(binary, box)
    diag.degenerate_mask = diag.degenerate_mask or norm.degenerate
    state = TrackerState(
        prev_box=box,
        prev_rot_box=rot,
        prev_binary_mask=binary,
        prev_prob_mask=prob,
        normalizer=norm,
        frame_index=0,
    )
    return state, diag


def flow_rejection_filter(
    state: TrackerState,
    proposals: Sequence[Proposal],
    flow: FlowField,
    reject_threshold: float = 0.25,
) -> tuple[list[Proposal], StepDiagnostics]:
    """Drop proposals that contain too few flow-warped previous-box pixels.

    The previous box region is warped with the mean flow only (a frame-t
    pixel i whose backward correspondence i + mu(i) lands in the previous
    box counts as a warped pixel).  Proposals containing less than
    reject_threshold of the warped pixels are dropped; if that would drop
    everything, the unfiltered set is kept and the bypass flag raised.
    """
    diag = StepDiagnostics()
    h, w = flow.shape
    xs = np.arange(w, dtype=np.float64)[None, :] + flow.mean_u.values
    ys = np.arange(h, dtype=np.float64)[:, None] + flow.mean_v.values
    box = state.prev_box
    warped = (xs >= box.x0) & (xs <= box.x1) & (ys >= box.y0) & (ys <= box.y1)
    total = int(warped.sum())
    if total == 0:
        diag.rejection_bypass = True
        return list(proposals), diag

    wy, wx = np.nonzero(warped)
    kept = []
    for prop in proposals:
        b = prop.box
        inside = (wx >= b.x0) & (wx <= b.x1) & (wy >= b.y0) & (wy <= b.y1)
        if inside.sum() / total >= reject_threshold:
            kept.append(prop)
    diag.n_rejected = len(proposals) - len(kept)
    if not kept:
        diag.rejection_bypass = True
        return list(proposals), diag
    return kept, diag


def _effective_flow(flow: FlowField, variant: VariantConfig) -> FlowField:
    if variant.mode == "no_flow":
        h, w = flow.shape
        return FlowField.constant(h, w, (0.0, 0.0), variant.fixed_scale_b)
    if variant.mode == "no_uncertainty":
        return flow.with_scale(variant.fixed_scale_b)
    return flow


class Tracker:
    """Single-target tracker; one instance tracks one sequence at a time."""

    def __init__(
        self,
        cfg: ScoreConfig | None = None,
        variant: VariantConfig | None = None,
        kernel: KernelConfig | None = None,
    ):
        self.cfg = cfg or ScoreConfig()
        self.variant = variant or VariantConfig()
        self.kernel = kernel or KernelConfig()
        self.state: TrackerState | None = None

    def init(self, gt_box: AABox | RotBox, init_mask: ProbMask) -> StepDiagnostics:
        self.state, diag = init_state(gt_box, init_mask, self.cfg)
        return diag

    def step(
        self,
        proposals: Sequence[Proposal],
        mask_source: MaskSource,
        flow: FlowField,
    ) -> tuple[RotBox, TrackerState, StepDiagnostics]:
        """Advance one frame; returns (output box, new state, diagnostics)."""
        state = self.state
        if state is None:
            raise TrackError("tracker not initialized")
        if len(proposals) == 0:
            raise TrackError("no proposals")
        h, w = flow.shape
        if state.prev_prob_mask.shape != (h, w):
            raise TrackError("flow dimensions do not match the stored mask")

        indexed = [(i, p) for i, p in enumerate(proposals) if p.box.intersects_image(h, w)]
        if not indexed:
            raise TrackError("all proposals off-image")

        diag = StepDiagnostics()
        if self.variant.mode == "flow_reject":
            kept, rej_diag = flow_rejection_filter(
                state, [p for _, p in indexed], flow, self.variant.reject_threshold
            )
            diag.rejection_bypass = rej_diag.rejection_bypass
            diag.n_rejected = rej_diag.n_rejected
            if not diag.rejection_bypass:
                kept_ids = set(id(p) for p in kept)
                indexed = [(i, p) for i, p in indexed if id(p) in kept_ids]
        candidates = [p for _, p in indexed]

        if self.variant.mode in _NO_FLOW_SCORING:
            flowmask = None
            scores = score_proposals(candidates, state.prev_box, self.cfg)
        else:
            eff_flow = _effective_flow(flow, self.variant)
            flowmask = propagate_mask(state.prev_prob_mask, eff_flow, self.kernel)
            scores = score_proposals(
                candidates, state.prev_box, self.cfg, flowmask, state.normalizer
            )

        totals = [s.total for s in scores]
        winner = select_best(list(zip(candidates, totals)), state.prev_box)
        winner_prop = candidates[winner]
        diag.winner = indexed[winner][0]
        diag.totals = totals
        diag.flow_scores = [s.flow for s in scores]

        soft = mask_source(diag.winner)
        if soft.shape != (h, w):
            raise TrackError("predicted mask dimensions do not match the frame")
        binary = threshold_mask(soft, self.cfg.t_seg)

        if binary.is_empty():
            # Mask dropout: keep the stored masks, output the winning box.
            diag.mask_dropout = True
            out_rot = RotBox.from_aabox(winner_prop.box)
            binary = state.prev_binary_mask
            prob = state.prev_prob_mask
        else:
            out_rot = mbr_of_mask(binary)
            prob = soft
            if self.variant.mode == "segmask_alb":
                prob = fill_aabox_mask(alb_of_mask(binary), h, w).to_prob()
            elif self.variant.mode == "segmask_mbr":
                prob = fill_rotbox_mask(out_rot, h, w).to_prob()

        norm = compute_normalizer(binary, winner_prop.box)
        diag.degenerate_mask = norm.degenerate
        self.state = TrackerState(
            prev_box=winner_prop.box,
            prev_rot_box=out_rot,
            prev_binary_mask=binary,
            prev_prob_mask=prob,
            normalizer=norm,
            frame_index=state.frame_index + 1,
        )
        return out_rot, self.state, diag
