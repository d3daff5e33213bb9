"""Per-proposal scores and box selection.

A proposal's total score mixes the appearance score d with a size-change
penalty, and a motion term.  The motion term is either the raised-cosine
position penalty alone (baseline behavior) or its convex combination with
the normalized flow score computed from the propagated foreground mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import AABox
from .grids import BinaryMask, ProbMask

# Lower clamp for the flow-score normalizer; keeps the normalization
# well-defined when the previous mask was empty or nearly so.
T_FLOW_EPS = 1e-3


class ScoringError(ValueError):
    pass


class OffImageError(ScoringError):
    """Proposal box does not intersect the image."""


@dataclass(frozen=True)
class ScoreConfig:
    """Hyperparameters of the proposal score.

    k_c mixes the appearance term against the motion term, k_p sets the
    sharpness of the size-change penalty, k_f mixes the position penalty
    against the flow score inside the motion term, t_seg binarizes
    predicted masks, and window_scale sets the raised-cosine support as a
    multiple of the previous box extent.
    """

    k_c: float = 0.42
    k_p: float = 0.10
    k_f: float = 0.60
    t_seg: float = 0.30
    window_scale: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.k_c <= 1.0:
            raise ScoringError(f"k_c must be in [0, 1], got {self.k_c}")
        if self.k_p < 0.0:
            raise ScoringError(f"k_p must be >= 0, got {self.k_p}")
        if not 0.0 <= self.k_f <= 1.0:
            raise ScoringError(f"k_f must be in [0, 1], got {self.k_f}")
        if not 0.0 < self.t_seg < 1.0:
            raise ScoringError(f"t_seg must be in (0, 1), got {self.t_seg}")
        if self.window_scale <= 0.0:
            raise ScoringError(f"window_scale must be positive, got {self.window_scale}")


@dataclass(frozen=True)
class FlowNormalizer:
    """Normalizer t_flow for the flow score, with a degenerate-mask flag."""

    t_flow: float
    degenerate: bool = False

    def __post_init__(self):
        if not T_FLOW_EPS <= self.t_flow <= 1.0:
            raise ScoringError(f"t_flow must be in [{T_FLOW_EPS}, 1], got {self.t_flow}")


@dataclass(frozen=True)
class Proposal:
    """Axis-aligned candidate box plus its appearance matching score d."""

    box: AABox
    appearance: float


def _padded_extent(box: AABox) -> float:
    """sqrt((w + p) * (h + p)) with padding p = (w + h) / 2."""
    p = (box.w + box.h) / 2.0
    return math.sqrt((box.w + p) * (box.h + p))


def size_penalty(prop: AABox, prev: AABox, k_p: float) -> float:
    """Penalty in (0, 1] for aspect-ratio and padded-scale change."""
    if k_p < 0.0:
        raise ScoringError(f"k_p must be >= 0, got {k_p}")
    r = prop.aspect()
    r_prev = prev.aspect()
    s = _padded_extent(prop)
    s_prev = _padded_extent(prev)
    ratio_term = max(r / r_prev, r_prev / r)
    scale_term = max(s / s_prev, s_prev / s)
    return math.exp((1.0 - ratio_term * scale_term) * k_p)


def cosine_penalty(prop_center: tuple[float, float], prev: AABox, window_scale: float = 2.0) -> float:
    """Separable raised-cosine window centered at the previous box center.

    Per axis: 0.5 * (1 + cos(pi * delta / R)) for |delta| <= R, else 0,
    with R = window_scale times the previous box extent on that axis.
    """
    rx = window_scale * prev.w
    ry = window_scale * prev.h
    dx = prop_center[0] - prev.cx
    dy = prop_center[1] - prev.cy

    def axis(delta: float, r: float) -> float:
        if abs(delta) >= r:
            return 0.0
        return 0.5 * (1.0 + math.cos(math.pi * delta / r))

    return axis(dx, rx) * axis(dy, ry)


def box_pixel_range(box: AABox, height: int, width: int) -> tuple[int, int, int, int]:
    """Integer pixel-index bounds (row0, row1, col0, col1), inclusive, of the
    pixel centers strictly inside the box after clipping to the image.

    Raises OffImageError when the box does not intersect the image; returns
    an empty range (row1 < row0) when the clipped box contains no centers.
    """
    if not box.intersects_image(height, width):
        raise OffImageError("off-image proposal")
    x_lo = max(box.x0, -0.5)
    x_hi = min(box.x1, width - 0.5)
    y_lo = max(box.y0, -0.5)
    y_hi = min(box.y1, height - 0.5)
    col0 = int(math.floor(x_lo)) + 1
    col1 = int(math.ceil(x_hi)) - 1
    row0 = int(math.floor(y_lo)) + 1
    row1 = int(math.ceil(y_hi)) - 1
    return row0, row1, col0, col1


def box_pixel_count(box: AABox, height: int, width: int) -> int:
    row0, row1, col0, col1 = box_pixel_range(box, height, width)
    if row1 < row0 or col1 < col0:
        return 0
    return (row1 - row0 + 1) * (col1 - col0 + 1)


def flow_score(box: AABox, flowmask: ProbMask) -> float:
    """Mean foreground probability over pixel centers inside the box."""
    h, w = flowmask.shape
    row0, row1, col0, col1 = box_pixel_range(box, h, w)
    if row1 < row0 or col1 < col0:
        return 0.0
    return float(flowmask.values[row0 : row1 + 1, col0 : col1 + 1].mean())


def compute_normalizer(binary_mask: BinaryMask, prev_box: AABox) -> FlowNormalizer:
    """t_flow = foreground pixel count / previous-box pixel count.

    Clamped to [T_FLOW_EPS, 1]: the ratio can exceed 1 when the mask spills
    outside the box and hits 0 for an empty mask; an empty mask (or a box
    containing no pixel centers) is flagged degenerate.
    """
    fg = binary_mask.count()
    n_box = box_pixel_count(prev_box, binary_mask.height, binary_mask.width)
    if n_box == 0:
        return FlowNormalizer(1.0, degenerate=True)
    if fg == 0:
        return FlowNormalizer(T_FLOW_EPS, degenerate=True)
    ratio = fg / n_box
    return FlowNormalizer(min(max(ratio, T_FLOW_EPS), 1.0))


def normalized_flow_score(f_s: float, norm: FlowNormalizer) -> float:
    """min(f_s / t_flow, 1)."""
    return min(f_s / norm.t_flow, 1.0)


def motion_score(p_c: float, f_s_prime: float, k_f: float) -> float:
    """(1 - k_f) * p_c + k_f * f_s'."""
    return (1.0 - k_f) * p_c + k_f * f_s_prime


def total_score(d: float, p_s: float, motion: float, k_c: float) -> float:
    """(1 - k_c) * p_s * d + k_c * motion."""
    return (1.0 - k_c) * p_s * d + k_c * motion


@dataclass(frozen=True)
class ProposalScore:
    """Score breakdown of one proposal."""

    appearance: float
    size_pen: float
    cosine_pen: float
    flow: float
    flow_normalized: float
    motion: float
    total: float


def score_proposals(
    proposals: Sequence[Proposal],
    prev_box: AABox,
    cfg: ScoreConfig,
    flowmask: ProbMask | None = None,
    normalizer: FlowNormalizer | None = None,
) -> list[ProposalScore]:
    """Score every proposal against the previous box and optional flow mask.

    With flowmask None the motion term is the bare cosine penalty (no-flow
    baseline); otherwise it mixes in the normalized flow score with k_f.
    """
    out = []
    for prop in proposals:
        p_s = size_penalty(prop.box, prev_box, cfg.k_p)
        p_c = cosine_penalty(prop.box.center, prev_box, cfg.window_scale)
        if flowmask is None:
            f_s = 0.0
            f_sp = 0.0
            motion = p_c
        else:
            if normalizer is None:
                raise ScoringError("flow scoring requires a normalizer")
            f_s = flow_score(prop.box, flowmask)
            f_sp = normalized_flow_score(f_s, normalizer)
            motion = motion_score(p_c, f_sp, cfg.k_f)
        out.append(
            ProposalScore(
                appearance=prop.appearance,
                size_pen=p_s,
                cosine_pen=p_c,
                flow=f_s,
                flow_normalized=f_sp,
                motion=motion,
                total=total_score(prop.appearance, p_s, motion, cfg.k_c),
            )
        )
    return out


def select_best(scored: Sequence[tuple[Proposal, float]], prev_box: AABox) -> int:
    """Index of the highest-scoring proposal.

    Exact ties are broken by the smaller center distance to the previous
    box, then by the lower index.
    """
    if len(scored) == 0:
        raise ScoringError("no proposals")
    best_idx = 0
    best_score = scored[0][1]
    best_dist = _center_dist(scored[0][0].box, prev_box)
    for i in range(1, len(scored)):
        prop, score = scored[i]
        if score > best_score:
            best_idx, best_score, best_dist = i, score, _center_dist(prop.box, prev_box)
        elif score == best_score:
            dist = _center_dist(prop.box, prev_box)
            if dist < best_dist:
                best_idx, best_dist = i, dist
    return best_idx


def _center_dist(a: AABox, b: AABox) -> float:
    return math.hypot(a.cx - b.cx, a.cy - b.cy)
