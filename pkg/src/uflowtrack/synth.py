"""Synthetic scene providers: ground-truth worlds with distractors, camera
motion, and calibrated flow noise.

A scene is a list of moving objects (exactly one marked as the target) on a
pixel grid.  Rendering produces, per frame: each object's visible mask
(later-listed objects occlude earlier ones), the target's ground-truth box,
and the exact backward flow field (frame t to frame t-1) implied by the
trajectories; background flow is the negated camera shift.  Noise is
injected afterwards, so flow error is the only non-ground-truth signal.

Stream discipline: every random quantity is drawn from a generator seeded
by (scene seed, purpose salt, frame[, object]), so any frame can be
regenerated independently and runs are reproducible byte-for-byte.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .flowmask import B_MIN, FlowField
from .geometry import AABox, RotBox, alb_of_mask, fill_aabox_mask
from .grids import BinaryMask, ProbMask, ScalarGrid, read_ufg, write_ufg
from .scoring import Proposal
from .geometry import iou_axis_aligned

# Seed-chain salts (scene seed, salt, frame[, object]).
FLOW_SALT = 1
MASK_SALT = 2
APPEARANCE_SALT = 3
PROPOSAL_SALT = 4

SHAPES = ("rectangle", "ellipse")


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectSpec:
    """One scene object: shape, size, and a per-frame center trajectory.

    Centers are world coordinates; the global camera shift is added at
    render time.  `sizes` optionally deforms the object per frame.
    """

    shape: str
    size: tuple[float, float]
    centers: tuple[tuple[float, float], ...]
    sizes: tuple[tuple[float, float], ...] | None = None
    is_target: bool = False

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise SceneError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        if self.size[0] <= 0 or self.size[1] <= 0:
            raise SceneError("object size must be positive")
        if self.sizes is not None and len(self.sizes) != len(self.centers):
            raise SceneError("per-frame sizes must match trajectory length")

    def size_at(self, t: int) -> tuple[float, float]:
        return self.sizes[t] if self.sizes is not None else self.size


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    num_frames: int
    objects: tuple[ObjectSpec, ...]
    camera_shift: tuple[tuple[float, float], ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.width < 4 or self.height < 4:
            raise SceneError("scene grid must be at least 4x4")
        if self.num_frames < 1:
            raise SceneError("scene needs at least one frame")
        targets = [o for o in self.objects if o.is_target]
        if len(targets) != 1:
            raise SceneError(f"scene must have exactly one target, got {len(targets)}")
        for obj in self.objects:
            if len(obj.centers) != self.num_frames:
                raise SceneError("every trajectory must cover every frame")
        if self.camera_shift is not None and len(self.camera_shift) != self.num_frames:
            raise SceneError("camera_shift must cover every frame")

    @property
    def target_index(self) -> int:
        return next(i for i, o in enumerate(self.objects) if o.is_target)

    def cumulative_shift(self) -> np.ndarray:
        """(num_frames, 2) cumulative camera displacement; entry 0 is zero."""
        out = np.zeros((self.num_frames, 2))
        if self.camera_shift is not None:
            shifts = np.asarray(self.camera_shift, dtype=np.float64)
            shifts[0] = 0.0
            out = np.cumsum(shifts, axis=0)
        return out


@dataclass(frozen=True)
class NoiseModel:
    """Error model for the synthetic flow/mask/appearance providers.

    flow_noise_scale is the Laplace scale of injected flow error;
    scale_spread > 0 makes it heteroscedastic (log-normal spatial field).
    The emitted uncertainty is calibration_factor times the true per-pixel
    noise scale (1.0 = perfectly calibrated), floored at B_MIN.
    """

    flow_noise_scale: float = 0.0
    calibration_factor: float = 1.0
    mask_corruption: float = 0.0
    appearance_confusion: float = 0.0
    scale_spread: float = 0.0
    scale_cap: float = 2.5
    coherence_cells: float = 0.0
    appearance_noise_sd: float = 0.0

    def __post_init__(self):
        for name in ("flow_noise_scale", "calibration_factor", "mask_corruption", "scale_spread", "appearance_noise_sd"):
            if getattr(self, name) < 0:
                raise SceneError(f"{name} must be non-negative")
        if self.scale_cap <= 0:
            raise SceneError("scale_cap must be positive")
        if self.coherence_cells < 0:
            raise SceneError("coherence_cells must be non-negative")
        if not 0.0 <= self.appearance_confusion <= 1.0:
            raise SceneError("appearance_confusion must be in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "flow_noise_scale": self.flow_noise_scale,
            "calibration_factor": self.calibration_factor,
            "mask_corruption": self.mask_corruption,
            "appearance_confusion": self.appearance_confusion,
            "scale_spread": self.scale_spread,
            "scale_cap": self.scale_cap,
            "coherence_cells": self.coherence_cells,
            "appearance_noise_sd": self.appearance_noise_sd,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseModel":
        return cls(**d)


@dataclass
class RenderedScene:
    """Per-frame ground truth of a scene."""

    spec: SceneSpec
    visible_masks: list[list[BinaryMask]]  # [frame][object]
    gt_aabox: list[AABox]
    gt_rotbox: list[RotBox]
    flows: list[FlowField]  # exact backward flow, scales at B_MIN
    distractor_boxes: list[list[AABox]]

    @property
    def num_frames(self) -> int:
        return self.spec.num_frames

    @property
    def dims(self) -> tuple[int, int]:
        return (self.spec.height, self.spec.width)


def _footprint(shape: str, cx: float, cy: float, w: float, h: float, height: int, width: int) -> np.ndarray:
    ys = np.arange(height, dtype=np.float64)[:, None]
    xs = np.arange(width, dtype=np.float64)[None, :]
    if shape == "rectangle":
        return (np.abs(xs - cx) <= w / 2.0) & (np.abs(ys - cy) <= h / 2.0)
    nx = (xs - cx) / (w / 2.0)
    ny = (ys - cy) / (h / 2.0)
    return nx * nx + ny * ny <= 1.0


def render_scene(spec: SceneSpec) -> RenderedScene:
    """Render masks, ground-truth boxes, and exact backward flow per frame."""
    h, w = spec.height, spec.width
    cum = spec.cumulative_shift()
    tgt = spec.target_index

    image_centers: list[list[tuple[float, float]]] = []
    for t in range(spec.num_frames):
        image_centers.append(
            [
                (obj.centers[t][0] + cum[t, 0], obj.centers[t][1] + cum[t, 1])
                for obj in spec.objects
            ]
        )

    visible_masks: list[list[BinaryMask]] = []
    gt_aabox: list[AABox] = []
    gt_rotbox: list[RotBox] = []
    flows: list[FlowField] = []
    distractor_boxes: list[list[AABox]] = []
    prev_gt: AABox | None = None

    for t in range(spec.num_frames):
        footprints = []
        owner = np.full((h, w), -1, dtype=np.int64)
        for k, obj in enumerate(spec.objects):
            cx, cy = image_centers[t][k]
            ow, oh = obj.size_at(t)
            fp = _footprint(obj.shape, cx, cy, ow, oh, h, w)
            footprints.append(fp)
            owner[fp] = k
        visible_masks.append(
            [BinaryMask((owner == k).astype(np.uint8)) for k in range(len(spec.objects))]
        )

        if footprints[tgt].any():
            box = alb_of_mask(BinaryMask(footprints[tgt].astype(np.uint8)))
            prev_gt = box
        elif prev_gt is not None:
            box = prev_gt  # target out of frame: carry the last known box
        else:
            raise SceneError("target must be visible in the first frame")
        gt_aabox.append(box)
        gt_rotbox.append(RotBox.from_aabox(box))

        dists = []
        for k in range(len(spec.objects)):
            if k == tgt or not footprints[k].any():
                continue
            dists.append(alb_of_mask(BinaryMask(footprints[k].astype(np.uint8))))
        distractor_boxes.append(dists)

        if t == 0:
            flows.append(FlowField.identity(h, w))
            continue
        mu_u = np.full((h, w), -(cum[t, 0] - cum[t - 1, 0]))
        mu_v = np.full((h, w), -(cum[t, 1] - cum[t - 1, 1]))
        for k, obj in enumerate(spec.objects):
            pix = owner == k
            if not pix.any():
                continue
            cx_t, cy_t = image_centers[t][k]
            cx_p, cy_p = image_centers[t - 1][k]
            sw_t, sh_t = obj.size_at(t)
            sw_p, sh_p = obj.size_at(t - 1)
            ys, xs = np.nonzero(pix)
            src_x = cx_p + (xs - cx_t) * (sw_p / sw_t)
            src_y = cy_p + (ys - cy_t) * (sh_p / sh_t)
            mu_u[pix] = src_x - xs
            mu_v[pix] = src_y - ys
        flows.append(
            FlowField.from_arrays(mu_u, mu_v, np.full((h, w), B_MIN), np.full((h, w), B_MIN))
        )

    return RenderedScene(spec, visible_masks, gt_aabox, gt_rotbox, flows, distractor_boxes)


def _bilinear_upsample(coarse: np.ndarray, height: int, width: int) -> np.ndarray:
    gh, gw = coarse.shape
    y = np.linspace(0.0, gh - 1.0, height)
    x = np.linspace(0.0, gw - 1.0, width)
    y0 = np.minimum(np.floor(y).astype(np.int64), gh - 2)
    x0 = np.minimum(np.floor(x).astype(np.int64), gw - 2)
    fy = (y - y0)[:, None]
    fx = (x - x0)[None, :]
    a = coarse[np.ix_(y0, x0)]
    b = coarse[np.ix_(y0, x0 + 1)]
    c = coarse[np.ix_(y0 + 1, x0)]
    d = coarse[np.ix_(y0 + 1, x0 + 1)]
    return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy


def noise_scale_field(noise: NoiseModel, height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """Per-pixel Laplace scale of the injected flow error.

    scale_spread > 0 modulates the base scale with a smooth log-normal
    field, capped at scale_cap so correspondence windows stay bounded.
    """
    base = np.full((height, width), noise.flow_noise_scale)
    if noise.scale_spread <= 0 or noise.flow_noise_scale == 0:
        return base
    cell = 8
    coarse = rng.standard_normal((height // cell + 2, width // cell + 2))
    field = base * np.exp(noise.scale_spread * _bilinear_upsample(coarse, height, width))
    return np.minimum(field, noise.scale_cap)


def _unit_laplace_field(rng: np.random.Generator, height: int, width: int, cell: float) -> np.ndarray:
    """Unit-scale Laplace noise; cell > 1 makes it piecewise constant.

    Block-coherent draws keep exact Laplace marginals (so MAE equals the
    scale) while modeling flow estimators whose errors are spatially
    correlated rather than per-pixel speckle.
    """
    if cell <= 1.0:
        return rng.laplace(0.0, 1.0, (height, width))
    c = int(round(cell))
    oy = int(rng.integers(0, c))
    ox = int(rng.integers(0, c))
    gh = (height + oy) // c + 1
    gw = (width + ox) // c + 1
    draws = rng.laplace(0.0, 1.0, (gh, gw))
    iy = (np.arange(height) + oy) // c
    ix = (np.arange(width) + ox) // c
    return draws[np.ix_(iy, ix)]


def corrupt_flow(true_flow: FlowField, noise: NoiseModel, seed) -> FlowField:
    """Add Laplace noise to the flow means and emit calibrated scale grids."""
    rng = np.random.default_rng(seed)
    h, w = true_flow.shape
    scale = noise_scale_field(noise, h, w, rng)
    noise_u = _unit_laplace_field(rng, h, w, noise.coherence_cells) * scale
    noise_v = _unit_laplace_field(rng, h, w, noise.coherence_cells) * scale
    b = np.maximum(noise.calibration_factor * scale, B_MIN)
    return FlowField.from_arrays(
        true_flow.mean_u.values + noise_u,
        true_flow.mean_v.values + noise_v,
        b,
        b.copy(),
    )


def corrupt_mask(mask: BinaryMask, corruption: float, rng: np.random.Generator) -> ProbMask:
    """Flip each pixel with the given probability; returns {0,1} probabilities."""
    vals = mask.values.astype(np.float64)
    if corruption > 0:
        flips = rng.random(mask.shape) < corruption
        vals = np.where(flips, 1.0 - vals, vals)
    return ProbMask(ScalarGrid(vals))


def synth_appearance(
    boxes: Sequence[AABox],
    gt_box: AABox | None,
    distractor_boxes: Sequence[AABox],
    confusion: float,
    rng: np.random.Generator,
    noise_sd: float = 0.0,
) -> list[float]:
    """Appearance matching scores: target overlap plus confusable distractor
    overlap plus optional Gaussian noise, clipped to [0, 1]."""
    out = []
    for box in boxes:
        d = iou_axis_aligned(box, gt_box) if gt_box is not None else 0.0
        if distractor_boxes:
            d += confusion * max(iou_axis_aligned(box, db) for db in distractor_boxes)
        if noise_sd > 0:
            d += rng.normal(0.0, noise_sd)
        out.append(float(np.clip(d, 0.0, 1.0)))
    return out


def _clamp_center(cx: float, cy: float, height: int, width: int) -> tuple[float, float]:
    return (min(max(cx, 0.0), width - 1.0), min(max(cy, 0.0), height - 1.0))


def generate_proposals(
    prev_box: AABox,
    gt_box: AABox | None,
    distractor_boxes: Sequence[AABox],
    height: int,
    width: int,
    rng: np.random.Generator,
    count: int = 16,
    jitter_px: float = 2.5,
) -> list[AABox]:
    """Candidate boxes: the ground-truth box and jittered copies, every
    distractor box, and a coarse grid around the previous center.

    Deterministic given the generator state; returns exactly `count` boxes;
    while the target is in frame the exact ground-truth box leads the list.
    """
    if count < 1:
        raise SceneError("proposal count must be >= 1")
    boxes: list[AABox] = []
    anchor = gt_box if gt_box is not None else prev_box

    if gt_box is not None:
        boxes.append(gt_box)
    for db in distractor_boxes:
        cx, cy = _clamp_center(db.cx, db.cy, height, width)
        boxes.append(AABox(cx, cy, db.w, db.h))

    # Coarse 3x3 grid at the previous scale around the previous center.
    for oy in (-1, 0, 1):
        for ox in (-1, 0, 1):
            if ox == 0 and oy == 0:
                continue
            cx, cy = _clamp_center(
                prev_box.cx + 0.75 * ox * prev_box.w,
                prev_box.cy + 0.75 * oy * prev_box.h,
                height,
                width,
            )
            boxes.append(AABox(cx, cy, prev_box.w, prev_box.h))

    while len(boxes) < count:
        jx, jy = rng.uniform(-jitter_px, jitter_px, 2)
        sx, sy = rng.uniform(0.85, 1.15, 2)
        cx, cy = _clamp_center(anchor.cx + jx, anchor.cy + jy, height, width)
        boxes.append(AABox(cx, cy, max(anchor.w * sx, 1.0), max(anchor.h * sy, 1.0)))
    return boxes[:count]


# ---------------------------------------------------------------------------
# Sequence adapter: the uniform view the tracker and harness consume,
# backed either by an in-memory rendered scene or a dataset directory.
# ---------------------------------------------------------------------------


@dataclass
class SequenceFrame:
    flow: FlowField
    object_masks: list[ProbMask]
    gt_rotbox: RotBox
    gt_aabox: AABox
    distractor_boxes: list[AABox]


class SceneSequence:
    """Per-frame tracker inputs for one synthetic sequence."""

    def __init__(
        self,
        dims: tuple[int, int],
        num_frames: int,
        seed: int,
        frame_fn: Callable[[int], SequenceFrame],
        target_index: int,
        noise: NoiseModel,
        n_proposals: int = 16,
        jitter_px: float = 2.5,
        name: str = "scene",
    ):
        self.dims = dims
        self.num_frames = num_frames
        self.seed = seed
        self.target_index = target_index
        self.noise = noise
        self.n_proposals = n_proposals
        self.jitter_px = jitter_px
        self.name = name
        self._frame_fn = frame_fn
        self._cache: dict[int, SequenceFrame] = {}

    def __len__(self) -> int:
        return self.num_frames

    def frame(self, t: int) -> SequenceFrame:
        if t not in self._cache:
            if not 0 <= t < self.num_frames:
                raise SceneError(f"frame {t} out of range")
            self._cache[t] = self._frame_fn(t)
            if len(self._cache) > 4:  # keep the working set small
                self._cache.pop(next(iter(self._cache)))
        return self._cache[t]

    def gt_rotbox(self, t: int) -> RotBox:
        return self.frame(t).gt_rotbox

    def gt_aabox(self, t: int) -> AABox:
        return self.frame(t).gt_aabox

    def init_inputs(self, t: int) -> tuple[AABox, ProbMask]:
        fr = self.frame(t)
        return fr.gt_aabox, fr.object_masks[self.target_index]

    def frame_inputs(self, t: int, prev_box: AABox):
        """(proposals, mask_source, flow) for stepping the tracker at frame t."""
        fr = self.frame(t)
        h, w = self.dims
        gt = fr.gt_aabox if fr.gt_aabox.intersects_image(h, w) else None
        rng_prop = np.random.default_rng([self.seed, PROPOSAL_SALT, t])
        boxes = generate_proposals(
            prev_box, gt, fr.distractor_boxes, h, w, rng_prop, self.n_proposals, self.jitter_px
        )
        rng_app = np.random.default_rng([self.seed, APPEARANCE_SALT, t])
        scores = synth_appearance(
            boxes, gt, fr.distractor_boxes, self.noise.appearance_confusion, rng_app,
            self.noise.appearance_noise_sd,
        )
        proposals = [Proposal(b, d) for b, d in zip(boxes, scores)]

        def mask_source(idx: int) -> ProbMask:
            return self._dominant_mask(fr, proposals[idx].box)

        return proposals, mask_source, fr.flow

    def _dominant_mask(self, fr: SequenceFrame, box: AABox) -> ProbMask:
        """Mask of the object with the most visible pixels inside the box."""
        h, w = self.dims
        ys = np.arange(h)[:, None]
        xs = np.arange(w)[None, :]
        inside = (xs >= box.x0) & (xs <= box.x1) & (ys >= box.y0) & (ys <= box.y1)
        best_k, best_count = -1, 0
        for k, mask in enumerate(fr.object_masks):
            count = int(((mask.values > 0.5) & inside).sum())
            if count > best_count or (count == best_count and count > 0 and k == self.target_index):
                best_k, best_count = k, count
        if best_k < 0:
            return ProbMask(ScalarGrid(np.zeros((h, w))))
        return fr.object_masks[best_k]


def sequence_from_rendered(
    rendered: RenderedScene,
    noise: NoiseModel,
    n_proposals: int = 16,
    jitter_px: float = 2.5,
    name: str = "scene",
) -> SceneSequence:
    """Wrap a rendered scene, injecting noise per frame on access."""
    seed = rendered.spec.seed
    tgt = rendered.spec.target_index

    def frame_fn(t: int) -> SequenceFrame:
        flow = corrupt_flow(rendered.flows[t], noise, [seed, FLOW_SALT, t])
        masks = []
        for k, m in enumerate(rendered.visible_masks[t]):
            rng = np.random.default_rng([seed, MASK_SALT, t, k])
            masks.append(corrupt_mask(m, noise.mask_corruption, rng))
        return SequenceFrame(
            flow=flow,
            object_masks=masks,
            gt_rotbox=rendered.gt_rotbox[t],
            gt_aabox=rendered.gt_aabox[t],
            distractor_boxes=rendered.distractor_boxes[t],
        )

    return SceneSequence(
        dims=rendered.dims,
        num_frames=rendered.num_frames,
        seed=seed,
        frame_fn=frame_fn,
        target_index=tgt,
        noise=noise,
        n_proposals=n_proposals,
        jitter_px=jitter_px,
        name=name,
    )


# ---------------------------------------------------------------------------
# On-disk dataset layout:
#   meta.json            dims, frame count, seed, noise parameters
#   groundtruth.txt      one line per frame: 8 comma-separated corner coords
#   distractors.txt      one line per frame: cx,cy,w,h groups joined by ';'
#   frames/NNNN.flow.ufg       corrupted flow (4 channels: u, v, b_u, b_v)
#   frames/NNNN.objKK.mask.ufg corrupted visible mask per object (1 channel)
# ---------------------------------------------------------------------------


def save_scene(out_dir: str | os.PathLike, spec: SceneSpec, noise: NoiseModel) -> None:
    """Render a scene and write the (noise-corrupted) dataset directory."""
    rendered = render_scene(spec)
    out_dir = os.fspath(out_dir)
    frames_dir = os.path.join(out_dir, "frames")
    os.makedirs(frames_dir, exist_ok=True)

    meta = {
        "width": spec.width,
        "height": spec.height,
        "num_frames": spec.num_frames,
        "seed": spec.seed,
        "n_objects": len(spec.objects),
        "target_index": spec.target_index,
        "noise": noise.to_dict(),
    }
    _atomic_write_text(os.path.join(out_dir, "meta.json"), json.dumps(meta, indent=2, sort_keys=True) + "\n")

    gt_lines = []
    dist_lines = []
    for t in range(spec.num_frames):
        gt_lines.append(",".join(f"{v:.6f}" for v in rendered.gt_rotbox[t].flat()))
        groups = [f"{b.cx:.6f},{b.cy:.6f},{b.w:.6f},{b.h:.6f}" for b in rendered.distractor_boxes[t]]
        dist_lines.append(";".join(groups))
        flow = corrupt_flow(rendered.flows[t], noise, [spec.seed, FLOW_SALT, t])
        write_ufg(os.path.join(frames_dir, f"{t:04d}.flow.ufg"), flow.to_channels())
        for k, m in enumerate(rendered.visible_masks[t]):
            rng = np.random.default_rng([spec.seed, MASK_SALT, t, k])
            corrupted = corrupt_mask(m, noise.mask_corruption, rng)
            write_ufg(os.path.join(frames_dir, f"{t:04d}.obj{k:02d}.mask.ufg"), corrupted.values)
    _atomic_write_text(os.path.join(out_dir, "groundtruth.txt"), "\n".join(gt_lines) + "\n")
    _atomic_write_text(os.path.join(out_dir, "distractors.txt"), "\n".join(dist_lines) + "\n")


def load_scene(dataset_dir: str | os.PathLike, n_proposals: int = 16, jitter_px: float = 2.5) -> SceneSequence:
    """Open a dataset directory as a SceneSequence (frames read lazily)."""
    dataset_dir = os.fspath(dataset_dir)
    meta_path = os.path.join(dataset_dir, "meta.json")
    if not os.path.exists(meta_path):
        raise SceneError(f"not a dataset directory (no meta.json): {dataset_dir}")
    with open(meta_path) as f:
        meta = json.load(f)
    noise = NoiseModel.from_dict(meta["noise"])
    num_frames = int(meta["num_frames"])
    n_objects = int(meta["n_objects"])
    dims = (int(meta["height"]), int(meta["width"]))
    frames_dir = os.path.join(dataset_dir, "frames")

    with open(os.path.join(dataset_dir, "groundtruth.txt")) as f:
        gt_lines = [ln.strip() for ln in f if ln.strip()]
    with open(os.path.join(dataset_dir, "distractors.txt")) as f:
        dist_lines = [ln.rstrip("\n") for ln in f]
    if len(gt_lines) != num_frames:
        raise SceneError(
            f"groundtruth.txt has {len(gt_lines)} lines, dataset declares {num_frames} frames"
        )

    missing = []
    for t in range(num_frames):
        if not os.path.exists(os.path.join(frames_dir, f"{t:04d}.flow.ufg")):
            missing.append(t)
    if missing:
        raise SceneError(f"dataset is missing flow frames: {missing}")

    gt_rot = [RotBox.from_flat([float(v) for v in ln.split(",")]) for ln in gt_lines]

    def parse_dists(line: str) -> list[AABox]:
        out = []
        for group in line.split(";"):
            if not group.strip():
                continue
            cx, cy, w, h = (float(v) for v in group.split(","))
            out.append(AABox(cx, cy, w, h))
        return out

    dists = [parse_dists(ln) if t < len(dist_lines) else [] for t, ln in enumerate(dist_lines)]
    while len(dists) < num_frames:
        dists.append([])

    def frame_fn(t: int) -> SequenceFrame:
        flow = FlowField.from_channels(read_ufg(os.path.join(frames_dir, f"{t:04d}.flow.ufg")))
        masks = []
        for k in range(n_objects):
            arr = read_ufg(os.path.join(frames_dir, f"{t:04d}.obj{k:02d}.mask.ufg"))
            masks.append(ProbMask(ScalarGrid(np.clip(arr[:, :, 0], 0.0, 1.0))))
        rot = gt_rot[t]
        return SequenceFrame(
            flow=flow,
            object_masks=masks,
            gt_rotbox=rot,
            gt_aabox=rot.enclosing_aabox(),
            distractor_boxes=dists[t],
        )

    return SceneSequence(
        dims=dims,
        num_frames=num_frames,
        seed=int(meta["seed"]),
        frame_fn=frame_fn,
        target_index=int(meta["target_index"]),
        noise=noise,
        n_proposals=n_proposals,
        jitter_px=jitter_px,
        name=os.path.basename(os.path.normpath(dataset_dir)),
    )


def _atomic_write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Benchmark scene generator: distractors, camera pans, bounded trajectories.
# ---------------------------------------------------------------------------


def _bounded_walk(
    rng: np.random.Generator,
    n: int,
    start: tuple[float, float],
    speed: float,
    lo: tuple[float, float],
    hi: tuple[float, float],
    turn_every: int = 8,
) -> list[tuple[float, float]]:
    """Piecewise-linear trajectory that bounces off the given margins."""
    pos = np.array(start, dtype=np.float64)
    angle = rng.uniform(0, 2 * math.pi)
    vel = speed * np.array([math.cos(angle), math.sin(angle)])
    out = [tuple(pos)]
    for t in range(1, n):
        if t % turn_every == 0:
            angle = rng.uniform(0, 2 * math.pi)
            vel = speed * np.array([math.cos(angle), math.sin(angle)])
        pos = pos + vel
        for ax in (0, 1):
            if pos[ax] < lo[ax]:
                pos[ax] = 2 * lo[ax] - pos[ax]
                vel[ax] = -vel[ax]
            elif pos[ax] > hi[ax]:
                pos[ax] = 2 * hi[ax] - pos[ax]
                vel[ax] = -vel[ax]
        out.append((float(pos[0]), float(pos[1])))
    return out


def benchmark_scene(
    seed: int,
    width: int = 40,
    height: int = 40,
    num_frames: int = 40,
    target_speed: float = 3.0,
    follower_delay: int = 3,
    camera_pan: float = 2.5,
    target_size: float = 7.0,
    follower_scale: float = 1.0,
) -> SceneSpec:
    """A challenge scene: fast target, trailing distractor, camera pans.

    The distractor follows the target's own path a few frames behind, which
    puts it exactly where position-only cues expect the target to be.
    """
    rng = np.random.default_rng([seed, 99])
    margin = 8.0
    lo = (margin, margin)
    hi = (width - 1 - margin, height - 1 - margin)
    start = (rng.uniform(margin, width - 1 - margin), rng.uniform(margin, height - 1 - margin))
    path = _bounded_walk(rng, num_frames + follower_delay, start, target_speed, lo, hi)

    target_path = path[follower_delay:]
    follower_path = path[:num_frames]

    # Second distractor rides alongside the target at a fixed lateral offset.
    side_angle = rng.uniform(0, 2 * math.pi)
    side_offset = (11.0 * math.cos(side_angle), 11.0 * math.sin(side_angle))
    side_path = tuple(
        (
            min(max(x + side_offset[0], 2.0), width - 3.0),
            min(max(y + side_offset[1], 2.0), height - 3.0),
        )
        for x, y in target_path
    )

    shape = "rectangle" if rng.random() < 0.5 else "ellipse"
    fsize = target_size * follower_scale
    target = ObjectSpec(shape=shape, size=(target_size, target_size), centers=tuple(target_path), is_target=True)
    follower = ObjectSpec(shape=shape, size=(fsize, fsize), centers=tuple(follower_path))
    sider = ObjectSpec(shape=shape, size=(target_size, target_size), centers=side_path)

    shifts = [(0.0, 0.0)] * num_frames
    pan_start = int(rng.integers(num_frames // 3, num_frames // 2))
    pan_len = 6
    direction = rng.choice([-1.0, 1.0])
    for t in range(pan_start, min(pan_start + pan_len, num_frames)):
        shifts[t] = (direction * camera_pan, 0.0)

    return SceneSpec(
        width=width,
        height=height,
        num_frames=num_frames,
        objects=(follower, sider, target),  # target listed last: occludes on contact
        camera_shift=tuple(shifts),
        seed=seed,
    )


def benchmark_noise(level: str = "default") -> NoiseModel:
    """Noise model used by the synthetic robustness suite."""
    if level == "clean":
        return NoiseModel(appearance_confusion=0.85, appearance_noise_sd=0.02)
    return NoiseModel(
        flow_noise_scale=0.7,
        calibration_factor=1.0,
        appearance_confusion=0.8,
        scale_spread=1.1,
        scale_cap=3.5,
        appearance_noise_sd=0.02,
    )


def benchmark_suite(
    count: int = 20,
    base_seed: int = 0,
    n_proposals: int = 16,
    noise: NoiseModel | None = None,
) -> list[SceneSequence]:
    """The synthetic robustness suite: distractor + camera-motion scenes
    under heteroscedastic calibrated flow noise.

    Alternates between a same-size and an enlarged trailing distractor;
    the latter stresses flow-rejection filtering, the former the motion
    model.
    """
    noise = noise or benchmark_noise()
    seqs = []
    for i in range(count):
        seed = base_seed + i
        spec = benchmark_scene(seed, follower_scale=1.0 if i % 2 == 0 else 1.3)
        seqs.append(
            sequence_from_rendered(
                render_scene(spec), noise, n_proposals=n_proposals, name=f"bench{seed:04d}"
            )
        )
    return seqs
