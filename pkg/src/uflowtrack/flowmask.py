"""Foreground-probability propagation through an uncertainty-aware flow field.

Each pixel of frame t carries a backward correspondence model: a per-axis
Laplace distribution over its source position in frame t-1, with mean
displacement (u, v) and scale (b_u, b_v).  Propagating the previous frame's
foreground probabilities through these kernels yields the per-pixel
foreground probability at frame t (the "flow mask").

The kernel factorizes over axes, so the truncated fast path evaluates two
1D weight vectors per pixel instead of a dense 2D window.  The exact,
untruncated evaluation is kept as `propagate_mask_oracle` and is the ground
truth for the fast path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import GridError, ProbMask, ScalarGrid

# Floor for Laplace scales: keeps the zero-uncertainty limit a well-defined
# near-delta kernel instead of a division by zero.
B_MIN = 1e-3

# Pixel budget per vectorized chunk of the fast path (pixels * window area).
_CHUNK_BUDGET = 4_000_000


class FlowError(ValueError):
    pass


class FlowOffGridError(FlowError):
    """The truncated correspondence window lies entirely outside the image."""


@dataclass(frozen=True)
class FlowField:
    """Backward correspondence field from frame t to frame t-1.

    mean_u/mean_v hold per-pixel mean displacement in pixels (x and y axis);
    scale_u/scale_v hold the per-axis Laplace scales, floored at B_MIN.
    """

    mean_u: ScalarGrid
    mean_v: ScalarGrid
    scale_u: ScalarGrid
    scale_v: ScalarGrid

    def __post_init__(self):
        shape = self.mean_u.shape
        for name in ("mean_v", "scale_u", "scale_v"):
            if getattr(self, name).shape != shape:
                raise FlowError("flow component grids must share dimensions")
        if self.scale_u.values.min() < B_MIN or self.scale_v.values.min() < B_MIN:
            raise FlowError(f"Laplace scales must be >= {B_MIN}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mean_u.shape

    @classmethod
    def from_arrays(cls, mean_u, mean_v, scale_u, scale_v) -> "FlowField":
        return cls(ScalarGrid(mean_u), ScalarGrid(mean_v), ScalarGrid(scale_u), ScalarGrid(scale_v))

    @classmethod
    def constant(cls, height: int, width: int, mean: tuple[float, float] = (0.0, 0.0), scale: float = B_MIN) -> "FlowField":
        mu, mv = mean
        return cls.from_arrays(
            np.full((height, width), float(mu)),
            np.full((height, width), float(mv)),
            np.full((height, width), float(scale)),
            np.full((height, width), float(scale)),
        )

    @classmethod
    def identity(cls, height: int, width: int) -> "FlowField":
        return cls.constant(height, width, (0.0, 0.0), B_MIN)

    def with_scale(self, scale: float) -> "FlowField":
        """Same means with both scale grids replaced by a constant."""
        h, w = self.shape
        s = np.full((h, w), float(scale))
        return FlowField(self.mean_u, self.mean_v, ScalarGrid(s), ScalarGrid(s.copy()))

    def to_channels(self) -> np.ndarray:
        """(h, w, 4) array ordered (u, v, b_u, b_v) for UFG1 serialization."""
        return np.stack(
            [self.mean_u.values, self.mean_v.values, self.scale_u.values, self.scale_v.values],
            axis=2,
        )

    @classmethod
    def from_channels(cls, arr: np.ndarray) -> "FlowField":
        if arr.ndim != 3 or arr.shape[2] != 4:
            raise FlowError(f"flow container must have 4 channels, got shape {arr.shape}")
        return cls.from_arrays(
            arr[:, :, 0], arr[:, :, 1], np.maximum(arr[:, :, 2], B_MIN), np.maximum(arr[:, :, 3], B_MIN)
        )


@dataclass(frozen=True)
class KernelConfig:
    """Evaluation policy for the discrete correspondence kernel.

    truncation_k sets the per-axis half-width of the support as
    ceil(truncation_k * b), which bounds the discarded tail mass by
    exp(-truncation_k).  With renormalize_at_border the weights are
    renormalized over in-bounds pixels; otherwise out-of-image mass is
    treated as background and simply dropped.
    """

    truncation_k: float = 12.0
    renormalize_at_border: bool = True

    def __post_init__(self):
        if self.truncation_k < 1.0:
            raise FlowError(f"truncation_k must be >= 1, got {self.truncation_k}")


def laplace_density(u, mu, b):
    """Laplace density (1 / 2b) * exp(-|u - mu| / b); b must be positive."""
    b_arr = np.asarray(b, dtype=np.float64)
    if np.any(b_arr <= 0.0):
        raise FlowError("nonpositive scale")
    out = np.exp(-np.abs(np.asarray(u, dtype=np.float64) - mu) / b_arr) / (2.0 * b_arr)
    return float(out) if np.isscalar(u) or np.ndim(out) == 0 else out


def _axis_windows(centers: np.ndarray, half: np.ndarray, size: int):
    """Integer window [ceil(c - h), floor(c + h)] per pixel, padded to equal width.

    Returns (positions (n, k) int, window-membership mask, in-bounds mask).
    """
    lo = np.ceil(centers - half).astype(np.int64)
    hi = np.floor(centers + half).astype(np.int64)
    k = int((hi - lo).max()) + 1
    pos = lo[:, None] + np.arange(k)[None, :]
    in_window = pos <= hi[:, None]
    in_bounds = (pos >= 0) & (pos < size)
    return pos, in_window, in_bounds


def _axis_weights(pos: np.ndarray, centers: np.ndarray, scales: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Unnormalized per-axis Laplace weights over kept positions.

    The common factor exp(d_min / b) / (2b) is divided out so the largest
    kept weight is exactly 1.0; renormalization cancels it, and near-delta
    scales cannot underflow to an all-zero row.
    """
    dist = np.abs(pos - centers[:, None])
    dist_kept = np.where(keep, dist, np.inf)
    dmin = dist_kept.min(axis=1)
    w = np.exp((dmin[:, None] - dist) / scales[:, None])
    w[~keep] = 0.0
    return w


def correspondence_kernel(
    pixel: tuple[int, int],
    flow: FlowField,
    cfg: KernelConfig = KernelConfig(),
) -> np.ndarray:
    """Discrete correspondence weights of one frame-t pixel over frame t-1.

    Returns a dense (height, width) array: the per-axis Laplace densities
    evaluated at integer offsets over the truncated window, restricted to
    the image, renormalized to sum to 1.  Reference/diagnostic path; the
    propagation fast path computes the same weights without materializing
    the full grid.
    """
    row, col = pixel
    h, w = flow.shape
    if not (0 <= row < h and 0 <= col < w):
        raise FlowError(f"pixel {pixel} out of bounds for {h}x{w} grid")

    mu_u = flow.mean_u.values[row, col]
    mu_v = flow.mean_v.values[row, col]
    bu = flow.scale_u.values[row, col]
    bv = flow.scale_v.values[row, col]

    cx = col + mu_u
    cy = row + mu_v
    hx = float(np.ceil(cfg.truncation_k * bu))
    hy = float(np.ceil(cfg.truncation_k * bv))

    jx = np.arange(int(np.ceil(cx - hx)), int(np.floor(cx + hx)) + 1)
    jy = np.arange(int(np.ceil(cy - hy)), int(np.floor(cy + hy)) + 1)
    jx_in = jx[(jx >= 0) & (jx < w)]
    jy_in = jy[(jy >= 0) & (jy < h)]
    if len(jx_in) == 0 or len(jy_in) == 0:
        raise FlowOffGridError("correspondence off-grid")

    if cfg.renormalize_at_border:
        jx, jy = jx_in, jy_in
    wx = np.exp(-np.abs(jx - cx) / bu)
    wy = np.exp(-np.abs(jy - cy) / bv)
    # Rescale so the peak product weight is 1 before normalizing: avoids a
    # fully underflowed kernel in the near-delta limit.
    wx /= wx.max()
    wy /= wy.max()
    kernel2d = np.outer(wy, wx)
    total = kernel2d.sum()
    kernel2d /= total

    out = np.zeros((h, w))
    keep_y = (jy >= 0) & (jy < h)
    keep_x = (jx >= 0) & (jx < w)
    out[np.ix_(jy[keep_y], jx[keep_x])] = kernel2d[np.ix_(keep_y, keep_x)]
    return out


def propagate_mask(prev: ProbMask, flow: FlowField, cfg: KernelConfig = KernelConfig()) -> ProbMask:
    """Propagate foreground probabilities from frame t-1 onto frame t.

    Truncated separable fast path.  Pixels whose entire correspondence
    window falls outside the image get probability 0 (no evidence).
    """
    if prev.shape != flow.shape:
        raise GridError(f"mask shape {prev.shape} does not match flow shape {flow.shape}")
    h, w = prev.shape
    n = h * w

    mu_u = flow.mean_u.values.ravel()
    mu_v = flow.mean_v.values.ravel()
    bu = flow.scale_u.values.ravel()
    bv = flow.scale_v.values.ravel()
    cx = np.tile(np.arange(w, dtype=np.float64), h) + mu_u
    cy = np.repeat(np.arange(h, dtype=np.float64), w) + mu_v
    hx = np.ceil(cfg.truncation_k * bu)
    hy = np.ceil(cfg.truncation_k * bv)

    prev_vals = prev.values
    out = np.zeros(n)
    max_k = (int((np.floor(cx + hx) - np.ceil(cx - hx)).max()) + 1) * (
        int((np.floor(cy + hy) - np.ceil(cy - hy)).max()) + 1
    )
    chunk = max(1, _CHUNK_BUDGET // max(1, max_k))

    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        px, wnd_x, inb_x = _axis_windows(cx[sl], hx[sl], w)
        py, wnd_y, inb_y = _axis_windows(cy[sl], hy[sl], h)
        keep_x = wnd_x & inb_x if cfg.renormalize_at_border else wnd_x
        keep_y = wnd_y & inb_y if cfg.renormalize_at_border else wnd_y

        has_x = keep_x.any(axis=1) & inb_x.any(axis=1)
        has_y = keep_y.any(axis=1) & inb_y.any(axis=1)
        on_grid = has_x & has_y
        if not on_grid.any():
            continue

        wx = np.zeros_like(px, dtype=np.float64)
        wy = np.zeros_like(py, dtype=np.float64)
        wx[on_grid] = _axis_weights(px[on_grid], cx[sl][on_grid], bu[sl][on_grid], keep_x[on_grid])
        wy[on_grid] = _axis_weights(py[on_grid], cy[sl][on_grid], bv[sl][on_grid], keep_y[on_grid])
        sx = wx.sum(axis=1)
        sy = wy.sum(axis=1)
        sx[~on_grid] = 1.0
        sy[~on_grid] = 1.0
        wx /= sx[:, None]
        wy /= sy[:, None]
        if not cfg.renormalize_at_border:
            wx[~inb_x] = 0.0
            wy[~inb_y] = 0.0

        gx = np.clip(px, 0, w - 1)
        gy = np.clip(py, 0, h - 1)
        gathered = prev_vals[gy[:, :, None], gx[:, None, :]]
        horiz = np.einsum("nkl,nl->nk", gathered, wx)
        out[sl] = np.einsum("nk,nk->n", horiz, wy)

    return ProbMask(ScalarGrid(np.clip(out.reshape(h, w), 0.0, 1.0)))


def propagate_mask_oracle(prev: ProbMask, flow: FlowField) -> ProbMask:
    """Exact untruncated propagation over all in-bounds source pixels.

    Evaluates every pixel's full correspondence distribution over the whole
    previous frame with border renormalization.  Intended for small grids
    (<= 64x64); ground truth for `propagate_mask`.
    """
    if prev.shape != flow.shape:
        raise GridError(f"mask shape {prev.shape} does not match flow shape {flow.shape}")
    h, w = prev.shape

    cx = np.arange(w, dtype=np.float64)[None, :] + flow.mean_u.values
    cy = np.arange(h, dtype=np.float64)[:, None] + flow.mean_v.values
    bu = flow.scale_u.values
    bv = flow.scale_v.values

    dx = np.abs(np.arange(w, dtype=np.float64)[None, None, :] - cx[:, :, None])
    dy = np.abs(np.arange(h, dtype=np.float64)[None, None, :] - cy[:, :, None])
    wx = np.exp((dx.min(axis=2, keepdims=True) - dx) / bu[:, :, None])
    wy = np.exp((dy.min(axis=2, keepdims=True) - dy) / bv[:, :, None])
    wx /= wx.sum(axis=2, keepdims=True)
    wy /= wy.sum(axis=2, keepdims=True)

    # S[r, c, y] = sum over source columns x of wx[r, c, x] * prev[y, x],
    # then contract the source rows y against wy.
    s = np.einsum("rcx,yx->rcy", wx, prev.values)
    out = np.einsum("rcy,rcy->rc", s, wy)
    return ProbMask(ScalarGrid(np.clip(out, 0.0, 1.0)))
