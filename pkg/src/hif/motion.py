"""Macroblock motion-vector extraction by block matching.

Displacements follow the convention (current position - previous
position): a block whose content moved right by 3 pixels between frames
gets dx = +3. Matching cost is the sum of absolute differences (SAD) over
16x16 luma blocks; RGB frames are reduced to luma with the integer
approximation (2R + 5G + B) / 8 so that no codec dependency is needed.

Ties are broken toward zero motion: smallest dx^2 + dy^2, then smallest
dy, then smallest dx. Search is clipped so the displaced source block
always lies fully inside the previous frame.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

MACROBLOCK = 16
DEFAULT_SEARCH_RANGE = 8

# Large diamond for the coarse descent; the fine stage walks the full
# +-1 neighborhood (small diamond plus corners) so diagonal valleys do
# not stall it one step short of the minimum.
_LDSP = ((0, -2), (-1, -1), (1, -1), (-2, 0), (0, 0), (2, 0), (-1, 1), (1, 1), (0, 2))
_REFINE = ((0, -1), (-1, 0), (0, 0), (1, 0), (0, 1), (-1, -1), (1, -1), (-1, 1), (1, 1))


class MotionError(ValueError):
    """Invalid frames or parameters for motion estimation."""


@dataclass(frozen=True)
class Frame:
    """One 8-bit observation image, grayscale or RGB."""

    pixels: np.ndarray  # (H, W) or (H, W, 3) uint8

    def __post_init__(self):
        p = self.pixels
        if p.dtype != np.uint8:
            raise MotionError(f"frame pixels must be uint8, got {p.dtype}")
        if p.ndim == 2:
            pass
        elif p.ndim == 3 and p.shape[2] == 3:
            pass
        else:
            raise MotionError(f"frame must be (H, W) or (H, W, 3), got {p.shape}")
        h, w = p.shape[:2]
        if h % MACROBLOCK or w % MACROBLOCK:
            raise MotionError(f"frame dims {h}x{w} must be divisible by {MACROBLOCK}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else 3

    def luma(self) -> np.ndarray:
        """Integer luma plane, (H, W) int32."""
        p = self.pixels
        if p.ndim == 2:
            return p.astype(np.int32)
        r = p[:, :, 0].astype(np.int32)
        g = p[:, :, 1].astype(np.int32)
        b = p[:, :, 2].astype(np.int32)
        return (2 * r + 5 * g + b) // 8


@dataclass(frozen=True)
class MotionField:
    """Per-macroblock integer displacements plus their matching costs."""

    vectors: np.ndarray  # (GH, GW, 2) int32, last axis (dx, dy)
    costs: np.ndarray    # (GH, GW) int64 SAD
    search_range: int

    def __post_init__(self):
        if np.abs(self.vectors).max(initial=0) > self.search_range:
            raise MotionError("displacement exceeds search range")

    @property
    def grid_dims(self) -> tuple:
        return self.vectors.shape[:2]


@dataclass(frozen=True)
class GOP:
    """A hindsight window: h motion fields (oldest first) plus the keyframe."""

    motion_fields: tuple
    keyframe: Frame

    def __post_init__(self):
        gh = self.keyframe.height // MACROBLOCK
        gw = self.keyframe.width // MACROBLOCK
        for f in self.motion_fields:
            if f.grid_dims != (gh, gw):
                raise MotionError(f"field grid {f.grid_dims} != keyframe grid {(gh, gw)}")

    @property
    def hindsight_length(self) -> int:
        return len(self.motion_fields)


def zero_field(grid_dims: tuple, search_range: int) -> MotionField:
    gh, gw = grid_dims
    return MotionField(np.zeros((gh, gw, 2), np.int32), np.zeros((gh, gw), np.int64), search_range)


def _tie_key(cost, dx, dy):
    return (cost, dx * dx + dy * dy, dy, dx)


def _window_bounds(block_origin, dims, search_range):
    """Admissible (dx, dy) ranges keeping the source block inside prev."""
    bx, by = block_origin
    h, w = dims
    if not (0 <= bx <= w - MACROBLOCK and 0 <= by <= h - MACROBLOCK):
        raise MotionError(f"block origin {block_origin} outside frame {w}x{h}")
    # source origin = block origin - displacement, must stay in bounds
    dx_lo = max(-search_range, bx - (w - MACROBLOCK))
    dx_hi = min(search_range, bx)
    dy_lo = max(-search_range, by - (h - MACROBLOCK))
    dy_hi = min(search_range, by)
    return dx_lo, dx_hi, dy_lo, dy_hi


def exhaustive_block_match(prev: Frame, cur: Frame, block_origin, search_range: int = DEFAULT_SEARCH_RANGE):
    """Global SAD minimum over the clipped search window.

    Returns (dx, dy, cost). This is the correctness oracle for the fast
    search path.
    """
    return _exhaustive_on_luma(prev.luma(), cur.luma(), block_origin, search_range)


def _exhaustive_on_luma(prev_luma, cur_luma, block_origin, search_range):
    bx, by = block_origin
    dx_lo, dx_hi, dy_lo, dy_hi = _window_bounds(block_origin, cur_luma.shape, search_range)
    block = cur_luma[by : by + MACROBLOCK, bx : bx + MACROBLOCK]
    # Region of prev containing every candidate source block.
    y0, y1 = by - dy_hi, by - dy_lo + MACROBLOCK
    x0, x1 = bx - dx_hi, bx - dx_lo + MACROBLOCK
    region = prev_luma[y0:y1, x0:x1]
    windows = np.lib.stride_tricks.sliding_window_view(region, (MACROBLOCK, MACROBLOCK))
    costs = np.abs(windows - block).sum(axis=(2, 3), dtype=np.int64)
    # windows[i, j] is the source at origin (y0 + i, x0 + j):
    # dy = by - (y0 + i) = dy_hi - i, dx = dx_hi - j.
    dys = dy_hi - np.arange(costs.shape[0])
    dxs = dx_hi - np.arange(costs.shape[1])
    dy_grid, dx_grid = np.meshgrid(dys, dxs, indexing="ij")
    flat_cost = costs.reshape(-1)
    flat_dx = dx_grid.reshape(-1)
    flat_dy = dy_grid.reshape(-1)
    order = np.lexsort((flat_dx, flat_dy, flat_dx**2 + flat_dy**2, flat_cost))
    best = order[0]
    return int(flat_dx[best]), int(flat_dy[best]), int(flat_cost[best])


def diamond_search(prev: Frame, cur: Frame, block_origin, search_range: int = DEFAULT_SEARCH_RANGE):
    """Diamond-pattern descent; returns (dx, dy, cost).

    The large diamond is descended from a small set of seeds spread over
    the clipped window (the zero vector plus window corners and edge
    midpoints, standing in for the neighbor predictors codecs use), then
    refined with the +-1 neighborhood. Only a subset of the window is ever
    visited, so the returned cost can never beat the exhaustive minimum;
    on smooth content every seed funnels into the same basin and the
    result matches exhaustive search exactly.
    """
    return _diamond_on_luma(prev.luma(), cur.luma(), block_origin, search_range)


def _diamond_on_luma(prev_luma, cur_luma, block_origin, search_range):
    bx, by = block_origin
    dx_lo, dx_hi, dy_lo, dy_hi = _window_bounds(block_origin, cur_luma.shape, search_range)
    block = cur_luma[by : by + MACROBLOCK, bx : bx + MACROBLOCK]
    cache: dict = {}

    def cost_at(dx, dy):
        if not (dx_lo <= dx <= dx_hi and dy_lo <= dy <= dy_hi):
            return None
        key = (dx, dy)
        if key not in cache:
            sy, sx = by - dy, bx - dx
            src = prev_luma[sy : sy + MACROBLOCK, sx : sx + MACROBLOCK]
            cache[key] = int(np.abs(src - block).sum(dtype=np.int64))
        return cache[key]

    def descend(pattern, cx, cy):
        while True:
            best = (_tie_key(cache[(cx, cy)], cx, cy), cx, cy)
            for ox, oy in pattern:
                dx, dy = cx + ox, cy + oy
                c = cost_at(dx, dy)
                if c is None:
                    continue
                key = _tie_key(c, dx, dy)
                if key < best[0]:
                    best = (key, dx, dy)
            if (best[1], best[2]) == (cx, cy):
                return cx, cy
            cx, cy = best[1], best[2]

    seeds = {(0, 0)}
    for sx in (dx_lo, (dx_lo + dx_hi) // 2, dx_hi):
        for sy in (dy_lo, (dy_lo + dy_hi) // 2, dy_hi):
            seeds.add((sx, sy))
    best = None
    for seed in sorted(seeds):
        cost_at(*seed)
        cx, cy = descend(_LDSP, *seed)
        cx, cy = descend(_REFINE, cx, cy)
        key = _tie_key(cache[(cx, cy)], cx, cy)
        if best is None or key < best[0]:
            best = (key, cx, cy)
    return best[1], best[2], best[0][0]


@dataclass(frozen=True)
class MatchParams:
    search_range: int = DEFAULT_SEARCH_RANGE
    method: str = "exhaustive"  # or "diamond"

    def __post_init__(self):
        if self.method not in ("exhaustive", "diamond"):
            raise MotionError(f"unknown matching method {self.method!r}")
        if self.search_range < 1:
            raise MotionError("search_range must be >= 1")


def _thread_count() -> int:
    raw = os.environ.get("HIF_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return max(1, n)


def estimate_motion_field(prev: Frame, cur: Frame, params: MatchParams = MatchParams()) -> MotionField:
    """One displacement per macroblock between two same-sized frames.

    Blocks are independent, so they may be matched on worker threads
    (HIF_THREADS > 1); every block writes its own grid cell, making the
    result identical regardless of thread count.
    """
    if (prev.height, prev.width) != (cur.height, cur.width):
        raise MotionError(f"frame dims differ: {prev.height}x{prev.width} vs {cur.height}x{cur.width}")
    prev_luma = prev.luma()
    cur_luma = cur.luma()
    gh, gw = cur.height // MACROBLOCK, cur.width // MACROBLOCK
    vectors = np.zeros((gh, gw, 2), np.int32)
    costs = np.zeros((gh, gw), np.int64)
    match = _exhaustive_on_luma if params.method == "exhaustive" else _diamond_on_luma

    def do_row(gy):
        for gx in range(gw):
            dx, dy, cost = match(prev_luma, cur_luma, (gx * MACROBLOCK, gy * MACROBLOCK), params.search_range)
            vectors[gy, gx] = (dx, dy)
            costs[gy, gx] = cost

    workers = _thread_count()
    if workers > 1 and gh > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(do_row, range(gh)))
    else:
        for gy in range(gh):
            do_row(gy)
    return MotionField(vectors, costs, params.search_range)


def build_gop(frames: Sequence[Frame], h: int, params: MatchParams = MatchParams()) -> GOP:
    """Assemble a hindsight window from up to h+1 time-ordered frames.

    The last frame becomes the keyframe; consecutive pairs yield the
    motion fields, newest last. When fewer than h+1 frames have elapsed,
    the missing leading fields are all-zero ("nothing happened").
    """
    if len(frames) < 2:
        raise MotionError(f"build_gop needs at least 2 frames, got {len(frames)}")
    if len(frames) > h + 1:
        raise MotionError(f"got {len(frames)} frames for hindsight length {h}")
    fields = [estimate_motion_field(a, b, params) for a, b in zip(frames[:-1], frames[1:])]
    keyframe = frames[-1]
    grid = (keyframe.height // MACROBLOCK, keyframe.width // MACROBLOCK)
    pad = [zero_field(grid, params.search_range) for _ in range(h - len(fields))]
    return GOP(tuple(pad + fields), keyframe)


def mv_tensor(gop: GOP) -> np.ndarray:
    """Stack a GOP's fields into an (h, GH, GW, 2) float32 tensor.

    Values are raw displacements divided by the search range, so they lie
    in [-1, 1]. The keyframe is not part of the tensor; it flows to the
    observation encoder separately.
    """
    if gop.hindsight_length == 0:
        raise MotionError("GOP has no motion fields")
    stacked = np.stack([f.vectors for f in gop.motion_fields]).astype(np.float32)
    ranges = np.array([f.search_range for f in gop.motion_fields], dtype=np.float32)
    return stacked / ranges[:, None, None, None]
