"""Deterministic synthetic imagery for fixtures and benchmark scenes.

Textures combine a bilinearly upsampled coarse grid with a mid-scale
detail layer: the coarse gradients guide descent-based block matching
toward the true displacement while the detail keeps cost surfaces from
flattening into rounding plateaus, so diamond descent lands on the same
minima as exhaustive search.
"""

from __future__ import annotations

import numpy as np

from .motion import Frame


def _bilinear_grid(rng: np.random.Generator, height: int, width: int, cell: int, amp: float) -> np.ndarray:
    gh = height // cell + 2
    gw = width // cell + 2
    coarse = rng.uniform(0.0, amp, size=(gh, gw))
    ys = (np.arange(height) + 0.5) / cell
    xs = (np.arange(width) + 0.5) / cell
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = coarse[y0][:, x0]
    b = coarse[y0][:, x0 + 1]
    c = coarse[y0 + 1][:, x0]
    d = coarse[y0 + 1][:, x0 + 1]
    return a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx + c * fy * (1 - fx) + d * fy * fx


def smooth_texture(rng: np.random.Generator, height: int, width: int,
                   cell: int = 16, lo: int = 30, hi: int = 225) -> np.ndarray:
    """Two-scale uint8 texture: smooth base plus mid-frequency detail."""
    span = hi - lo
    base = _bilinear_grid(rng, height, width, cell, 0.77 * span)
    detail = _bilinear_grid(rng, height, width, max(2, cell * 3 // 8), 0.23 * span)
    return np.clip(np.round(lo + base + detail), 0, 255).astype(np.uint8)


def textured_frame(seed: int, height: int = 64, width: int = 64, cell: int = 16) -> Frame:
    return Frame(smooth_texture(np.random.default_rng(seed), height, width, cell))


def translated_pair(seed: int, shift: tuple, height: int = 64, width: int = 64,
                    cell: int = 16) -> tuple:
    """(prev, cur) where cur's content is prev's moved by (dx, dy).

    Both frames are crops of one larger master texture (a camera pan), so
    content entering at the edges is real texture rather than padding.
    The construction itself is the ground-truth oracle for the shift.
    """
    dx, dy = shift
    margin = max(abs(dx), abs(dy))
    rng = np.random.default_rng(seed)
    master = smooth_texture(rng, height + 2 * margin, width + 2 * margin, cell)
    prev = master[margin : margin + height, margin : margin + width]
    # cur[x] = prev[x - d]  ->  cur crop origin shifts by -d
    cur = master[margin - dy : margin - dy + height, margin - dx : margin - dx + width]
    return Frame(prev.copy()), Frame(cur.copy())


def moving_square_pair(seed: int, square_origin: tuple, shift: tuple,
                       square: int = 16, height: int = 64, width: int = 64) -> tuple:
    """(prev, cur, moved_mask): one bright textured square moves over a
    static dark background.

    moved_mask marks macroblocks touched by the square in either frame,
    i.e. the blocks whose content actually changed.
    """
    rng = np.random.default_rng(seed)
    background = smooth_texture(rng, height, width, cell=16, lo=20, hi=90)
    patch = smooth_texture(rng, square, square, cell=4, lo=170, hi=250)
    x0, y0 = square_origin
    dx, dy = shift

    def render(px, py):
        img = background.copy()
        img[py : py + square, px : px + square] = patch
        return Frame(img)

    prev = render(x0, y0)
    cur = render(x0 + dx, y0 + dy)
    gh, gw = height // 16, width // 16
    mask = np.zeros((gh, gw), dtype=bool)
    for px, py in ((x0, y0), (x0 + dx, y0 + dy)):
        gx0, gy0 = px // 16, py // 16
        gx1, gy1 = (px + square - 1) // 16, (py + square - 1) // 16
        mask[gy0 : gy1 + 1, gx0 : gx1 + 1] = True
    return prev, cur, mask
