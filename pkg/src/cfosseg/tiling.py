"""Overlap sliding-window cropping and center-crop stitching.

The source image is padded on all sides with `margin` black pixels, then a
`window`-sized square slides in steps of `window - 2*margin`. Adjacent tiles
overlap by twice the margin; stitching keeps only each tile's center region,
so every stitched pixel comes from the interior of some window.

Two grid modes:
  * ``paper``: drop the right/bottom remainder (a 10231x7162 source with
    window 128 and margin 4 yields exactly 85x59 tiles covering 10200x7080).
  * ``full``: extra black padding on the right/bottom so the stride divides
    and the covered region contains the whole source.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass

import numpy as np

from .imageio import ImageBuffer, MaskBuffer


class GeometryError(ValueError):
    """Raised for impossible window/margin combinations or mismatched grids."""


@dataclass(frozen=True, order=True)
class TileId:
    row: int
    col: int


@dataclass(frozen=True)
class TileGrid:
    source_width: int
    source_height: int
    window: int
    margin: int
    cols: int
    rows: int
    mode: str

    @property
    def stride(self) -> int:
        return self.window - 2 * self.margin

    @property
    def covered_width(self) -> int:
        return self.cols * self.stride

    @property
    def covered_height(self) -> int:
        return self.rows * self.stride

    def tile_ids(self) -> list[TileId]:
        return [TileId(r, c) for r in range(self.rows) for c in range(self.cols)]


def compute_grid(source_width: int, source_height: int, window: int, margin: int,
                 mode: str = "paper") -> TileGrid:
    """Window-position counts for a source of the given size.

    paper mode: count positions p with p*stride + window <= dim + 2*margin.
    full mode: smallest count whose covered span reaches the source dim.
    """
    if window <= 2 * margin:
        raise GeometryError(f"window {window} must exceed twice the margin {margin}")
    if source_width < 1 or source_height < 1:
        raise GeometryError("source dimensions must be >= 1")
    if mode not in ("paper", "full"):
        raise GeometryError(f"unknown grid mode {mode!r}")
    stride = window - 2 * margin
    if mode == "paper":
        cols = (source_width + 2 * margin - window) // stride + 1
        rows = (source_height + 2 * margin - window) // stride + 1
    else:
        cols = -(-source_width // stride)
        rows = -(-source_height // stride)
    return TileGrid(source_width, source_height, window, margin, cols, rows, mode)


def _padded(arr: np.ndarray, grid: TileGrid) -> np.ndarray:
    """Source embedded in black padding large enough for every window."""
    a, x = grid.margin, grid.window
    need_h = max(grid.source_height + 2 * a, (grid.rows - 1) * grid.stride + x if grid.rows else 0)
    need_w = max(grid.source_width + 2 * a, (grid.cols - 1) * grid.stride + x if grid.cols else 0)
    out = np.zeros((need_h, need_w), dtype=arr.dtype)
    out[a:a + grid.source_height, a:a + grid.source_width] = arr
    return out


def _check_dims(arr: np.ndarray, grid: TileGrid) -> None:
    if arr.shape != (grid.source_height, grid.source_width):
        raise GeometryError(
            f"image {arr.shape[1]}x{arr.shape[0]} does not match grid source "
            f"{grid.source_width}x{grid.source_height}"
        )


def _crop_array(arr: np.ndarray, grid: TileGrid) -> dict[TileId, np.ndarray]:
    _check_dims(arr, grid)
    padded = _padded(arr, grid)
    x, s = grid.window, grid.stride
    tiles = {}
    for r in range(grid.rows):
        for c in range(grid.cols):
            tiles[TileId(r, c)] = padded[r * s:r * s + x, c * s:c * s + x].copy()
    return tiles


def _stitch_arrays(tiles: dict[TileId, np.ndarray], grid: TileGrid, dtype) -> np.ndarray:
    a, x, s = grid.margin, grid.window, grid.stride
    out = np.zeros((grid.covered_height, grid.covered_width), dtype=dtype)
    for r in range(grid.rows):
        for c in range(grid.cols):
            tid = TileId(r, c)
            if tid not in tiles:
                raise GeometryError(f"missing tile {tile_name(tid)} for stitch")
            t = tiles[tid]
            if t.shape != (x, x):
                raise GeometryError(
                    f"tile {tile_name(tid)} has shape {t.shape}, expected {x}x{x}"
                )
            out[r * s:(r + 1) * s, c * s:(c + 1) * s] = t[a:x - a, a:x - a]
    return out


def crop(image: ImageBuffer, grid: TileGrid) -> dict[TileId, ImageBuffer]:
    """Cut the image into window-sized overlapping tiles (black padding outside)."""
    return {tid: ImageBuffer.from_array(t) for tid, t in _crop_array(image.pixels, grid).items()}


def crop_mask(mask: MaskBuffer, grid: TileGrid) -> dict[TileId, MaskBuffer]:
    return {tid: MaskBuffer.from_array(t) for tid, t in _crop_array(mask.labels, grid).items()}


def stitch(tiles: dict[TileId, ImageBuffer], grid: TileGrid) -> ImageBuffer:
    """Reassemble tile center crops into a covered-region image.

    Inverse of :func:`crop` on the covered region: the margin band of every
    tile is discarded and the (window - 2*margin)^2 centers are placed in
    row-major grid order.
    """
    arrays = {tid: t.pixels for tid, t in tiles.items()}
    return ImageBuffer.from_array(_stitch_arrays(arrays, grid, np.float32))


def stitch_masks(tiles: dict[TileId, MaskBuffer], grid: TileGrid) -> MaskBuffer:
    arrays = {tid: t.labels for tid, t in tiles.items()}
    return MaskBuffer.from_array(_stitch_arrays(arrays, grid, np.uint8))


_NAME_RE = re.compile(r"^(\d+)-(\d+)$")


def tile_name(tid: TileId) -> str:
    """Zero-based "{row}-{col}" naming for tile files."""
    return f"{tid.row}-{tid.col}"


def parse_tile_name(name: str) -> TileId:
    m = _NAME_RE.match(name)
    if not m:
        raise ValueError(f"malformed tile name {name!r}, expected 'row-col'")
    return TileId(int(m.group(1)), int(m.group(2)))


def save_grid(grid: TileGrid, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(
            {
                "source_width": grid.source_width,
                "source_height": grid.source_height,
                "window": grid.window,
                "margin": grid.margin,
                "cols": grid.cols,
                "rows": grid.rows,
                "mode": grid.mode,
            },
            f,
            indent=2,
            sort_keys=True,
        )
        f.write("\n")


def load_grid(path) -> TileGrid:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    grid = compute_grid(doc["source_width"], doc["source_height"], doc["window"],
                        doc["margin"], doc["mode"])
    if grid.cols != doc["cols"] or grid.rows != doc["rows"]:
        raise GeometryError(
            f"grid file {path} declares {doc['cols']}x{doc['rows']} tiles but the "
            f"geometry implies {grid.cols}x{grid.rows}"
        )
    return grid
