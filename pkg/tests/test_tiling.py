import numpy as np
import pytest

from cfosseg.imageio import ImageBuffer, MaskBuffer
from cfosseg.tiling import (
    GeometryError,
    TileId,
    compute_grid,
    crop,
    crop_mask,
    load_grid,
    parse_tile_name,
    save_grid,
    stitch,
    stitch_masks,
    tile_name,
)


def brute_force_positions(dim, window, margin):
    """Count window origins p*stride with p*stride + window <= dim + 2*margin."""
    stride = window - 2 * margin
    count = 0
    p = 0
    while p * stride + window <= dim + 2 * margin:
        count += 1
        p += 1
    return count


def test_grid_paper_scale_counts():
    g = compute_grid(10231, 7162, 128, 4, "paper")
    assert (g.cols, g.rows) == (85, 59)
    assert (g.covered_width, g.covered_height) == (10200, 7080)


def test_grid_single_window():
    g = compute_grid(120, 120, 128, 4, "paper")
    assert (g.cols, g.rows) == (1, 1)


def test_grid_matches_bruteforce_enumeration():
    g = compute_grid(500, 300, 128, 4, "paper")
    assert g.cols == brute_force_positions(500, 128, 4)
    assert g.rows == brute_force_positions(300, 128, 4)


def test_grid_random_counts_match_bruteforce():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        window = int(rng.integers(3, 200))
        margin = int(rng.integers(0, (window - 1) // 2 + 1))
        if window <= 2 * margin:
            continue
        w = int(rng.integers(1, 3000))
        h = int(rng.integers(1, 3000))
        g = compute_grid(w, h, window, margin, "paper")
        assert g.cols == brute_force_positions(w, window, margin)
        assert g.rows == brute_force_positions(h, window, margin)
        gf = compute_grid(w, h, window, margin, "full")
        stride = window - 2 * margin
        assert gf.cols * stride >= w and (gf.cols - 1) * stride < w
        assert gf.rows * stride >= h and (gf.rows - 1) * stride < h


def test_grid_rejects_window_not_exceeding_margins():
    with pytest.raises(GeometryError):
        compute_grid(100, 100, 8, 4, "paper")


def test_crop_single_window_padding():
    rng = np.random.default_rng(1)
    img = ImageBuffer.from_array(rng.random((120, 120)).astype(np.float32))
    g = compute_grid(120, 120, 128, 4, "paper")
    tiles = crop(img, g)
    assert set(tiles) == {TileId(0, 0)}
    t = tiles[TileId(0, 0)].pixels
    assert np.array_equal(t[4:124, 4:124], img.pixels)
    assert np.all(t[:4, :] == 0) and np.all(t[-4:, :] == 0)
    assert np.all(t[:, :4] == 0) and np.all(t[:, -4:] == 0)


def test_adjacent_tiles_share_overlap():
    rng = np.random.default_rng(2)
    img = ImageBuffer.from_array(rng.random((300, 500)).astype(np.float32))
    g = compute_grid(500, 300, 128, 4, "paper")
    tiles = crop(img, g)
    stride, x, a = g.stride, g.window, g.margin
    t00 = tiles[TileId(0, 0)].pixels
    t01 = tiles[TileId(0, 1)].pixels
    assert np.array_equal(t00[:, stride:x], t01[:, 0:2 * a])
    t10 = tiles[TileId(1, 0)].pixels
    assert np.array_equal(t00[stride:x, :], t10[0:2 * a, :])


def test_crop_matches_direct_index_oracle():
    rng = np.random.default_rng(3)
    for _ in range(5):
        h = int(rng.integers(50, 400))
        w = int(rng.integers(50, 400))
        window = int(rng.integers(16, 64))
        margin = int(rng.integers(0, 6))
        if window <= 2 * margin:
            continue
        img = ImageBuffer.from_array(rng.random((h, w)).astype(np.float32))
        g = compute_grid(w, h, window, margin, "full")
        padded = np.zeros((g.rows * g.stride + 2 * margin + max(0, window - g.stride),
                           g.cols * g.stride + 2 * margin + max(0, window - g.stride)),
                          dtype=np.float32)
        padded[margin:margin + h, margin:margin + w] = img.pixels
        tiles = crop(img, g)
        for tid, tile in tiles.items():
            y0, x0 = tid.row * g.stride, tid.col * g.stride
            assert np.array_equal(tile.pixels, padded[y0:y0 + window, x0:x0 + window])


def test_stitch_single_window_identity():
    rng = np.random.default_rng(4)
    img = ImageBuffer.from_array(rng.random((120, 120)).astype(np.float32))
    g = compute_grid(120, 120, 128, 4, "paper")
    out = stitch(crop(img, g), g)
    assert np.array_equal(out.pixels, img.pixels)


def test_stitch_output_dims_at_paper_scale():
    g = compute_grid(10231, 7162, 128, 4, "paper")
    assert (g.cols * g.stride, g.rows * g.stride) == (10200, 7080)


def test_stitch_crop_identity_50_random_images_both_modes():
    rng = np.random.default_rng(5)
    for trial in range(50):
        window = int(rng.integers(12, 80))
        margin = int(rng.integers(0, 5))
        if window <= 2 * margin:
            margin = 0
        stride = window - 2 * margin
        h = int(rng.integers(max(stride, 20), 300))
        w = int(rng.integers(max(stride, 20), 300))
        img = ImageBuffer.from_array(rng.random((h, w)).astype(np.float32))
        for mode in ("paper", "full"):
            g = compute_grid(w, h, window, margin, mode)
            out = stitch(crop(img, g), g)
            ch = min(g.covered_height, h)
            cw = min(g.covered_width, w)
            assert np.array_equal(out.pixels[:ch, :cw], img.pixels[:ch, :cw])
            if mode == "full":
                assert g.covered_height >= h and g.covered_width >= w
                # everything beyond the source is padding
                assert np.all(out.pixels[h:, :] == 0)
                assert np.all(out.pixels[:, w:] == 0)


def test_stitch_missing_or_misshapen_tiles_rejected():
    img = ImageBuffer.from_array(np.zeros((120, 120), dtype=np.float32))
    g = compute_grid(120, 120, 128, 4, "paper")
    with pytest.raises(GeometryError, match="missing"):
        stitch({}, g)
    bad = {TileId(0, 0): ImageBuffer.from_array(np.zeros((64, 64), dtype=np.float32))}
    with pytest.raises(GeometryError, match="shape"):
        stitch(bad, g)


def test_mask_crop_stitch_roundtrip():
    rng = np.random.default_rng(6)
    mask = MaskBuffer.from_array((rng.random((250, 370)) > 0.5).astype(np.uint8))
    g = compute_grid(370, 250, 64, 2, "paper")
    out = stitch_masks(crop_mask(mask, g), g)
    assert np.array_equal(out.labels, mask.labels[:g.covered_height, :g.covered_width])


def test_tile_names():
    assert tile_name(TileId(0, 2)) == "0-2"
    assert tile_name(TileId(0, 0)) == "0-0"
    assert parse_tile_name("3-17") == TileId(3, 17)
    with pytest.raises(ValueError):
        parse_tile_name("3_17")
    for r in range(100):
        for c in range(100):
            t = TileId(r, c)
            assert parse_tile_name(tile_name(t)) == t


def test_grid_file_roundtrip(tmp_path):
    g = compute_grid(10231, 7162, 128, 4, "paper")
    p = tmp_path / "grid.json"
    save_grid(g, p)
    assert load_grid(p) == g
