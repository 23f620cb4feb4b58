"""Synthetic micrograph corpus generator.

Produces 128x128 tile/mask pairs in five background styles (near-black,
blobs with bright tails, dense bright tissue, sparse high-contrast blobs,
and fiber stripes), a large source image assembled from the same recipes,
and mask-proposal files that imitate an automatic segmenter's output.
Foreground masks are unions of the generating disks, so they are exact by
construction; noise is added afterwards and never touches the mask.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .imageio import ImageBuffer, MaskBuffer, save_image, save_mask
from .labeling import MaskProposal, proposal_from_bitmap, save_proposals
from .manifest import DatasetManifest, ManifestEntry, manifest_save

TILE = 128
KINDS = ("dark", "tails", "dense", "sparse", "fibers")
KIND_WEIGHTS = (0.33, 0.15, 0.12, 0.27, 0.13)


@dataclass
class SynthTile:
    name: str
    kind: str
    image: np.ndarray
    mask: np.ndarray
    proposals: list[MaskProposal]


def _add_blob(img: np.ndarray, mask: np.ndarray, cy: float, cx: float,
              radius: float, peak: float) -> None:
    h, w = img.shape
    yy, xx = np.mgrid[0:h, 0:w]
    d2 = (yy - cy) ** 2 + (xx - cx) ** 2
    sigma = radius / 1.5
    img += peak * np.exp(-d2 / (2.0 * sigma * sigma))
    mask |= (d2 <= radius * radius)


def _add_streak(img: np.ndarray, rng: np.random.Generator, y0, x0, angle,
                length, brightness, width=1.2) -> None:
    h, w = img.shape
    yy, xx = np.mgrid[0:h, 0:w]
    dy, dx = np.sin(angle), np.cos(angle)
    t = (yy - y0) * dy + (xx - x0) * dx
    dist = np.abs((yy - y0) * dx - (xx - x0) * dy)
    band = (t >= 0) & (t <= length)
    img += brightness * band * np.exp(-(dist / width) ** 2)


def _speckle(img: np.ndarray, rng: np.random.Generator, count: int,
             brightness=(0.3, 0.65)) -> None:
    h, w = img.shape
    for _ in range(count):
        y, x = rng.integers(0, h), rng.integers(0, w)
        img[y, x] += rng.uniform(*brightness)


def render_region(rng: np.random.Generator, kind: str, height: int = TILE,
                  width: int = TILE) -> tuple[np.ndarray, np.ndarray]:
    """One region image plus its exact foreground mask."""
    img = np.full((height, width), rng.uniform(0.02, 0.07), dtype=np.float64)
    mask = np.zeros((height, width), dtype=bool)
    area = height * width / (TILE * TILE)
    if kind == "dark":
        _speckle(img, rng, int(rng.integers(0, 6) * area))
    elif kind == "tails":
        for _ in range(max(1, int(rng.integers(2, 5) * area))):
            cy, cx = rng.uniform(10, height - 10), rng.uniform(10, width - 10)
            r = rng.uniform(2.5, 5.0)
            _add_blob(img, mask, cy, cx, r, rng.uniform(0.75, 1.0))
            _add_streak(img, rng, cy, cx, rng.uniform(0, 2 * np.pi),
                        rng.uniform(8, 22), rng.uniform(0.25, 0.45))
    elif kind == "dense":
        img += rng.uniform(0.3, 0.45)
        for _ in range(max(1, int(rng.integers(4, 9) * area))):
            cy, cx = rng.uniform(6, height - 6), rng.uniform(6, width - 6)
            _add_blob(img, mask, cy, cx, rng.uniform(2.5, 5.5), rng.uniform(0.45, 0.6))
        _speckle(img, rng, int(rng.integers(10, 25) * area), brightness=(0.1, 0.25))
    elif kind == "sparse":
        for _ in range(max(1, int(rng.integers(2, 6) * area))):
            cy, cx = rng.uniform(8, height - 8), rng.uniform(8, width - 8)
            _add_blob(img, mask, cy, cx, rng.uniform(2.5, 6.0), rng.uniform(0.8, 1.0))
    elif kind == "fibers":
        for _ in range(max(1, int(rng.integers(4, 9) * area))):
            _add_streak(img, rng, rng.uniform(0, height), rng.uniform(0, width),
                        rng.uniform(0, np.pi), rng.uniform(30, 160),
                        rng.uniform(0.2, 0.5), width=rng.uniform(0.8, 2.0))
    else:
        raise ValueError(f"unknown tile kind {kind!r}")
    img += rng.normal(0.0, 0.025, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32), mask


def _dilate(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


def _erode(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[1:, :] &= mask[:-1, :]
    out[:-1, :] &= mask[1:, :]
    out[:, 1:] &= mask[:, :-1]
    out[:, :-1] &= mask[:, 1:]
    return out


def _components(mask: np.ndarray) -> list[np.ndarray]:
    """4-connected components via iterative flood fill."""
    remaining = mask.copy()
    comps = []
    while remaining.any():
        seed = np.unravel_index(int(np.argmax(remaining)), remaining.shape)
        comp = np.zeros_like(mask)
        comp[seed] = True
        while True:
            grown = _dilate(comp) & remaining
            if np.array_equal(grown, comp):
                break
            comp = grown
        comps.append(comp)
        remaining &= ~comp
    return comps


def fake_proposals(mask: np.ndarray, image: np.ndarray,
                   rng: np.random.Generator) -> list[MaskProposal]:
    """Proposal records imitating an automatic segmenter on this tile.

    Real components become good proposals (sometimes grown or shrunk by a
    pixel); junk records with oversized regions, specks, or poor stability
    scores are thrown in so downstream filtering has work to do.
    """
    proposals = []
    for comp in _components(mask):
        seg = comp
        roll = rng.random()
        if roll < 0.25:
            seg = _dilate(seg)
        elif roll < 0.4:
            eroded = _erode(seg)
            if eroded.any():
                seg = eroded
        ys, xs = np.nonzero(seg)
        pt = [(float(xs[0]) + 0.5, float(ys[0]) + 0.5)] if len(xs) else []
        proposals.append(proposal_from_bitmap(
            seg, predicted_iou=float(rng.uniform(0.7, 0.98)), point_coords=pt,
            stability_score=float(rng.uniform(0.91, 0.995)),
        ))
        # occasional low-quality duplicate that the stability filter drops
        if rng.random() < 0.3:
            proposals.append(proposal_from_bitmap(
                _dilate(_dilate(seg)), predicted_iou=float(rng.uniform(0.2, 0.6)),
                stability_score=float(rng.uniform(0.3, 0.85)),
            ))
    # an oversized background region (dropped by max_area)
    if rng.random() < 0.5:
        big = image > np.quantile(image, 0.3)
        proposals.append(proposal_from_bitmap(
            big, predicted_iou=float(rng.uniform(0.3, 0.7)),
            stability_score=float(rng.uniform(0.92, 0.99)),
        ))
    # tiny specks (dropped by min_area)
    for _ in range(int(rng.integers(0, 3))):
        speck = np.zeros_like(mask)
        y, x = rng.integers(0, mask.shape[0]), rng.integers(0, mask.shape[1])
        speck[y, x] = True
        proposals.append(proposal_from_bitmap(
            speck, predicted_iou=float(rng.uniform(0.5, 0.9)),
            stability_score=float(rng.uniform(0.92, 0.99)),
        ))
    return proposals


def generate_tiles(n_tiles: int, seed: int, with_proposals: bool = True) -> list[SynthTile]:
    rng = np.random.default_rng(seed)
    tiles = []
    kinds = rng.choice(len(KINDS), size=n_tiles, p=KIND_WEIGHTS)
    for i in range(n_tiles):
        kind = KINDS[kinds[i]]
        img, mask = render_region(rng, kind)
        props = fake_proposals(mask, img, rng) if with_proposals else []
        tiles.append(SynthTile(
            name=f"t{i:04d}", kind=kind, image=img,
            mask=mask.astype(np.uint8), proposals=props,
        ))
    return tiles


def generate_source(seed: int, width: int = 1024, height: int = 768) -> tuple[ImageBuffer, MaskBuffer]:
    """A large micrograph-like image: horizontal bands of the region styles."""
    rng = np.random.default_rng(seed + 1)
    img = np.zeros((height, width), dtype=np.float32)
    mask = np.zeros((height, width), dtype=bool)
    band_kinds = ["dark", "sparse", "tails", "dense", "fibers", "sparse"]
    edges = np.linspace(0, height, len(band_kinds) + 1).astype(int)
    for kind, y0, y1 in zip(band_kinds, edges[:-1], edges[1:]):
        region, region_mask = render_region(rng, kind, height=y1 - y0, width=width)
        img[y0:y1] = region
        mask[y0:y1] = region_mask
    return ImageBuffer.from_array(img), MaskBuffer.from_array(mask.astype(np.uint8))


def write_corpus(out_dir, n_tiles: int, seed: int, with_proposals: bool = True,
                 source_size: tuple[int, int] = (1024, 768)) -> DatasetManifest:
    """Write tiles/, masks/, proposals/, manifest.json, source.png, source_mask.png."""
    out_dir = os.fspath(out_dir)
    for sub in ("tiles", "masks") + (("proposals",) if with_proposals else ()):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    tiles = generate_tiles(n_tiles, seed, with_proposals)
    entries = []
    for t in tiles:
        img_path = os.path.join(out_dir, "tiles", f"{t.name}.png")
        mask_path = os.path.join(out_dir, "masks", f"{t.name}.png")
        save_image(ImageBuffer.from_array(t.image), img_path)
        save_mask(MaskBuffer.from_array(t.mask), mask_path)
        if with_proposals:
            save_proposals(t.proposals, os.path.join(out_dir, "proposals", f"{t.name}.json"))
        entries.append(ManifestEntry(img_path, mask_path, "train", "manual"))
    manifest = DatasetManifest(seed=seed, entries=entries)
    manifest_save(manifest, os.path.join(out_dir, "manifest.json"))
    source, source_mask = generate_source(seed, *source_size)
    save_image(source, os.path.join(out_dir, "source.png"))
    save_mask(source_mask, os.path.join(out_dir, "source_mask.png"))
    with open(os.path.join(out_dir, "meta.json"), "w", encoding="utf-8") as f:
        json.dump({"seed": seed, "tiles": n_tiles,
                   "kinds": {t.name: t.kind for t in tiles}}, f, indent=2)
    return manifest
