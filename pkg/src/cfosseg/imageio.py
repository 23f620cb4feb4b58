"""Grayscale image / binary mask value types and their PNG file IO.

In-memory convention: intensities are float32 in [0, 1], mask labels are
uint8 in {0, 1}. On disk everything is 8-bit grayscale PNG; mask foreground
is written as 255 so files are directly viewable.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image


class ImageDecodeError(ValueError):
    """Raised when a raster file is missing, unreadable, or of an unsupported depth."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ImageBuffer:
    """A single-channel pixel grid with intensities in [0, 1].

    The pixel array is (height, width) float32, row-major, and is made
    read-only on construction so buffers can be shared across threads.
    """

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.shape != (self.height, self.width):
            raise ValueError(
                f"pixel array shape {px.shape} does not match {self.height}x{self.width}"
            )
        if px.dtype != np.float32:
            px = px.astype(np.float32)
        if px.size and (not np.isfinite(px).all() or px.min() < 0.0 or px.max() > 1.0):
            raise ValueError("intensities must be finite and within [0, 1]")
        object.__setattr__(self, "pixels", _freeze(px))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImageBuffer":
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
        h, w = arr.shape
        return cls(width=w, height=h, pixels=arr)

    def to_bytes(self) -> np.ndarray:
        """Quantize back to 8-bit (exact inverse of v/255 loading)."""
        return np.rint(self.pixels * 255.0).astype(np.uint8)


@dataclass(frozen=True)
class MaskBuffer:
    """A binary label grid: 0 = background, 1 = foreground."""

    width: int
    height: int
    labels: np.ndarray

    def __post_init__(self):
        lb = np.asarray(self.labels)
        if lb.shape != (self.height, self.width):
            raise ValueError(
                f"label array shape {lb.shape} does not match {self.height}x{self.width}"
            )
        if lb.dtype != np.uint8:
            if lb.size and not np.isin(lb, (0, 1)).all():
                raise ValueError("mask labels must be strictly 0 or 1")
            lb = lb.astype(np.uint8)
        elif lb.size and lb.max(initial=0) > 1:
            raise ValueError("mask labels must be strictly 0 or 1")
        object.__setattr__(self, "labels", _freeze(lb))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "MaskBuffer":
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
        h, w = arr.shape
        return cls(width=w, height=h, labels=arr)

    def area(self) -> int:
        return int(self.labels.sum())


def load_image(path) -> ImageBuffer:
    """Load an 8-bit grayscale PNG; color inputs are reduced by channel mean."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise ImageDecodeError(f"image file not found: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "L":
                arr = np.asarray(im, dtype=np.float32)
            elif mode in ("P", "1"):
                arr = np.asarray(im.convert("L"), dtype=np.float32)
            elif mode in ("RGB", "RGBA"):
                rgb = np.asarray(im, dtype=np.float32)[:, :, :3]
                arr = rgb.mean(axis=2)
            else:
                raise ImageDecodeError(f"unsupported pixel format {mode!r} in {path}")
    except ImageDecodeError:
        raise
    except Exception as exc:
        raise ImageDecodeError(f"cannot decode image {path}: {exc}") from exc
    return ImageBuffer.from_array(arr / 255.0)


def save_image(image: ImageBuffer, path) -> None:
    """Write an 8-bit grayscale non-interlaced PNG."""
    Image.fromarray(image.to_bytes(), mode="L").save(os.fspath(path), format="PNG")


def load_mask(path) -> MaskBuffer:
    """Load a binary mask PNG; pixel values must be exactly 0 or 255."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise ImageDecodeError(f"mask file not found: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode != "L":
                raise ImageDecodeError(f"mask {path} is not 8-bit grayscale (mode {im.mode!r})")
            arr = np.asarray(im, dtype=np.uint8)
    except ImageDecodeError:
        raise
    except Exception as exc:
        raise ImageDecodeError(f"cannot decode mask {path}: {exc}") from exc
    if arr.size and not np.isin(arr, (0, 255)).all():
        raise ImageDecodeError(f"mask {path} contains values other than 0/255")
    return MaskBuffer.from_array((arr == 255).astype(np.uint8))


def save_mask(mask: MaskBuffer, path) -> None:
    """Write a mask PNG with foreground as 255."""
    Image.fromarray((mask.labels * np.uint8(255)), mode="L").save(os.fspath(path), format="PNG")
