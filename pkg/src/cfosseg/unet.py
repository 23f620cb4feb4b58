"""Same-padding U-Net for binary tile segmentation.

Encoder stages double the channel count (16, 32, 64, 128) with two 3x3
convolutions each; a 256-channel bottleneck sits at 8x8 for 128x128 input.
The decoder mirrors the encoder with learned 2x2 up-convolutions and skip
concatenations, and the head is a 1x1 convolution from 16 channels to a
single sigmoid probability map. No cropping happens anywhere, so output
dims always equal input dims.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imageio import ImageBuffer, MaskBuffer
from .nn import LayerSpec, Network
from .nn.fit import fit
from .nn.optim import AdamState
from .tiling import TileGrid, crop, stitch_masks, tile_name


@dataclass(frozen=True)
class UNetConfig:
    input_size: int = 128
    depth: int = 4
    base_channels: int = 16
    bottleneck_channels: int = 256


@dataclass
class TrainRun:
    epochs: int
    batch_size: int
    seed: int
    threshold: float = 0.5
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie strictly inside (0, 1)")


def unet_specs(config: UNetConfig = UNetConfig()) -> list[LayerSpec]:
    specs: list[LayerSpec] = []
    skips: list[int] = []
    prev = 1
    enc = [config.base_channels * 2 ** d for d in range(config.depth)]
    for ch in enc:
        specs += [LayerSpec("conv3x3", prev, ch), LayerSpec("relu"),
                  LayerSpec("conv3x3", ch, ch), LayerSpec("relu")]
        skips.append(len(specs) - 1)
        specs.append(LayerSpec("maxpool2"))
        prev = ch
    bn = config.bottleneck_channels
    specs += [LayerSpec("conv3x3", prev, bn), LayerSpec("relu"),
              LayerSpec("conv3x3", bn, bn), LayerSpec("relu")]
    prev = bn
    for ch, skip in zip(reversed(enc), reversed(skips)):
        specs.append(LayerSpec("upconv2", prev, ch))
        specs.append(LayerSpec("concat", skip_ref=skip))
        specs += [LayerSpec("conv3x3", 2 * ch, ch), LayerSpec("relu"),
                  LayerSpec("conv3x3", ch, ch), LayerSpec("relu")]
        prev = ch
    specs += [LayerSpec("conv1x1", prev, 1), LayerSpec("sigmoid")]
    return specs


def bottleneck_layer_index(config: UNetConfig = UNetConfig()) -> int:
    """Index of the last bottleneck activation (the deepest relu)."""
    return 5 * config.depth + 3


def build_unet(config: UNetConfig = UNetConfig(), seed: int = 0,
               dtype=np.float32) -> Network:
    if config.input_size % (2 ** config.depth) != 0:
        raise ValueError(
            f"input size {config.input_size} is not divisible by 2^{config.depth}"
        )
    return Network(unet_specs(config), seed=seed, dtype=dtype)


def _pool_depth(net: Network) -> int:
    return sum(1 for s in net.specs if s.kind == "maxpool2")


def _pairs_to_batches(pairs) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for img, mask in pairs:
        px = img.pixels if isinstance(img, ImageBuffer) else np.asarray(img, dtype=np.float32)
        lb = mask.labels if isinstance(mask, MaskBuffer) else np.asarray(mask)
        if px.shape != lb.shape:
            raise ValueError(f"image {px.shape} and mask {lb.shape} dims differ")
        xs.append(px)
        ys.append(lb.astype(np.float32))
    return np.stack(xs)[..., None], np.stack(ys)[..., None]


def train_unet(net: Network, train_pairs, val_pairs=(), epochs: int = 15,
               batch_size: int = 8, seed: int = 0, lr: float = 1e-3,
               threshold: float = 0.5,
               state: AdamState | None = None,
               stop_below: float | None = None) -> tuple[TrainRun, AdamState]:
    """Seeded minibatch training; mutates the network, returns the run record."""
    if not len(train_pairs):
        raise ValueError("empty training set")
    x, y = _pairs_to_batches(train_pairs)
    val = _pairs_to_batches(val_pairs) if len(val_pairs) else None
    train_hist, val_hist, state = fit(net, x, y, epochs=epochs, batch_size=batch_size,
                                      seed=seed, lr=lr, val=val, state=state,
                                      stop_below=stop_below)
    run = TrainRun(epochs=len(train_hist), batch_size=batch_size, seed=seed,
                   threshold=threshold, train_loss=train_hist, val_loss=val_hist)
    return run, state


def predict_tile(net: Network, tile, threshold: float = 0.5) -> tuple[np.ndarray, MaskBuffer]:
    """Probability map and its thresholded binary mask for one tile."""
    px = tile.pixels if isinstance(tile, ImageBuffer) else np.asarray(tile, dtype=np.float32)
    step = 2 ** _pool_depth(net)
    if px.ndim != 2 or px.shape[0] % step or px.shape[1] % step:
        raise ValueError(f"tile dims {px.shape} must be divisible by {step}")
    prob = net.forward(px[None, :, :, None])[0, :, :, 0]
    mask = MaskBuffer.from_array((prob >= threshold).astype(np.uint8))
    return prob, mask


def predict_full(net: Network, image: ImageBuffer, grid: TileGrid,
                 threshold: float = 0.5) -> MaskBuffer:
    """crop -> per-tile predict -> stitch of the binary masks.

    Tiles are predicted one at a time so the result is exactly the
    composition of the public crop/predict/stitch operations.
    """
    tiles = crop(image, grid)
    masks = {tid: predict_tile(net, tile, threshold)[1] for tid, tile in tiles.items()}
    return stitch_masks(masks, grid)


def predict_to_dir(net: Network, tiles: dict[str, ImageBuffer], out_dir,
                   threshold: float = 0.5) -> dict[str, MaskBuffer]:
    from .imageio import save_mask
    import os
    os.makedirs(out_dir, exist_ok=True)
    out = {}
    for name in sorted(tiles):
        _, mask = predict_tile(net, tiles[name], threshold)
        save_mask(mask, os.path.join(out_dir, f"{name}.png"))
        out[name] = mask
    return out
