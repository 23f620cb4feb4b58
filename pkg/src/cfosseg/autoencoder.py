"""Convolutional autoencoder for tile feature extraction.

Encoder: three conv3x3+relu+maxpool stages with channels (16, 8, 8), taking a
128x128x1 tile down to a 16x16x8 code (2048 floats). Decoder mirrors it with
nearest-neighbor upsampling and ends in a conv3x3 to one channel + sigmoid, so
the reconstruction matches the input resolution and value range.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .imageio import ImageBuffer
from .nn import LayerSpec, Network
from .nn.fit import fit

TILE_SIZE = 128
ENCODER_CHANNELS = (16, 8, 8)
DECODER_CHANNELS = (8, 8, 16)
CODE_SHAPE = (16, 16, 8)
CODE_DIM = 16 * 16 * 8

# layer index just past the third pooling stage; forward up to here yields the code
ENCODER_LAYER_COUNT = 9

CODES_MAGIC = b"CFOSCODE"


@dataclass(frozen=True)
class AutoencoderConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3


@dataclass
class LatentCode:
    name: str
    code: np.ndarray


def autoencoder_specs() -> list[LayerSpec]:
    specs: list[LayerSpec] = []
    prev = 1
    for ch in ENCODER_CHANNELS:
        specs += [LayerSpec("conv3x3", prev, ch), LayerSpec("relu"), LayerSpec("maxpool2")]
        prev = ch
    for ch in DECODER_CHANNELS:
        specs += [LayerSpec("conv3x3", prev, ch), LayerSpec("relu"), LayerSpec("upsample2")]
        prev = ch
    specs += [LayerSpec("conv3x3", prev, 1), LayerSpec("sigmoid")]
    return specs


def build_autoencoder(seed: int = 0, dtype=np.float32) -> Network:
    return Network(autoencoder_specs(), seed=seed, dtype=dtype)


def _tiles_to_batch(tiles) -> np.ndarray:
    arrs = []
    for t in tiles:
        px = t.pixels if isinstance(t, ImageBuffer) else np.asarray(t, dtype=np.float32)
        if px.shape != (TILE_SIZE, TILE_SIZE):
            raise ValueError(f"tile shape {px.shape} is not {TILE_SIZE}x{TILE_SIZE}")
        arrs.append(px)
    return np.stack(arrs)[..., None]


def train_autoencoder(tiles, config: AutoencoderConfig = AutoencoderConfig(),
                      seed: int = 0) -> tuple[Network, list[float]]:
    """Unsupervised reconstruction training; returns the model and per-epoch loss."""
    batch = _tiles_to_batch(tiles)
    if batch.shape[0] == 0:
        raise ValueError("empty training set")
    net = build_autoencoder(seed=seed)
    history, _, _ = fit(net, batch, batch, epochs=config.epochs,
                        batch_size=config.batch_size, seed=seed,
                        lr=config.learning_rate)
    return net, history


def encode(net: Network, tile) -> np.ndarray:
    """The encoder half's output for one tile, flattened to CODE_DIM floats."""
    batch = _tiles_to_batch([tile])
    code = net.forward(batch, upto=ENCODER_LAYER_COUNT)
    if code.shape[1:] != CODE_SHAPE:
        raise ValueError(f"unexpected code shape {code.shape[1:]}, wanted {CODE_SHAPE}")
    return code.reshape(-1).astype(np.float32)


def encode_tiles(net: Network, tiles: dict[str, ImageBuffer]) -> list[LatentCode]:
    """Encode a named tile set; output is sorted by name for reproducibility."""
    return [LatentCode(name, encode(net, tiles[name])) for name in sorted(tiles)]


def reconstruct(net: Network, tile) -> np.ndarray:
    return net.forward(_tiles_to_batch([tile]))[0, :, :, 0]


def save_codes(codes: np.ndarray, path) -> None:
    """codes.bin: magic, u32 count, u32 dim, then raw little-endian float32 rows."""
    codes = np.ascontiguousarray(codes, dtype="<f4")
    if codes.ndim != 2:
        raise ValueError("codes must be a (count, dim) matrix")
    with open(path, "wb") as f:
        f.write(CODES_MAGIC)
        f.write(struct.pack("<II", codes.shape[0], codes.shape[1]))
        f.write(codes.tobytes())


def load_codes(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != CODES_MAGIC:
        raise ValueError(f"{path} is not a codes file (bad magic)")
    count, dim = struct.unpack_from("<II", data, 8)
    expect = 16 + count * dim * 4
    if len(data) != expect:
        raise ValueError(f"codes file {path} has {len(data)} bytes, expected {expect}")
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(count, dim).copy()
