"""Model weight file format.

Layout: 8 magic bytes "CFOSNN1\\0", a little-endian u32 header length, a JSON
header {format_version, rng_seed, layers:[{kind, in_channels, out_channels,
skip_ref, weight_bytes, bias_bytes}]}, then the raw little-endian float32
weight and bias blobs concatenated in layer order.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .network import LayerSpec, Network

MAGIC = b"CFOSNN1\x00"
FORMAT_VERSION = 1


class WeightFormatError(ValueError):
    """Raised for malformed weight files; the message names the failure kind."""


def save_params(net: Network, path) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "rng_seed": net.rng_seed,
        "layers": [
            {
                "kind": s.kind,
                "in_channels": s.in_channels,
                "out_channels": s.out_channels,
                "skip_ref": s.skip_ref,
                "weight_bytes": s.weight_count() * 4,
                "bias_bytes": s.bias_count() * 4,
            }
            for s in net.specs
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for layer in net.layers:
            for arr in layer.params:
                f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_params(path, dtype=np.float32) -> Network:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < len(MAGIC) + 4:
        raise WeightFormatError(f"truncated weight file {path}: no header")
    if data[: len(MAGIC)] != MAGIC:
        raise WeightFormatError(f"magic mismatch in {path}: not a model weight file")
    (hlen,) = struct.unpack_from("<I", data, len(MAGIC))
    off = len(MAGIC) + 4
    if off + hlen > len(data):
        raise WeightFormatError(f"truncated weight file {path}: header cut short")
    try:
        header = json.loads(data[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFormatError(f"unreadable header in {path}: {exc}") from exc
    off += hlen
    if header.get("format_version") != FORMAT_VERSION:
        raise WeightFormatError(
            f"unsupported format_version {header.get('format_version')} in {path}"
        )
    specs = []
    for i, ls in enumerate(header.get("layers", [])):
        spec = LayerSpec(
            kind=ls["kind"],
            in_channels=ls.get("in_channels", 0),
            out_channels=ls.get("out_channels", 0),
            skip_ref=ls.get("skip_ref"),
        )
        for name, expect in (("weight_bytes", spec.weight_count() * 4),
                             ("bias_bytes", spec.bias_count() * 4)):
            if ls.get(name) != expect:
                raise WeightFormatError(
                    f"size mismatch in {path}: layer {i} ({spec.kind}) declares "
                    f"{name}={ls.get(name)}, spec implies {expect}"
                )
        specs.append(spec)
    net = Network(specs, seed=int(header.get("rng_seed", 0)), dtype=dtype)
    for i, (spec, layer) in enumerate(zip(net.specs, net.layers)):
        for arr in layer.params:
            nbytes = arr.size * 4
            if off + nbytes > len(data):
                raise WeightFormatError(
                    f"truncated weight file {path}: layer {i} blob cut short"
                )
            vals = np.frombuffer(data, dtype="<f4", count=arr.size, offset=off)
            arr[...] = vals.reshape(arr.shape).astype(dtype, copy=False)
            off += nbytes
    if off != len(data):
        raise WeightFormatError(f"size mismatch in {path}: {len(data) - off} trailing bytes")
    return net
