"""Dataset manifest: the persistent record of (image, mask) pairs that drives
training runs and the iterative retraining loop.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

SPLITS = ("train", "val", "test")
PROVENANCES = ("manual", "proposal", "iteration")


class ManifestError(ValueError):
    """Raised on malformed manifest files or invalid entries."""


@dataclass
class ManifestEntry:
    image_path: str
    mask_path: str
    split: str
    provenance: str
    cluster_index: int | None = None

    def validate(self, index: int) -> None:
        if self.split not in SPLITS:
            raise ManifestError(f"entry {index}: split {self.split!r} not one of {SPLITS}")
        if self.provenance not in PROVENANCES:
            raise ManifestError(
                f"entry {index}: provenance {self.provenance!r} not one of {PROVENANCES}"
            )
        if self.cluster_index is not None and self.cluster_index < 0:
            raise ManifestError(f"entry {index}: cluster_index must be >= 0")


@dataclass
class DatasetManifest:
    seed: int
    entries: list[ManifestEntry] = field(default_factory=list)

    def split_counts(self) -> dict[str, int]:
        counts = {s: 0 for s in SPLITS}
        for e in self.entries:
            counts[e.split] += 1
        return counts

    def subset(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def validate(self, check_paths: bool = True) -> None:
        seen: set[str] = set()
        for i, e in enumerate(self.entries):
            e.validate(i)
            if e.image_path in seen:
                raise ManifestError(f"duplicate image_path {e.image_path!r}")
            seen.add(e.image_path)
            if check_paths:
                for p in (e.image_path, e.mask_path):
                    if not os.path.exists(p):
                        raise ManifestError(f"entry {i}: referenced path does not exist: {p}")


def manifest_save(manifest: DatasetManifest, path, check_paths: bool = True) -> None:
    manifest.validate(check_paths=check_paths)
    doc = {
        "seed": manifest.seed,
        "entries": [
            {
                "image_path": e.image_path,
                "mask_path": e.mask_path,
                **({"cluster_index": e.cluster_index} if e.cluster_index is not None else {}),
                "split": e.split,
                "provenance": e.provenance,
            }
            for e in manifest.entries
        ],
    }
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def manifest_load(path) -> DatasetManifest:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ManifestError(f"malformed manifest {path}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict) or "entries" not in doc or "seed" not in doc:
        raise ManifestError(f"malformed manifest {path}: missing 'seed' or 'entries'")
    entries = []
    for i, raw in enumerate(doc["entries"]):
        try:
            entries.append(
                ManifestEntry(
                    image_path=raw["image_path"],
                    mask_path=raw["mask_path"],
                    split=raw["split"],
                    provenance=raw["provenance"],
                    cluster_index=raw.get("cluster_index"),
                )
            )
        except KeyError as exc:
            raise ManifestError(f"malformed manifest {path}: entry {i} missing field {exc}") from exc
    m = DatasetManifest(seed=int(doc["seed"]), entries=entries)
    m.validate(check_paths=False)
    return m
