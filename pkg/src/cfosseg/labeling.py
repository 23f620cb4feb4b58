"""Ground-truth mask production from the two labeling routes.

Manual route: polygon annotation files (the common annotation tool's JSON
layout) rasterized by the even-odd rule sampled at pixel centers.

Automatic route: mask-proposal records (segmentation bitmap plus area, bbox,
predicted_iou, point_coords, stability_score, crop_box) filtered by area and
quality thresholds, then merged by pixelwise OR.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .imageio import MaskBuffer


class AnnotationError(ValueError):
    pass


@dataclass
class PolygonShape:
    label: str
    points: list[tuple[float, float]]
    shape_type: str = "polygon"


@dataclass
class PolygonAnnotation:
    image_width: int
    image_height: int
    shapes: list[PolygonShape] = field(default_factory=list)


def load_annotation(path) -> PolygonAnnotation:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"malformed annotation {path}: line {exc.lineno}: {exc.msg}") from exc
    try:
        shapes = [
            PolygonShape(
                label=s["label"],
                points=[(float(x), float(y)) for x, y in s["points"]],
                shape_type=s.get("shape_type", "polygon"),
            )
            for s in doc["shapes"]
        ]
        return PolygonAnnotation(
            image_width=int(doc["imageWidth"]),
            image_height=int(doc["imageHeight"]),
            shapes=shapes,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise AnnotationError(f"malformed annotation {path}: {exc}") from exc


def save_annotation(ann: PolygonAnnotation, path) -> None:
    doc = {
        "imageWidth": ann.image_width,
        "imageHeight": ann.image_height,
        "shapes": [
            {"label": s.label, "points": [[x, y] for x, y in s.points],
             "shape_type": s.shape_type}
            for s in ann.shapes
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def _fill_polygon(mask: np.ndarray, points: list[tuple[float, float]],
                  width: int, height: int) -> None:
    """OR into `mask` every pixel whose center lies inside (even-odd rule).

    A pixel center (px, py) is inside when a horizontal ray to -inf crosses
    an odd number of edges; an edge (x1,y1)-(x2,y2) is crossed when
    (y1 > py) != (y2 > py) and px < x1 + (py-y1)(x2-x1)/(y2-y1).
    """
    # out-of-range vertices are clipped onto the canvas edge
    pts = [(min(max(x, 0.0), float(width)), min(max(y, 0.0), float(height)))
           for x, y in points]
    n = len(pts)
    ys = [p[1] for p in pts]
    y_lo = max(int(math.floor(min(ys) - 0.5)), 0)
    y_hi = min(int(math.ceil(max(ys))), height)
    for row in range(y_lo, y_hi):
        py = row + 0.5
        crossings = []
        for i in range(n):
            x1, y1 = pts[i]
            x2, y2 = pts[(i + 1) % n]
            if (y1 > py) != (y2 > py):
                crossings.append(x1 + (py - y1) * (x2 - x1) / (y2 - y1))
        if not crossings:
            continue
        xc = np.sort(np.asarray(crossings))
        centers = np.arange(width) + 0.5
        # inside iff an odd number of crossings lie strictly right of the center
        n_right = len(xc) - np.searchsorted(xc, centers, side="right")
        mask[row] |= (n_right % 2 == 1)


def rasterize(ann: PolygonAnnotation, target_label: str) -> MaskBuffer:
    """Binary mask of all polygons carrying the target label."""
    if ann.image_width < 1 or ann.image_height < 1:
        raise AnnotationError("annotation canvas must have positive dims")
    mask = np.zeros((ann.image_height, ann.image_width), dtype=bool)
    for i, shape in enumerate(ann.shapes):
        if shape.label != target_label:
            continue
        if len(shape.points) < 3:
            raise AnnotationError(f"shape {i} has {len(shape.points)} vertices, need >= 3")
        _fill_polygon(mask, shape.points, ann.image_width, ann.image_height)
    return MaskBuffer.from_array(mask.astype(np.uint8))


@dataclass
class MaskProposal:
    segmentation: np.ndarray
    area: int
    bbox: tuple[int, int, int, int]
    predicted_iou: float
    point_coords: list[tuple[float, float]]
    stability_score: float
    crop_box: tuple[int, int, int, int]


def tight_bbox(seg: np.ndarray) -> tuple[int, int, int, int]:
    """XYWH bounding box of the ones; (0, 0, 0, 0) for an empty bitmap."""
    ys, xs = np.nonzero(seg)
    if len(xs) == 0:
        return (0, 0, 0, 0)
    x0, y0 = int(xs.min()), int(ys.min())
    return (x0, y0, int(xs.max()) - x0 + 1, int(ys.max()) - y0 + 1)


def proposal_from_bitmap(seg: np.ndarray, predicted_iou: float = 1.0,
                         point_coords=None, stability_score: float = 1.0,
                         crop_box=None) -> MaskProposal:
    seg = (np.asarray(seg) != 0).astype(np.uint8)
    h, w = seg.shape
    return MaskProposal(
        segmentation=seg,
        area=int(seg.sum()),
        bbox=tight_bbox(seg),
        predicted_iou=float(predicted_iou),
        point_coords=list(point_coords or []),
        stability_score=float(stability_score),
        crop_box=tuple(crop_box) if crop_box is not None else (0, 0, w, h),
    )


@dataclass(frozen=True)
class ProposalFilter:
    min_area: int = 30
    max_area: int = 4000
    min_stability: float = 0.90
    min_predicted_iou: float = 0.0

    def __post_init__(self):
        if self.min_area > self.max_area:
            raise ValueError("min_area must not exceed max_area")
        for v in (self.min_stability, self.min_predicted_iou):
            if not 0.0 <= v <= 1.0:
                raise ValueError("score thresholds must lie in [0, 1]")

    def keeps(self, p: MaskProposal) -> bool:
        return (self.min_area <= p.area <= self.max_area
                and p.stability_score >= self.min_stability
                and p.predicted_iou >= self.min_predicted_iou)


def filter_proposals(proposals: list[MaskProposal], flt: ProposalFilter) -> list[MaskProposal]:
    return [p for p in proposals if flt.keeps(p)]


def merge_proposals(proposals: list[MaskProposal], width: int, height: int) -> MaskBuffer:
    """Pixelwise OR of the bitmaps; empty input gives an all-zero mask."""
    out = np.zeros((height, width), dtype=np.uint8)
    for i, p in enumerate(proposals):
        if p.segmentation.shape != (height, width):
            raise ValueError(
                f"proposal {i} bitmap is {p.segmentation.shape}, tile is {height}x{width}"
            )
        out |= p.segmentation.astype(np.uint8)
    return MaskBuffer.from_array(out)


def validate_proposal(p: MaskProposal) -> list[str]:
    """Consistency violations between the bitmap and its declared metadata."""
    violations = []
    popcount = int(np.count_nonzero(p.segmentation))
    if p.area != popcount:
        violations.append(f"area mismatch: declared {p.area}, bitmap has {popcount}")
    bbox = tight_bbox(p.segmentation)
    if tuple(p.bbox) != bbox:
        violations.append(f"bbox not tight: declared {tuple(p.bbox)}, actual {bbox}")
    return violations


def load_proposals(path) -> list[MaskProposal]:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    out = []
    for i, rec in enumerate(doc):
        try:
            out.append(MaskProposal(
                segmentation=np.asarray(rec["segmentation"], dtype=np.uint8),
                area=int(rec["area"]),
                bbox=tuple(rec["bbox"]),
                predicted_iou=float(rec["predicted_iou"]),
                point_coords=[tuple(pc) for pc in rec["point_coords"]],
                stability_score=float(rec["stability_score"]),
                crop_box=tuple(rec["crop_box"]),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise AnnotationError(f"malformed proposal {i} in {path}: {exc}") from exc
    return out


def save_proposals(proposals: list[MaskProposal], path) -> None:
    doc = [
        {
            "segmentation": p.segmentation.astype(int).tolist(),
            "area": p.area,
            "bbox": list(p.bbox),
            "predicted_iou": p.predicted_iou,
            "point_coords": [list(pc) for pc in p.point_coords],
            "stability_score": p.stability_score,
            "crop_box": list(p.crop_box),
        }
        for p in proposals
    ]
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
        f.write("\n")
