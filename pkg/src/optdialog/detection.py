"""Detector output post-processing.

Raw detections (boxes with confidence scores) are filtered by score,
deduplicated with greedy non-maximum suppression, and normalized into the
perception tokens that later get serialized into prompts.
"""

import json
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .errors import DuplicateImageEntry, MalformedRecord, NonPositiveDimension

log = logging.getLogger(__name__)


class BoxFormat(str, Enum):
    CENTER_WH = "center_wh"
    CORNER_XYXY = "corner_xyxy"


@dataclass(frozen=True)
class RawDetection:
    """A single detector prediction, in pixel or normalized units."""

    box: tuple[float, float, float, float]
    box_format: BoxFormat
    score: float
    class_hint: str | None = None


@dataclass(frozen=True)
class BoundingBox:
    """Center-format box with all coordinates normalized to [0, 1]."""

    cx: float
    cy: float
    w: float
    h: float

    def corners(self) -> tuple[float, float, float, float]:
        """(x1, y1, x2, y2) corner form."""
        return (
            self.cx - self.w / 2,
            self.cy - self.h / 2,
            self.cx + self.w / 2,
            self.cy + self.h / 2,
        )


@dataclass(frozen=True)
class NmsConfig:
    score_threshold: float = 0.5
    iou_threshold: float = 0.5
    max_detections: int = 20

    def __post_init__(self):
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValueError(f"score_threshold must be in [0, 1], got {self.score_threshold}")
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ValueError(f"iou_threshold must be in [0, 1], got {self.iou_threshold}")
        if self.max_detections < 1:
            raise ValueError(f"max_detections must be >= 1, got {self.max_detections}")


@dataclass(frozen=True)
class PerceptionTokenSet:
    """Post-NMS boxes for one image, ordered by descending score."""

    image_id: str
    boxes: tuple[BoundingBox, ...]
    scores: tuple[float, ...]
    detector_id: str = ""

    def __len__(self) -> int:
        return len(self.boxes)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two normalized boxes, in [0, 1].

    Areas are taken from the same corner extents as the intersection, which
    keeps the result inside [0, 1] and makes identical boxes score exactly 1.
    """
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union if union > 0.0 else 0.0


def normalize_box(raw: RawDetection, image_w: float, image_h: float) -> BoundingBox:
    """Convert a raw detection to a normalized center-format box.

    Corner boxes are converted to center format, coordinates are divided by
    the image dimensions, and boxes that overhang the frame are clamped back
    into [0, 1]^2. Raises NonPositiveDimension if the width or height is not
    strictly positive after conversion (including boxes that lie entirely
    outside the frame).
    """
    if image_w <= 0 or image_h <= 0:
        raise ValueError(f"image dimensions must be positive, got {image_w}x{image_h}")
    if raw.box_format is BoxFormat.CORNER_XYXY:
        x1, y1, x2, y2 = raw.box
        cx, cy, w, h = (x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1
    else:
        cx, cy, w, h = raw.box
    if w <= 0 or h <= 0:
        raise NonPositiveDimension(f"box has non-positive size {w}x{h}")
    cx, cy, w, h = cx / image_w, cy / image_h, w / image_w, h / image_h
    # Slight detector overflow is expected; clamp corners instead of rejecting.
    x1 = min(max(cx - w / 2, 0.0), 1.0)
    y1 = min(max(cy - h / 2, 0.0), 1.0)
    x2 = min(max(cx + w / 2, 0.0), 1.0)
    y2 = min(max(cy + h / 2, 0.0), 1.0)
    w, h = x2 - x1, y2 - y1
    if w <= 0 or h <= 0:
        raise NonPositiveDimension("box lies entirely outside the image frame")
    return BoundingBox((x1 + x2) / 2, (y1 + y2) / 2, w, h)


def denormalize_box(box: BoundingBox, image_w: float, image_h: float) -> tuple[float, float, float, float]:
    """Map a normalized box back to pixel units, center format."""
    return (box.cx * image_w, box.cy * image_h, box.w * image_w, box.h * image_h)


def nms(
    detections: Sequence[RawDetection],
    cfg: NmsConfig,
    *,
    image_id: str = "",
    detector_id: str = "",
) -> PerceptionTokenSet:
    """Greedy non-maximum suppression over normalized detections.

    Detections below the score threshold are dropped, the rest are sorted by
    descending score (ties keep input order), and a box is kept only if its
    IoU against every previously kept box stays at or below the IoU
    threshold. At most max_detections boxes survive. Expects detection
    coordinates already normalized to [0, 1].
    """
    scored: list[tuple[BoundingBox, float]] = []
    for det in detections:
        if det.score < cfg.score_threshold:
            continue
        scored.append((normalize_box(det, 1.0, 1.0), det.score))
    scored.sort(key=lambda pair: pair[1], reverse=True)

    kept_boxes: list[BoundingBox] = []
    kept_scores: list[float] = []
    for box, score in scored:
        if len(kept_boxes) == cfg.max_detections:
            break
        if all(iou(box, kept) <= cfg.iou_threshold for kept in kept_boxes):
            kept_boxes.append(box)
            kept_scores.append(score)
    return PerceptionTokenSet(
        image_id=image_id,
        boxes=tuple(kept_boxes),
        scores=tuple(kept_scores),
        detector_id=detector_id,
    )


def perception_tokens(
    detections: Sequence[RawDetection],
    cfg: NmsConfig,
    image_w: float,
    image_h: float,
    *,
    image_id: str = "",
    detector_id: str = "",
) -> PerceptionTokenSet:
    """Normalize pixel-space detections against the image frame and run NMS.

    Boxes that collapse to zero area after clamping (entirely outside the
    frame) are dropped with a warning rather than aborting the image.
    """
    normalized: list[RawDetection] = []
    for det in detections:
        try:
            box = normalize_box(det, image_w, image_h)
        except NonPositiveDimension as exc:
            log.warning("dropping detection for %r: %s", image_id, exc)
            continue
        normalized.append(
            RawDetection(
                box=(box.cx, box.cy, box.w, box.h),
                box_format=BoxFormat.CENTER_WH,
                score=det.score,
                class_hint=det.class_hint,
            )
        )
    return nms(normalized, cfg, image_id=image_id, detector_id=detector_id)


def _as_number(value, field: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{field} must be a number")
    return float(value)


def _record_to_detection(record: dict) -> tuple[str, RawDetection]:
    if not isinstance(record, dict):
        raise ValueError("record must be a JSON object")
    image_id = record.get("image_id")
    if not isinstance(image_id, str) or not image_id:
        raise ValueError("image_id must be a non-empty string")
    fmt_text = record.get("format")
    try:
        fmt = BoxFormat(fmt_text)
    except ValueError:
        raise ValueError(f"format must be one of center_wh, corner_xyxy; got {fmt_text!r}") from None
    box = record.get("box")
    if not isinstance(box, list) or len(box) != 4:
        raise ValueError("box must be an array of 4 numbers")
    coords = tuple(_as_number(v, "box coordinate") for v in box)
    score = _as_number(record.get("score"), "score")
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"score must be in [0, 1], got {score}")
    class_hint = record.get("class_hint")
    if class_hint is not None and not isinstance(class_hint, str):
        raise ValueError("class_hint must be a string")
    if fmt is BoxFormat.CENTER_WH:
        if coords[2] <= 0 or coords[3] <= 0:
            raise ValueError(f"center_wh box must have positive size, got {coords[2]}x{coords[3]}")
    else:
        if coords[0] >= coords[2] or coords[1] >= coords[3]:
            raise ValueError("corner_xyxy box must satisfy x1 < x2 and y1 < y2")
    return image_id, RawDetection(box=coords, box_format=fmt, score=score, class_hint=class_hint)


def load_detections(path) -> dict[str, list[RawDetection]]:
    """Load a JSON-lines detections file into a map image_id -> detections.

    Each line is one JSON object with fields image_id, format, box, score and
    optional class_hint; multiple lines per image accumulate in file order.
    Raises MalformedRecord (with the line number) for any invalid line and
    DuplicateImageEntry when the exact same record appears twice.
    """
    detections: dict[str, list[RawDetection]] = {}
    seen: set[tuple] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(path, lineno, f"invalid JSON: {exc}") from None
            try:
                image_id, det = _record_to_detection(record)
            except ValueError as exc:
                raise MalformedRecord(path, lineno, str(exc)) from None
            key = (image_id, det.box_format.value, det.box, det.score, det.class_hint)
            if key in seen:
                raise DuplicateImageEntry(path, lineno, f"duplicate record for image {image_id!r}")
            seen.add(key)
            detections.setdefault(image_id, []).append(det)
    return detections
