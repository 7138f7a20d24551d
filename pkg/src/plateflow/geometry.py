"""Axis-aligned boxes, IoU and non-maximum suppression."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box, top-left corner + size, frame pixel coordinates."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box must have positive size, got w={self.w} h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def clamped(self, width: int, height: int) -> "BoundingBox":
        """Clamp to a width x height frame. Raises ValueError if nothing remains."""
        x1 = max(0.0, self.x)
        y1 = max(0.0, self.y)
        x2 = min(float(width), self.x2)
        y2 = min(float(height), self.y2)
        if x2 <= x1 or y2 <= y1:
            raise ValueError("box lies entirely outside the frame")
        return BoundingBox(x1, y1, x2 - x1, y2 - y1)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundingBox":
        return cls(d["x"], d["y"], d["w"], d["h"])


@dataclass(frozen=True)
class Detection:
    """A scored plate hypothesis on one frame."""

    box: BoundingBox
    confidence: float
    frame_index: int = 0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0,1], got {self.confidence}")


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0 for disjoint boxes."""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def _nms_order_key(d: Detection):
    # Highest confidence first; ties broken by lower y then lower x so the
    # result never depends on input order.
    return (-d.confidence, d.box.y, d.box.x)


def nms(dets: list[Detection], score_thr: float, iou_thr: float) -> list[Detection]:
    """Greedy non-maximum suppression.

    Drops detections scoring below ``score_thr``, then repeatedly keeps the
    highest-confidence survivor and suppresses everything overlapping it with
    IoU strictly above ``iou_thr``. Output is sorted by confidence descending.
    """
    candidates = sorted((d for d in dets if d.confidence >= score_thr), key=_nms_order_key)
    kept: list[Detection] = []
    for d in candidates:
        if all(iou(d.box, k.box) <= iou_thr for k in kept):
            kept.append(d)
    return kept
