"""Integral-image haar features, staged cascade evaluation and multi-scale scan.

This is the wake-up stage's compute core: everything here is pure and
reentrant, and a SummedAreaTable is immutable once built so it can be shared
between concurrent scans.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import BoundingBox

CASCADE_FORMAT_VERSION = "plateflow-cascade-v1"

DEFAULT_BASE_WINDOW = (24, 12)  # wide 2:1 window, plates are wider than tall

FEATURE_KINDS = (
    "two-rect-horizontal",
    "two-rect-vertical",
    "three-rect-horizontal",
    "three-rect-vertical",
    "four-rect-checker",
)


class DegenerateFeatureError(ValueError):
    """Scaled feature rounded down to zero area."""


class RectBoundsError(IndexError):
    """Rectangle query outside the summed-area table."""


class CascadeFormatError(ValueError):
    """Unreadable or unknown-version cascade document."""


@dataclass(frozen=True)
class GrayFrame:
    """8-bit luminance raster; ``data`` is a row-major (height, width) array."""

    width: int
    height: int
    data: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("frame must be at least 1x1")
        if self.data.shape != (self.height, self.width):
            raise ValueError(
                f"data shape {self.data.shape} does not match {self.height}x{self.width}"
            )
        if self.data.dtype != np.uint8:
            raise ValueError("frame data must be uint8")

    @classmethod
    def from_array(cls, arr: np.ndarray, frame_index: int = 0) -> "GrayFrame":
        arr = np.ascontiguousarray(arr, dtype=np.uint8)
        return cls(width=arr.shape[1], height=arr.shape[0], data=arr, frame_index=frame_index)


@dataclass(frozen=True)
class SummedAreaTable:
    """(height+1) x (width+1) prefix-sum grid; entry (y,x) sums pixels < (x,y)."""

    width: int
    height: int
    table: np.ndarray  # int64, shape (height+1, width+1)


def integral_image(frame: GrayFrame) -> SummedAreaTable:
    sat = np.zeros((frame.height + 1, frame.width + 1), dtype=np.int64)
    np.cumsum(np.cumsum(frame.data, axis=0, dtype=np.int64), axis=1, out=sat[1:, 1:])
    return SummedAreaTable(width=frame.width, height=frame.height, table=sat)


def rect_sum(sat: SummedAreaTable, rect: tuple[int, int, int, int]) -> int:
    """Sum of pixels inside rect=(x,y,w,h) via four table lookups."""
    x, y, w, h = rect
    if x < 0 or y < 0 or w < 0 or h < 0 or x + w > sat.width or y + h > sat.height:
        raise RectBoundsError(f"rect {rect} outside {sat.width}x{sat.height} table")
    t = sat.table
    return int(t[y + h, x + w] - t[y, x + w] - t[y + h, x] + t[y, x])


@dataclass(frozen=True)
class HaarFeature:
    """White-minus-black rectangle feature anchored inside the base window."""

    kind: str
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.w < 2 or self.h < 2:
            raise ValueError("feature must be at least 2x2")
        div_w, div_h = _KIND_DIVISORS[self.kind]
        if self.w % div_w or self.h % div_h:
            raise ValueError(f"{self.kind} needs w%{div_w}==0 and h%{div_h}==0")

    def fits(self, base_window: tuple[int, int]) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x + self.w <= base_window[0] and self.y + self.h <= base_window[1]


_KIND_DIVISORS = {
    "two-rect-horizontal": (2, 1),
    "two-rect-vertical": (1, 2),
    "three-rect-horizontal": (3, 1),
    "three-rect-vertical": (1, 3),
    "four-rect-checker": (2, 2),
}


def scaled_feature_layout(f: HaarFeature, scale: float):
    """White and black sub-rects of ``f`` at ``scale``, relative to the window origin.

    The sub-rect unit is rounded first and replicated so all sub-rects stay
    exactly equal-sized at any scale (a two-rect feature on a uniform frame is
    always exactly zero). Returns (white_rects, black_rects, total_area).
    """
    fx = round(f.x * scale)
    fy = round(f.y * scale)
    k = f.kind
    if k == "two-rect-horizontal":
        uw, uh = round(f.w * scale / 2), round(f.h * scale)
        white = [(fx, fy, uw, uh)]
        black = [(fx + uw, fy, uw, uh)]
        area = 2 * uw * uh
    elif k == "two-rect-vertical":
        uw, uh = round(f.w * scale), round(f.h * scale / 2)
        white = [(fx, fy, uw, uh)]
        black = [(fx, fy + uh, uw, uh)]
        area = 2 * uw * uh
    elif k == "three-rect-horizontal":
        uw, uh = round(f.w * scale / 3), round(f.h * scale)
        white = [(fx, fy, uw, uh), (fx + 2 * uw, fy, uw, uh)]
        black = [(fx + uw, fy, uw, uh)]
        area = 3 * uw * uh
    elif k == "three-rect-vertical":
        uw, uh = round(f.w * scale), round(f.h * scale / 3)
        white = [(fx, fy, uw, uh), (fx, fy + 2 * uh, uw, uh)]
        black = [(fx, fy + uh, uw, uh)]
        area = 3 * uw * uh
    else:  # four-rect-checker
        uw, uh = round(f.w * scale / 2), round(f.h * scale / 2)
        white = [(fx, fy, uw, uh), (fx + uw, fy + uh, uw, uh)]
        black = [(fx + uw, fy, uw, uh), (fx, fy + uh, uw, uh)]
        area = 4 * uw * uh
    if area == 0:
        raise DegenerateFeatureError(f"{k} at scale {scale} rounds to zero area")
    return white, black, area


def eval_feature(sat: SummedAreaTable, f: HaarFeature, window: tuple[int, int], scale: float = 1.0) -> float:
    """Area-normalized white-minus-black response of ``f`` at a window origin."""
    wx, wy = window
    white, black, area = scaled_feature_layout(f, scale)
    s = 0
    for (rx, ry, rw, rh) in white:
        s += rect_sum(sat, (wx + rx, wy + ry, rw, rh))
    for (rx, ry, rw, rh) in black:
        s -= rect_sum(sat, (wx + rx, wy + ry, rw, rh))
    return s / area


@dataclass(frozen=True)
class Stump:
    """One-feature threshold classifier with its ensemble weight."""

    feature_id: int
    threshold: float
    polarity: int  # +1: predict positive above threshold, -1: below
    alpha: float

    def decide(self, value: float) -> int:
        return 1 if self.polarity * (value - self.threshold) > 0 else -1


@dataclass(frozen=True)
class CascadeStage:
    stumps: tuple[Stump, ...]
    stage_threshold: float


@dataclass(frozen=True)
class CascadeModel:
    base_window: tuple[int, int]
    features: tuple[HaarFeature, ...]
    stages: tuple[CascadeStage, ...]
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.stages:
            raise ValueError("cascade needs at least one stage")
        n = len(self.features)
        for st in self.stages:
            for s in st.stumps:
                if not 0 <= s.feature_id < n:
                    raise ValueError(f"stump feature_id {s.feature_id} out of range")


@dataclass(frozen=True)
class CascadeDecision:
    accepted: bool
    stages_passed: int


def eval_cascade(
    sat: SummedAreaTable,
    model: CascadeModel,
    window: tuple[int, int],
    scale: float = 1.0,
    early_exit: bool = True,
) -> CascadeDecision:
    """Run the staged ensemble at one window; stops at the first failing stage.

    ``early_exit=False`` evaluates every stage unconditionally; the accept
    decision is identical either way (used by the soundness tests).
    """
    failed_at = None
    for i, stage in enumerate(model.stages):
        score = 0.0
        for stump in stage.stumps:
            v = eval_feature(sat, model.features[stump.feature_id], window, scale)
            score += stump.alpha * stump.decide(v)
        if score < stage.stage_threshold and failed_at is None:
            failed_at = i
            if early_exit:
                break
    if failed_at is None:
        return CascadeDecision(accepted=True, stages_passed=len(model.stages))
    return CascadeDecision(accepted=False, stages_passed=failed_at)


@dataclass(frozen=True)
class ScanParams:
    """Sliding-window scan parameters; defaults follow the deployed settings."""

    scale_factor: float = 1.1
    min_neighbors: int = 10
    min_size: int = 45
    step_stride: int = 2
    grouping_eps: float = 0.2

    def __post_init__(self):
        if self.scale_factor <= 1.0:
            raise ValueError("scale_factor must be > 1")
        if self.min_neighbors < 0 or self.min_size < 1 or self.step_stride < 1:
            raise ValueError("invalid scan parameters")


def _stage_scores_grid(sat, model, stage, xs_flat, ys_flat, scale):
    """Vectorized stage score over flat window-origin arrays.

    Mirrors eval_cascade arithmetic exactly (same accumulation order) so the
    scan accept set equals per-window evaluation.
    """
    t = sat.table
    score = np.zeros(xs_flat.shape[0], dtype=np.float64)
    for stump in stage.stumps:
        f = model.features[stump.feature_id]
        white, black, area = scaled_feature_layout(f, scale)
        s = np.zeros(xs_flat.shape[0], dtype=np.int64)
        for (rx, ry, rw, rh) in white:
            x0 = xs_flat + rx
            y0 = ys_flat + ry
            s += t[y0 + rh, x0 + rw] - t[y0, x0 + rw] - t[y0 + rh, x0] + t[y0, x0]
        for (rx, ry, rw, rh) in black:
            x0 = xs_flat + rx
            y0 = ys_flat + ry
            s -= t[y0 + rh, x0 + rw] - t[y0, x0 + rw] - t[y0 + rh, x0] + t[y0, x0]
        v = s / area
        h = np.where(stump.polarity * (v - stump.threshold) > 0, 1.0, -1.0)
        score += stump.alpha * h
    return score


def scan_windows(frame: GrayFrame, model: CascadeModel, params: ScanParams) -> list[BoundingBox]:
    """All accepted windows across scales, before rectangle grouping."""
    sat = integral_image(frame)
    bw, bh = model.base_window
    out: list[BoundingBox] = []
    scale = 1.0
    while True:
        ww = round(bw * scale)
        wh = round(bh * scale)
        if ww > frame.width or wh > frame.height:
            break
        if min(ww, wh) >= params.min_size:
            try:
                out.extend(_scan_one_scale(sat, frame, model, params, scale, ww, wh))
            except DegenerateFeatureError:
                pass  # scale too small for some sub-rect; skip this scale
        scale *= params.scale_factor
    return out


def _scan_one_scale(sat, frame, model, params, scale, ww, wh):
    xs = np.arange(0, frame.width - ww + 1, params.step_stride)
    ys = np.arange(0, frame.height - wh + 1, params.step_stride)
    gx, gy = np.meshgrid(xs, ys)
    xs_flat = gx.ravel()
    ys_flat = gy.ravel()
    for stage in model.stages:
        if xs_flat.size == 0:
            break
        score = _stage_scores_grid(sat, model, stage, xs_flat, ys_flat, scale)
        alive = score >= stage.stage_threshold
        xs_flat = xs_flat[alive]
        ys_flat = ys_flat[alive]
    return [BoundingBox(float(x), float(y), float(ww), float(wh)) for x, y in zip(xs_flat, ys_flat)]


def scan(frame: GrayFrame, model: CascadeModel, params: ScanParams | None = None) -> list[BoundingBox]:
    """Multi-scale sliding-window detection with rectangle grouping.

    Frames smaller than min_size yield an empty list; never an error.
    """
    params = params or ScanParams()
    raw = scan_windows(frame, model, params)
    return group_rectangles(raw, params.min_neighbors, params.grouping_eps)


def _similar(a: BoundingBox, b: BoundingBox, eps: float) -> bool:
    mw = eps * (a.w + b.w) / 2
    mh = eps * (a.h + b.h) / 2
    return (
        abs(a.x - b.x) <= mw
        and abs(a.x2 - b.x2) <= mw
        and abs(a.y - b.y) <= mh
        and abs(a.y2 - b.y2) <= mh
    )


def group_rectangles(rects: list[BoundingBox], min_neighbors: int, eps: float = 0.2) -> list[BoundingBox]:
    """Cluster similar rectangles (transitive closure) and average each class.

    Classes with fewer than ``min_neighbors`` members are discarded.
    """
    if eps < 0:
        raise ValueError("eps must be >= 0")
    n = len(rects)
    if n == 0:
        return []
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    arr = np.array([[r.x, r.y, r.w, r.h] for r in rects], dtype=np.float64)
    x1, y1, w, h = arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]
    x2, y2 = x1 + w, y1 + h
    for i in range(n):
        mw = eps * (w[i] + w) / 2
        mh = eps * (h[i] + h) / 2
        sim = (
            (np.abs(x1[i] - x1) <= mw)
            & (np.abs(x2[i] - x2) <= mw)
            & (np.abs(y1[i] - y1) <= mh)
            & (np.abs(y2[i] - y2) <= mh)
        )
        for j in np.nonzero(sim)[0]:
            if j <= i:
                continue
            ri, rj = find(i), find(int(j))
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)

    classes: dict[int, list[int]] = {}
    for i in range(n):
        classes.setdefault(find(i), []).append(i)

    out = []
    for root in sorted(classes):
        members = classes[root]
        if len(members) < max(min_neighbors, 1):
            continue
        m = arr[members].mean(axis=0)
        out.append(BoundingBox(float(round(m[0])), float(round(m[1])), float(round(m[2])), float(round(m[3]))))
    return out


# --- cascade model (de)serialization -------------------------------------

def cascade_to_dict(model: CascadeModel) -> dict:
    return {
        "version": CASCADE_FORMAT_VERSION,
        "base_window": list(model.base_window),
        "features": [
            {"kind": f.kind, "x": f.x, "y": f.y, "w": f.w, "h": f.h} for f in model.features
        ],
        "stages": [
            {
                "stage_threshold": st.stage_threshold,
                "stumps": [
                    {
                        "feature_id": s.feature_id,
                        "threshold": s.threshold,
                        "polarity": s.polarity,
                        "alpha": s.alpha,
                    }
                    for s in st.stumps
                ],
            }
            for st in model.stages
        ],
        **({"warnings": list(model.warnings)} if model.warnings else {}),
    }


def cascade_from_dict(doc: dict) -> CascadeModel:
    version = doc.get("version")
    if version != CASCADE_FORMAT_VERSION:
        raise CascadeFormatError(f"unknown cascade format version {version!r}")
    try:
        features = tuple(
            HaarFeature(kind=f["kind"], x=f["x"], y=f["y"], w=f["w"], h=f["h"])
            for f in doc["features"]
        )
        stages = tuple(
            CascadeStage(
                stumps=tuple(
                    Stump(
                        feature_id=s["feature_id"],
                        threshold=float(s["threshold"]),
                        polarity=int(s["polarity"]),
                        alpha=float(s["alpha"]),
                    )
                    for s in st["stumps"]
                ),
                stage_threshold=float(st["stage_threshold"]),
            )
            for st in doc["stages"]
        )
        base_window = tuple(doc["base_window"])
    except (KeyError, TypeError) as e:
        raise CascadeFormatError(f"malformed cascade document: {e}") from e
    return CascadeModel(
        base_window=base_window,
        features=features,
        stages=stages,
        warnings=tuple(doc.get("warnings", ())),
    )


def save_cascade(model: CascadeModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cascade_to_dict(model), fh, indent=1)


def load_cascade(path) -> CascadeModel:
    with open(path, "r", encoding="utf-8") as fh:
        return cascade_from_dict(json.load(fh))
