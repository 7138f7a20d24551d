"""Per-frame orchestration: wake-up gate -> backbone detection -> temporal
instance assignment (24-frame gap rule) -> best-K candidate buffering ->
crop-and-enlarge handoff, with throughput metering."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

import cv2
import numpy as np

from .detect import DetectorConfig, DetectorFailure, make_detector, nms
from .geometry import BoundingBox, Detection
from .haar import CascadeModel, GrayFrame, ScanParams, scan


class StreamOrderError(ValueError):
    """Detections arrived out of frame order."""


def wakeup_gate(frame: GrayFrame, model: CascadeModel, params: ScanParams) -> bool:
    """True iff the cascade fires anywhere on the frame."""
    return bool(scan(frame, model, params))


class InstanceSegmenter:
    """Allocates instance ids from the inter-detection frame-gap rule.

    A gap of ``gap_frames`` or more between consecutive detections starts a
    new instance (the boundary itself starts one: frames 100 and 124 with
    gap 24 are two instances).
    """

    def __init__(self, gap_frames: int = 24):
        if gap_frames < 1:
            raise ValueError("gap_frames must be >= 1")
        self.gap_frames = gap_frames
        self.last_detection_frame: int | None = None
        self.current_id = -1

    def assign(self, det_frame: int) -> int:
        if self.last_detection_frame is not None and det_frame < self.last_detection_frame:
            raise StreamOrderError(
                f"frame {det_frame} after frame {self.last_detection_frame}"
            )
        if (
            self.last_detection_frame is None
            or det_frame - self.last_detection_frame >= self.gap_frames
        ):
            self.current_id += 1
        self.last_detection_frame = det_frame
        return self.current_id


def segment_trace(detection_frames: list[int], gap_frames: int = 24) -> list[list[int]]:
    """Partition an ordered detection-frame trace into instances."""
    seg = InstanceSegmenter(gap_frames)
    groups: list[list[int]] = []
    for f in detection_frames:
        if seg.assign(f) == len(groups):
            groups.append([])
        groups[-1].append(f)
    return groups


@dataclass(frozen=True)
class Candidate:
    detection: Detection
    crop: np.ndarray


def update_best_k(buffer: list[Candidate], cand: Candidate, k: int) -> list[Candidate]:
    """Insert keeping the k best by (confidence desc, frame_index asc)."""
    out = list(buffer)
    out.append(cand)
    out.sort(key=lambda c: (-c.detection.confidence, c.detection.frame_index))
    return out[:k]


@dataclass
class PlateInstance:
    """One temporally contiguous vehicle appearance with its best-K buffer."""

    instance_id: int
    first_frame: int
    last_frame: int
    candidates: list[Candidate] = field(default_factory=list)

    def add(self, cand: Candidate, k: int) -> None:
        self.candidates = update_best_k(self.candidates, cand, k)
        self.last_frame = max(self.last_frame, cand.detection.frame_index)


def crop_enlarge(frame: np.ndarray, box: BoundingBox, min_dim: int = 150) -> np.ndarray:
    """Clamp, crop and (if the short side is under min_dim) bilinearly upscale
    preserving aspect ratio."""
    h, w = frame.shape[:2]
    clamped = box.clamped(w, h)
    x0, y0 = int(round(clamped.x)), int(round(clamped.y))
    x1, y1 = int(round(clamped.x2)), int(round(clamped.y2))
    if x1 <= x0 or y1 <= y0:
        raise ValueError("clamped box has zero area")
    crop = frame[y0:y1, x0:x1]
    ch, cw = crop.shape[:2]
    if min(cw, ch) >= min_dim:
        return crop.copy()
    s = min_dim / min(cw, ch)
    return cv2.resize(crop, (round(cw * s), round(ch * s)), interpolation=cv2.INTER_LINEAR)


def fps_probe(frames_processed: int, wall_time: float) -> float:
    if wall_time <= 0:
        raise ValueError("wall_time must be positive")
    return frames_processed / wall_time


@dataclass
class PipelineConfig:
    gap_frames: int = 24
    best_k: int = 3
    wakeup_model: CascadeModel | None = None  # None disables the gate (ablation)
    scan_params: ScanParams = field(default_factory=ScanParams)
    backbone: DetectorConfig = field(default_factory=DetectorConfig)
    enlarge_min_dim: int = 150
    fps_assumed: float = 24.0

    def __post_init__(self):
        if self.gap_frames < 1 or self.best_k < 1:
            raise ValueError("gap_frames and best_k must be >= 1")


@dataclass
class StreamResult:
    stream_id: str
    instances: list[PlateInstance]
    frames_processed: int = 0
    frames_gated_out: int = 0
    frames_with_detections: int = 0
    backbone_invocations: int = 0
    detector_failures: int = 0
    wall_time: float = 0.0
    fps_measured: float = 0.0
    incomplete: bool = False


class FrameSource:
    """Directory of numbered ``%06d.pgm`` frames described by stream.json."""

    def __init__(self, path):
        self.path = Path(path)
        manifest = self.path / "stream.json"
        if not manifest.is_file():
            raise FileNotFoundError(f"missing stream manifest {manifest}")
        doc = json.loads(manifest.read_text(encoding="utf-8"))
        if doc.get("v") != 1:
            raise ValueError(f"unknown stream manifest version {doc.get('v')!r}")
        self.fps = float(doc["fps"])
        self.n_frames = int(doc["frames"])
        self.width = int(doc["width"])
        self.height = int(doc["height"])
        self.stream_id = doc.get("stream_id", self.path.name)

    def __iter__(self) -> Iterator[GrayFrame]:
        for idx in range(self.n_frames):
            p = self.path / f"{idx:06d}.pgm"
            img = cv2.imread(str(p), cv2.IMREAD_GRAYSCALE)
            if img is None:
                raise FileNotFoundError(f"missing or unreadable frame {p}")
            yield GrayFrame.from_array(img, frame_index=idx)


def _best_detection(dets: list[Detection]) -> Detection:
    return min(dets, key=lambda d: (-d.confidence, d.box.y, d.box.x))


def process_stream(
    frames: Iterable[GrayFrame],
    config: PipelineConfig,
    detector=None,
    annotations=None,
    stream_id: str = "stream",
    out_dir=None,
    gate_fn: Callable[[GrayFrame], bool] | None = None,
    progress_cb: Callable[[int], None] | None = None,
) -> StreamResult:
    """Run the full per-frame flow over an ordered frame source.

    ``gate_fn`` overrides the cascade gate (used by ablations and latency
    simulations); ``detector`` overrides construction from the config.
    """
    if isinstance(frames, FrameSource):
        stream_id = frames.stream_id
    if detector is None:
        detector = make_detector(config.backbone, annotations)
    if gate_fn is None and config.wakeup_model is not None:
        model, params = config.wakeup_model, config.scan_params
        gate_fn = lambda fr: wakeup_gate(fr, model, params)

    segmenter = InstanceSegmenter(config.gap_frames)
    result = StreamResult(stream_id=stream_id, instances=[])
    started = time.perf_counter()
    try:
        for frame in frames:
            result.frames_processed += 1
            if progress_cb:
                progress_cb(result.frames_processed)
            if gate_fn is not None and not gate_fn(frame):
                result.frames_gated_out += 1
                continue
            result.backbone_invocations += 1
            try:
                dets = detector.detect(frame.frame_index, frame.data)
            except DetectorFailure:
                result.detector_failures += 1
                if config.backbone.on_failure == "abort":
                    result.incomplete = True
                    break
                continue
            if config.backbone.nms_enabled:
                dets = nms(dets, config.backbone.nms_score_thr, config.backbone.nms_iou_thr)
            dets = [d for d in dets if d.confidence >= config.backbone.confidence_threshold]
            if not dets:
                continue
            result.frames_with_detections += 1
            best = _best_detection(dets)
            instance_id = segmenter.assign(frame.frame_index)
            if instance_id == len(result.instances):
                result.instances.append(
                    PlateInstance(
                        instance_id=instance_id,
                        first_frame=frame.frame_index,
                        last_frame=frame.frame_index,
                    )
                )
            crop = crop_enlarge(frame.data, best.box, config.enlarge_min_dim)
            result.instances[instance_id].add(Candidate(best, crop), config.best_k)
    finally:
        detector.close()

    result.wall_time = time.perf_counter() - started
    result.fps_measured = fps_probe(result.frames_processed, result.wall_time) if result.wall_time > 0 else 0.0
    if out_dir is not None:
        persist_result(result, out_dir)
    return result


def persist_result(result: StreamResult, out_dir) -> Path:
    """Write crops and instances.json under out/<stream-id>/."""
    base = Path(out_dir) / result.stream_id
    base.mkdir(parents=True, exist_ok=True)
    doc = {"v": 1, "stream_id": result.stream_id, "instances": []}
    for inst in result.instances:
        inst_dir = base / f"instance-{inst.instance_id}"
        inst_dir.mkdir(exist_ok=True)
        cands = []
        for rank, cand in enumerate(inst.candidates, start=1):
            crop_path = inst_dir / f"cand-{rank}.png"
            cv2.imwrite(str(crop_path), cand.crop)
            cands.append(
                {
                    "rank": rank,
                    "frame_index": cand.detection.frame_index,
                    "confidence": cand.detection.confidence,
                    "box": cand.detection.box.to_dict(),
                    "crop_path": str(crop_path.relative_to(base)),
                }
            )
        doc["instances"].append(
            {
                "id": inst.instance_id,
                "first_frame": inst.first_frame,
                "last_frame": inst.last_frame,
                "candidates": cands,
            }
        )
    (base / "instances.json").write_text(json.dumps(doc, indent=1), encoding="utf-8")
    run = {
        "frames_processed": result.frames_processed,
        "frames_gated_out": result.frames_gated_out,
        "frames_with_detections": result.frames_with_detections,
        "backbone_invocations": result.backbone_invocations,
        "detector_failures": result.detector_failures,
        "wall_time": result.wall_time,
        "fps_measured": result.fps_measured,
        "incomplete": result.incomplete,
    }
    (base / "run.json").write_text(json.dumps(run, indent=1), encoding="utf-8")
    return base
