"""Deterministic synthetic stream generator.

Produces numbered grayscale frames, the annotation file, and the OCR
ground-truth manifest, so the whole pipeline can run closed-loop without any
real recordings. Plate pixels come from the ``plates`` codec; everything is
byte-deterministic given the spec seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from . import plates


class UnsupportedSpecError(ValueError):
    """Spec asks for something the generator does not support."""


@dataclass(frozen=True)
class VehicleEvent:
    enter_frame: int
    exit_frame: int
    start_box: tuple[int, int, int, int]  # x, y, w, h
    end_box: tuple[int, int, int, int]
    plate_text: str

    def __post_init__(self):
        if self.exit_frame < self.enter_frame:
            raise ValueError("event exits before it enters")


@dataclass(frozen=True)
class SynthSpec:
    stream_id: str
    seed: int
    events: tuple[VehicleEvent, ...]
    width: int = 480
    height: int = 480
    fps: float = 24.0
    noise_level: float = 0.15
    total_frames: int | None = None  # default: last exit + 12

    def __post_init__(self):
        prev_exit = None
        for ev in self.events:
            if prev_exit is not None and ev.enter_frame <= prev_exit:
                raise UnsupportedSpecError(
                    "overlapping or out-of-order events; one active plate at a time"
                )
            prev_exit = ev.exit_frame

    @property
    def n_frames(self) -> int:
        if self.total_frames is not None:
            return self.total_frames
        if not self.events:
            return 24
        return self.events[-1].exit_frame + 12


def spec_from_dict(doc: dict) -> SynthSpec:
    if doc.get("v") != 1:
        raise ValueError(f"unknown synth spec version {doc.get('v')!r}")

    def box(d):
        return (int(d["x"]), int(d["y"]), int(d["w"]), int(d["h"]))

    events = tuple(
        VehicleEvent(
            enter_frame=int(e["enter_frame"]),
            exit_frame=int(e["exit_frame"]),
            start_box=box(e["start_box"]),
            end_box=box(e["end_box"]),
            plate_text=e["plate_text"],
        )
        for e in doc.get("events", [])
    )
    return SynthSpec(
        stream_id=doc["stream_id"],
        seed=int(doc.get("seed", 0)),
        events=events,
        width=int(doc.get("width", 480)),
        height=int(doc.get("height", 480)),
        fps=float(doc.get("fps", 24)),
        noise_level=float(doc.get("noise_level", 0.15)),
        total_frames=doc.get("total_frames"),
    )


def load_spec(path) -> SynthSpec:
    with open(path, encoding="utf-8") as fh:
        return spec_from_dict(json.load(fh))


def _interp_box(ev: VehicleEvent, frame: int) -> tuple[int, int, int, int]:
    span = ev.exit_frame - ev.enter_frame
    t = 0.0 if span == 0 else (frame - ev.enter_frame) / span
    return tuple(
        int(round(a + t * (b - a))) for a, b in zip(ev.start_box, ev.end_box)
    )


def _background(spec: SynthSpec, frame_index: int) -> np.ndarray:
    """Seeded value-noise plus low-contrast rectangles; non-trivial negatives."""
    rng = np.random.default_rng([spec.seed & 0x7FFFFFFF, frame_index])
    coarse = rng.normal(0, 255 * spec.noise_level, size=(16, 16))
    noise = cv2.resize(coarse, (spec.width, spec.height), interpolation=cv2.INTER_LINEAR)
    canvas = np.clip(120.0 + noise, 0, 255)
    for _ in range(6):
        w = int(rng.integers(20, max(21, spec.width // 3)))
        h = int(rng.integers(20, max(21, spec.height // 3)))
        x = int(rng.integers(0, max(1, spec.width - w)))
        y = int(rng.integers(0, max(1, spec.height - h)))
        shade = float(rng.uniform(-30, 30))
        canvas[y : y + h, x : x + w] = np.clip(canvas[y : y + h, x : x + w] + shade, 0, 255)
    return canvas.astype(np.uint8)


def render_frame(spec: SynthSpec, frame_index: int) -> tuple[np.ndarray, dict]:
    """One frame plus {instance_id: box} for plates visible on it."""
    canvas = _background(spec, frame_index)
    visible = {}
    for instance_id, ev in enumerate(spec.events):
        if ev.enter_frame <= frame_index <= ev.exit_frame:
            box = _interp_box(ev, frame_index)
            x, y, w, h = box
            if x < 0 or y < 0 or x + w > spec.width or y + h > spec.height:
                raise UnsupportedSpecError(f"event {instance_id} leaves the frame at {frame_index}")
            plates.render_plate(canvas, box, ev.plate_text)
            visible[instance_id] = box
    return canvas, visible


def generate_stream(spec: SynthSpec, out_dir) -> Path:
    """Write frames, stream.json, annotations.json and ocr_manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    span_boxes: dict[int, dict[int, tuple]] = {i: {} for i in range(len(spec.events))}
    for idx in range(spec.n_frames):
        canvas, visible = render_frame(spec, idx)
        cv2.imwrite(str(out / f"{idx:06d}.pgm"), canvas)
        for instance_id, box in visible.items():
            span_boxes[instance_id][idx] = box

    stream_doc = {
        "v": 1,
        "stream_id": spec.stream_id,
        "fps": spec.fps,
        "frames": spec.n_frames,
        "width": spec.width,
        "height": spec.height,
    }
    (out / "stream.json").write_text(json.dumps(stream_doc, indent=1), encoding="utf-8")

    ann = {
        "v": 1,
        "stream_id": spec.stream_id,
        "plates": [
            {
                "instance_id": i,
                "text": ev.plate_text,
                "spans": [
                    {
                        "from": ev.enter_frame,
                        "to": ev.exit_frame,
                        "boxes": {
                            str(f): {"x": b[0], "y": b[1], "w": b[2], "h": b[3]}
                            for f, b in sorted(span_boxes[i].items())
                        },
                    }
                ],
            }
            for i, ev in enumerate(spec.events)
        ],
    }
    (out / "annotations.json").write_text(
        json.dumps(ann, ensure_ascii=False, indent=1), encoding="utf-8"
    )

    manifest = {
        "v": 1,
        "streams": {
            spec.stream_id: {str(i): ev.plate_text for i, ev in enumerate(spec.events)}
        },
    }
    (out / "ocr_manifest.json").write_text(
        json.dumps(manifest, ensure_ascii=False, indent=1), encoding="utf-8"
    )
    return out


def random_plate_text(rng: np.random.Generator, length: int = 8) -> str:
    # plate-like: one letter then digits
    chars = [plates.letter_chars()[int(rng.integers(len(plates.letter_chars())))]]
    digits = plates.digit_chars()
    chars += [digits[int(rng.integers(10))] for _ in range(length - 1)]
    return "".join(chars)


def random_spec(
    stream_id: str,
    seed: int,
    n_events: int = 3,
    width: int = 480,
    height: int = 480,
    visible_frames: tuple[int, int] = (30, 45),
    gap_frames: tuple[int, int] = (36, 60),
    plate_width: tuple[int, int] = (96, 140),
    drift_px: int = 12,
) -> SynthSpec:
    """A plausible stream spec: vehicles with clear inter-event gaps."""
    rng = np.random.default_rng(seed)
    events = []
    frame = int(rng.integers(5, 15))
    for _ in range(n_events):
        dwell = int(rng.integers(*visible_frames))
        w = int(rng.integers(*plate_width))
        h = w // 2
        margin = drift_px + 2
        x = int(rng.integers(margin, width - w - margin))
        y = int(rng.integers(margin, height - h - margin))
        dx = int(rng.integers(-drift_px, drift_px + 1))
        dy = int(rng.integers(-drift_px, drift_px + 1))
        events.append(
            VehicleEvent(
                enter_frame=frame,
                exit_frame=frame + dwell - 1,
                start_box=(x, y, w, h),
                end_box=(x + dx, y + dy, w, h),
                plate_text=random_plate_text(rng),
            )
        )
        frame += dwell + int(rng.integers(*gap_frames))
    return SynthSpec(stream_id=stream_id, seed=seed, events=tuple(events), width=width, height=height)


def make_training_set(
    n_pos: int,
    n_neg: int,
    seed: int,
    base_window: tuple[int, int] = (24, 12),
    frame_size: int = 240,
):
    """Window-level cascade training patches from the synthetic renderer.

    Positives are plate boxes resampled to the base window; negatives are
    random background crops from plate-free frames.
    """
    from .haar import GrayFrame

    rng = np.random.default_rng(seed)
    bw, bh = base_window
    positives, negatives = [], []
    bg_spec = SynthSpec(stream_id="train-bg", seed=seed ^ 0x5A5A, events=(), width=frame_size, height=frame_size)
    for i in range(n_pos):
        w = int(rng.integers(64, 160))
        h = w // 2
        x = int(rng.integers(0, frame_size - w))
        y = int(rng.integers(0, frame_size - h))
        canvas = _background(bg_spec, 10_000 + i)
        plates.render_plate(canvas, (x, y, w, h), random_plate_text(rng))
        patch = cv2.resize(canvas[y : y + h, x : x + w], (bw, bh), interpolation=cv2.INTER_AREA)
        positives.append(GrayFrame.from_array(patch))
    for i in range(n_neg):
        canvas = _background(bg_spec, 20_000 + i // 4)
        w = int(rng.integers(48, 180))
        h = max(8, w // 2)
        x = int(rng.integers(0, frame_size - w))
        y = int(rng.integers(0, frame_size - h))
        patch = cv2.resize(canvas[y : y + h, x : x + w], (bw, bh), interpolation=cv2.INTER_AREA)
        negatives.append(GrayFrame.from_array(patch))
    return positives, negatives
