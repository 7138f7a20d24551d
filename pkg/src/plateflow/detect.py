"""Backbone-detector abstraction: ground-truth oracle, external-process
adapter speaking a line-JSON wire protocol, and blob preprocessing."""

from __future__ import annotations

import base64
import json
import queue
import subprocess
import threading
from dataclasses import dataclass, field

import cv2
import numpy as np

from .geometry import BoundingBox, Detection, iou, nms  # re-exported on purpose

WIRE_VERSION = 1


class DetectorFailure(RuntimeError):
    """Child process died, timed out, or produced a malformed record."""

    def __init__(self, message: str, frame_index: int | None = None):
        super().__init__(message)
        self.frame_index = frame_index


@dataclass(frozen=True)
class BlobParams:
    size: tuple[int, int] = (320, 320)
    scale: float = 0.00392
    mean: tuple[float, float, float] = (0.0, 0.0, 0.0)
    swap_rb: bool = True

    def __post_init__(self):
        if self.size[0] < 1 or self.size[1] < 1:
            raise ValueError("blob size must be positive")


@dataclass(frozen=True)
class OracleNoise:
    miss_rate: float = 0.0
    jitter_px: int = 0
    confidence_law: tuple = ("constant", 1.0)  # or ("uniform", lo, hi)
    seed: int = 0


@dataclass(frozen=True)
class DetectorConfig:
    kind: str = "oracle"  # oracle | subprocess
    confidence_threshold: float = 0.5
    nms_score_thr: float | None = None  # both set => NMS applied
    nms_iou_thr: float | None = None
    oracle_noise: OracleNoise = field(default_factory=OracleNoise)
    subprocess_cmd: list[str] | None = None
    handshake_timeout: float = 5.0
    response_timeout: float = 5.0
    on_failure: str = "skip"  # skip | abort

    def __post_init__(self):
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError("confidence_threshold must be in [0,1]")
        if self.kind not in ("oracle", "subprocess"):
            raise ValueError(f"unknown detector kind {self.kind!r}")

    @property
    def nms_enabled(self) -> bool:
        return self.nms_score_thr is not None and self.nms_iou_thr is not None


def preprocess_blob(frame: np.ndarray, p: BlobParams) -> np.ndarray:
    """Resize (bilinear), subtract per-channel mean, scale, optionally swap
    R/B; returns a planar channels x h x w float32 tensor."""
    if frame.size == 0:
        raise ValueError("zero-area frame")
    if frame.ndim == 2:
        frame = frame[:, :, None]
    h, w = p.size[1], p.size[0]
    if (frame.shape[1], frame.shape[0]) != (w, h):
        resized = cv2.resize(frame, (w, h), interpolation=cv2.INTER_LINEAR)
        if resized.ndim == 2:
            resized = resized[:, :, None]
    else:
        resized = frame
    out = resized.astype(np.float32)
    mean = np.asarray(p.mean[: out.shape[2]], dtype=np.float32)
    out = (out - mean) * np.float32(p.scale)
    if p.swap_rb and out.shape[2] == 3:
        out = out[:, :, ::-1]
    return np.ascontiguousarray(out.transpose(2, 0, 1))


class OracleDetector:
    """Test stand-in backbone that reads the ground-truth annotations.

    Per visible plate it emits the annotated box, optionally jittered and
    dropped, with draws keyed on (seed, frame, instance) so results do not
    depend on call order.
    """

    def __init__(self, annotations, noise: OracleNoise = OracleNoise()):
        self.annotations = annotations
        self.noise = noise

    def detect(self, frame_index: int, frame=None) -> list[Detection]:
        out: list[Detection] = []
        for inst in self.annotations.plates:
            box = inst.box_at(frame_index)
            if box is None:
                continue
            rng = np.random.default_rng(
                [self.noise.seed & 0x7FFFFFFF, frame_index, inst.instance_id]
            )
            if self.noise.miss_rate > 0 and rng.random() < self.noise.miss_rate:
                continue
            j = self.noise.jitter_px
            if j > 0:
                dx1, dy1, dx2, dy2 = rng.integers(-j, j + 1, size=4)
                x1, y1 = box.x + dx1, box.y + dy1
                x2, y2 = box.x2 + dx2, box.y2 + dy2
                box = BoundingBox(x1, y1, max(1.0, x2 - x1), max(1.0, y2 - y1))
            law = self.noise.confidence_law
            if law[0] == "constant":
                conf = float(law[1])
            elif law[0] == "uniform":
                conf = float(rng.uniform(law[1], law[2]))
            else:
                raise ValueError(f"unknown confidence law {law[0]!r}")
            out.append(Detection(box=box, confidence=conf, frame_index=frame_index))
        return out

    def close(self):
        pass


def encode_frame_request(frame_index: int, pixels: np.ndarray) -> str:
    if pixels.ndim == 2:
        channels = 1
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        channels = 3
    else:
        raise ValueError("expected HxW or HxWx3 uint8 pixels")
    return json.dumps(
        {
            "v": WIRE_VERSION,
            "frame_id": frame_index,
            "width": pixels.shape[1],
            "height": pixels.shape[0],
            "channels": channels,
            "pixels_b64": base64.b64encode(np.ascontiguousarray(pixels).tobytes()).decode("ascii"),
        }
    )


def parse_detector_response(line: str, expect_frame_id: int) -> list[Detection]:
    try:
        doc = json.loads(line)
        if doc.get("v") != WIRE_VERSION:
            raise ValueError(f"unsupported wire version {doc.get('v')!r}")
        frame_id = doc["frame_id"]
        boxes = doc["boxes"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise DetectorFailure(f"malformed response: {e}", expect_frame_id) from e
    if frame_id != expect_frame_id:
        raise DetectorFailure(
            f"out-of-order response: got frame {frame_id}, expected {expect_frame_id}",
            expect_frame_id,
        )
    dets = []
    for b in boxes:
        try:
            det = Detection(
                box=BoundingBox(float(b["x"]), float(b["y"]), float(b["w"]), float(b["h"])),
                confidence=float(b["score"]),
                frame_index=frame_id,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DetectorFailure(f"malformed box record: {e}", expect_frame_id) from e
        dets.append(det)
    return dets


class SubprocessDetector:
    """Hosts a real backbone out-of-process over stdin/stdout line JSON.

    One request record per frame, exactly one response per request, in order.
    A reader thread feeds a queue so timeouts never hang on a dead child.
    """

    _EOF = object()

    def __init__(self, cmd: list[str], handshake_timeout: float = 5.0, response_timeout: float = 5.0):
        self.response_timeout = response_timeout
        self._proc = subprocess.Popen(
            cmd,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        line = self._next_line(handshake_timeout, frame_index=None)
        try:
            hello = json.loads(line)
        except json.JSONDecodeError as e:
            raise DetectorFailure(f"bad handshake: {e}") from e
        if hello.get("v") != WIRE_VERSION or hello.get("ready") is not True:
            raise DetectorFailure(f"bad handshake record: {line!r}")

    def _pump(self):
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(self._EOF)

    def _next_line(self, timeout: float, frame_index: int | None) -> str:
        try:
            item = self._lines.get(timeout=timeout)
        except queue.Empty:
            raise DetectorFailure("detector response timeout", frame_index) from None
        if item is self._EOF:
            raise DetectorFailure(
                f"detector child exited (code {self._proc.poll()})", frame_index
            )
        return item

    def detect(self, frame_index: int, frame: np.ndarray) -> list[Detection]:
        request = encode_frame_request(frame_index, frame)
        try:
            self._proc.stdin.write(request + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise DetectorFailure(f"detector child pipe closed: {e}", frame_index) from e
        line = self._next_line(self.response_timeout, frame_index)
        return parse_detector_response(line, frame_index)

    def close(self):
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()


def make_detector(config: DetectorConfig, annotations=None):
    if config.kind == "oracle":
        if annotations is None:
            raise ValueError("oracle detector needs annotations")
        return OracleDetector(annotations, config.oracle_noise)
    if not config.subprocess_cmd:
        raise ValueError("subprocess detector needs a command line")
    return SubprocessDetector(
        config.subprocess_cmd, config.handshake_timeout, config.response_timeout
    )
