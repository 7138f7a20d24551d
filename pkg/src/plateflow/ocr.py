"""Recognition stage: OCR-service client, deterministic mock OCR, and the
Bangla text normalizer applied before metric computation."""

from __future__ import annotations

import base64
import json
import threading
import time
import zlib
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import cv2
import numpy as np
import requests

from . import plates

BENGALI_BLOCK = (0x0980, 0x09FF)
VIRAMA = 0x09CD
NUKTA = 0x09BC
_ZERO_WIDTH = (0x200C, 0x200D)  # ZWNJ, ZWJ


class OcrError(RuntimeError):
    pass


class OcrTransportError(OcrError):
    """Connection failure or timeout talking to the OCR service."""


class OcrProtocolError(OcrError):
    """Non-2xx status or malformed response body."""


class OcrLookupError(KeyError):
    """Mock OCR provenance not present in the ground-truth manifest."""


@dataclass(frozen=True)
class OcrResult:
    text: str
    confidence: float | None = None
    latency: float = 0.0


@dataclass(frozen=True)
class OcrEndpoint:
    base_url: str
    timeout: float = 10.0
    max_parallel: int = 4
    retries: int = 2
    backoff_base: float = 0.25

    def __post_init__(self):
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")


def normalize_bangla(text: str | bytes) -> str:
    """Keep Bengali-block codepoints only, splitting conjuncts.

    Drops the virama (so grapheme roots fall apart into their consonants),
    the nukta, zero-width joiners, and everything outside U+0980-U+09FF.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")  # UnicodeDecodeError on invalid input
    out = []
    for ch in text:
        cp = ord(ch)
        if cp in (VIRAMA, NUKTA) or cp in _ZERO_WIDTH:
            continue
        if BENGALI_BLOCK[0] <= cp <= BENGALI_BLOCK[1]:
            out.append(ch)
    return "".join(out)


def recognize(crop: np.ndarray, ep: OcrEndpoint) -> OcrResult:
    """POST the crop to the OCR service and return its text verbatim.

    Retries transport and protocol failures with exponential backoff; the
    caller marks the instance ocr-failed when this finally raises.
    """
    if crop.size == 0:
        raise ValueError("empty crop")
    ok, png = cv2.imencode(".png", crop)
    if not ok:
        raise ValueError("could not encode crop as PNG")
    body = {"v": 1, "image_b64": base64.b64encode(png.tobytes()).decode("ascii"), "lang_hint": "bn"}
    url = ep.base_url.rstrip("/") + "/v1/recognize"

    started = time.monotonic()
    last_error: OcrError | None = None
    for attempt in range(ep.retries + 1):
        if attempt:
            time.sleep(ep.backoff_base * 2 ** (attempt - 1))
        try:
            resp = requests.post(url, json=body, timeout=ep.timeout)
        except requests.RequestException as e:
            last_error = OcrTransportError(str(e))
            continue
        if not 200 <= resp.status_code < 300:
            last_error = OcrProtocolError(f"OCR service returned status {resp.status_code}")
            continue
        try:
            doc = resp.json()
            text = doc["text"]
        except (ValueError, KeyError) as e:
            last_error = OcrProtocolError(f"malformed OCR response: {e}")
            continue
        confidence = doc.get("confidence")
        return OcrResult(
            text=text,
            confidence=None if confidence is None else float(confidence),
            latency=time.monotonic() - started,
        )
    raise last_error


@dataclass(frozen=True)
class OcrErrorModel:
    char_sub_rate: float = 0.0
    seed: int = 0


def load_ocr_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("v") != 1:
        raise ValueError(f"unknown OCR manifest version {doc.get('v')!r}")
    return doc["streams"]


def _same_class_chars(ch: str) -> list[str]:
    if ch in plates.digit_chars():
        return plates.digit_chars()
    return plates.letter_chars()


def mock_recognize(
    stream_id: str,
    instance_id: int,
    manifest: dict,
    error_model: OcrErrorModel = OcrErrorModel(),
) -> OcrResult:
    """Manifest lookup plus a seeded per-character substitution channel.

    Pure in (provenance, manifest, error model): identical inputs always give
    the identical result.
    """
    try:
        truth = manifest[stream_id][str(instance_id)]
    except KeyError:
        raise OcrLookupError(f"no ground truth for {stream_id}/{instance_id}") from None
    rng = np.random.default_rng(
        [error_model.seed & 0x7FFFFFFF, zlib.crc32(stream_id.encode("utf-8")), instance_id]
    )
    chars = []
    for ch in truth:
        if error_model.char_sub_rate > 0 and rng.random() < error_model.char_sub_rate:
            pool = [c for c in _same_class_chars(ch) if c != ch]
            chars.append(pool[int(rng.integers(len(pool)))])
        else:
            chars.append(ch)
    return OcrResult(text="".join(chars), confidence=1.0 - error_model.char_sub_rate)


def decode_recognize(crop: np.ndarray) -> OcrResult:
    """Local OCR by decoding the synthetic plate pattern from pixels."""
    return OcrResult(text=plates.decode_plate(crop), confidence=1.0)


class _MockOcrHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        if self.path != "/v1/recognize":
            self._reply(404, {"error": {"code": "not_found", "message": self.path}})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            doc = json.loads(self.rfile.read(length))
            png = base64.b64decode(doc["image_b64"])
            img = cv2.imdecode(np.frombuffer(png, np.uint8), cv2.IMREAD_GRAYSCALE)
            if img is None:
                raise ValueError("undecodable image payload")
        except (ValueError, KeyError) as e:
            self._reply(400, {"error": {"code": "bad_request", "message": str(e)}})
            return
        text = self.server.fixed_text  # type: ignore[attr-defined]
        if text is None:
            text = plates.decode_plate(img)
        self._reply(200, {"v": 1, "text": text, "confidence": 1.0})

    def _reply(self, status: int, doc: dict):
        payload = json.dumps(doc, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


class MockOcrServer:
    """Bundled HTTP OCR serving the real wire contract.

    Decodes synthetic plate crops from pixels, so the transport path under
    test is identical to a real service. ``fixed_text`` overrides decoding
    (handy for protocol-level tests).
    """

    def __init__(self, port: int = 0, fixed_text: str | None = None):
        self._server = ThreadingHTTPServer(("127.0.0.1", port), _MockOcrHandler)
        self._server.fixed_text = fixed_text  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self._server.server_address[1]}"

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()
        self._thread.join()

    start = __enter__

    def stop(self):
        self.__exit__()
