import json
import time

import cv2
import numpy as np
import pytest
import requests
from hypothesis import given, strategies as st

from plateflow import plates
from plateflow.ocr import (
    MockOcrServer,
    OcrEndpoint,
    OcrErrorModel,
    OcrLookupError,
    OcrProtocolError,
    OcrTransportError,
    decode_recognize,
    mock_recognize,
    normalize_bangla,
    recognize,
)


class TestNormalizeBangla:
    def test_plate_string(self):
        assert normalize_bangla("ঢাকা মেট্রো-ঘ ১১-২২৩৩") == "ঢাকামেটরোঘ১১২২৩৩"

    def test_no_bengali(self):
        assert normalize_bangla("ABC 123-xyz") == ""

    def test_virama_split(self):
        # ট + virama + র collapses to টর
        assert normalize_bangla("ট্র") == "টর"

    def test_bytes_input(self):
        assert normalize_bangla("১২৩".encode("utf-8")) == "১২৩"

    def test_invalid_utf8_rejected(self):
        with pytest.raises(UnicodeDecodeError):
            normalize_bangla(b"\xff\xfe")

    @given(st.text(max_size=40))
    def test_idempotent_and_charset(self, s):
        out = normalize_bangla(s)
        assert normalize_bangla(out) == out
        assert len(out) <= len(s)
        for ch in out:
            cp = ord(ch)
            assert 0x0980 <= cp <= 0x09FF
            assert cp not in (0x09CD, 0x09BC)


class TestMockRecognize:
    MANIFEST = {"stream-a": {"1": "ঘ১২৩৪", "2": "ক৫৬৭"}}

    def test_zero_error_rate_exact(self):
        r = mock_recognize("stream-a", 1, self.MANIFEST)
        assert r.text == "ঘ১২৩৪"
        assert r.confidence == 1.0

    def test_full_error_rate_all_substituted(self):
        from plateflow.eval import levenshtein

        truth = self.MANIFEST["stream-a"]["1"]
        for seed in range(100):
            r = mock_recognize("stream-a", 1, self.MANIFEST, OcrErrorModel(1.0, seed))
            assert len(r.text) == len(truth)
            # every position is substituted; edit distance can be lower than
            # the Hamming distance when the garble realigns shared characters
            assert all(a != b for a, b in zip(truth, r.text))
            assert 1 <= levenshtein(truth, r.text).distance <= len(truth)
            # substitutions stay within the character class
            for orig, got in zip(truth, r.text):
                assert (orig in plates.digit_chars()) == (got in plates.digit_chars())

    def test_pure_in_inputs(self):
        m = OcrErrorModel(0.5, seed=4)
        a = mock_recognize("stream-a", 2, self.MANIFEST, m)
        b = mock_recognize("stream-a", 2, self.MANIFEST, m)
        assert a == b

    def test_unknown_instance_raises(self):
        with pytest.raises(OcrLookupError):
            mock_recognize("stream-a", 99, self.MANIFEST)
        with pytest.raises(OcrLookupError):
            mock_recognize("nope", 1, self.MANIFEST)


class TestPlateCodec:
    def test_round_trip_all_alphabet(self):
        for ch in plates.PLATE_ALPHABET:
            canvas = np.full((200, 300), 120, dtype=np.uint8)
            plates.render_plate(canvas, (50, 60, 160, 80), ch)
            crop = canvas[60:140, 50:210]
            assert plates.decode_plate(crop) == ch

    def test_round_trip_random_sizes(self):
        rng = np.random.default_rng(14)
        for _ in range(50)            :
            n = int(rng.integers(1, plates.MAX_PLATE_CHARS + 1))
            text = "".join(rng.choice(list(plates.PLATE_ALPHABET), size=n))
            w = int(rng.integers(80, 200))
            h = int(rng.integers(40, 100))
            canvas = np.full((h + 20, w + 20), 110, dtype=np.uint8)
            plates.render_plate(canvas, (10, 10, w, h), text)
            crop = canvas[10 : 10 + h, 10 : 10 + w]
            assert plates.decode_plate(crop) == text

    def test_survives_bilinear_enlargement(self):
        canvas = np.full((100, 200), 120, dtype=np.uint8)
        plates.render_plate(canvas, (20, 20, 140, 60), "ঘ১২৩")
        crop = canvas[20:80, 20:160]
        big = cv2.resize(crop, (420, 180), interpolation=cv2.INTER_LINEAR)
        assert plates.decode_plate(big) == "ঘ১২৩"

    def test_garbage_decodes_empty(self):
        rng = np.random.default_rng(3)
        noise = rng.integers(0, 256, size=(60, 140), dtype=np.uint8)
        assert plates.decode_plate(noise) == ""

    def test_decode_recognize_wrapper(self):
        canvas = np.full((100, 200), 120, dtype=np.uint8)
        plates.render_plate(canvas, (20, 20, 140, 60), "ক৭৮")
        r = decode_recognize(canvas[20:80, 20:160])
        assert r.text == "ক৭৮"
        assert r.confidence == 1.0


class TestRecognizeHttp:
    def plate_crop(self, text="ঘ১২৩৪"):
        canvas = np.full((120, 260), 120, dtype=np.uint8)
        plates.render_plate(canvas, (20, 20, 220, 80), text)
        return canvas[20:100, 20:240]

    def test_against_mock_server(self):
        with MockOcrServer() as server:
            r = recognize(self.plate_crop(), OcrEndpoint(server.url))
            assert r.text == "ঘ১২৩৪"
            assert r.confidence == 1.0
            assert r.latency >= 0.0

    def test_fixed_text_override(self):
        with MockOcrServer(fixed_text="ক১১") as server:
            r = recognize(self.plate_crop(), OcrEndpoint(server.url))
            assert r.text == "ক১১"

    def test_connection_refused_typed_error(self):
        ep = OcrEndpoint("http://127.0.0.1:1", timeout=0.5, retries=1, backoff_base=0.01)
        t0 = time.monotonic()
        with pytest.raises(OcrTransportError):
            recognize(self.plate_crop(), ep)
        # never blocks longer than timeout*(retries+1) plus backoff and slack
        assert time.monotonic() - t0 < 0.5 * 2 + 0.01 + 2.0

    def test_server_error_typed(self):
        # POSTing to a wrong path on the mock yields a non-2xx status
        with MockOcrServer() as server:
            ep = OcrEndpoint(server.url + "/bogus", retries=0)
            with pytest.raises(OcrProtocolError):
                recognize(self.plate_crop(), ep)

    def test_empty_crop_rejected(self):
        with pytest.raises(ValueError):
            recognize(np.zeros((0, 0), dtype=np.uint8), OcrEndpoint("http://x"))

    def test_wire_contract_shape(self):
        with MockOcrServer() as server:
            import base64

            ok, png = cv2.imencode(".png", self.plate_crop("১"))
            body = {
                "v": 1,
                "image_b64": base64.b64encode(png.tobytes()).decode("ascii"),
                "lang_hint": "bn",
            }
            resp = requests.post(server.url + "/v1/recognize", json=body, timeout=5)
            assert resp.status_code == 200
            doc = resp.json()
            assert doc["v"] == 1 and doc["text"] == "১"
