"""Synthetic plate rendering codec.

Plates are drawn as a black-bordered white rectangle whose interior holds a
fixed 16x6 bit grid encoding the plate string (6 bits per column, one column
per character). The layout is purely relative to the plate box, so a crop of
the exact box can be decoded at any scale; this is what lets the bundled mock
OCR read plates back from pixels alone.
"""

from __future__ import annotations

import numpy as np

GRID_COLS = 16
GRID_ROWS = 6
BORDER_FRAC = 0.10
PAD_CODE = (1 << GRID_ROWS) - 1  # all-black column

_BANGLA_DIGITS = [chr(cp) for cp in range(0x09E6, 0x09F0)]  # 0..9
_BANGLA_LETTERS = [
    chr(cp)
    for cp in range(0x0995, 0x09B9 + 1)  # ka..ha consonant run
    if cp not in (0x09A9, 0x09B1, 0x09B3, 0x09B4, 0x09B5)  # unassigned/rare
]
PLATE_ALPHABET = _BANGLA_DIGITS + _BANGLA_LETTERS
_CHAR_TO_CODE = {c: i for i, c in enumerate(PLATE_ALPHABET)}

MAX_PLATE_CHARS = GRID_COLS

assert len(PLATE_ALPHABET) < PAD_CODE


def digit_chars() -> list[str]:
    return list(_BANGLA_DIGITS)


def letter_chars() -> list[str]:
    return list(_BANGLA_LETTERS)


def encode_codes(text: str) -> list[int]:
    if len(text) > MAX_PLATE_CHARS:
        raise ValueError(f"plate text longer than {MAX_PLATE_CHARS} characters")
    try:
        codes = [_CHAR_TO_CODE[c] for c in text]
    except KeyError as e:
        raise ValueError(f"character {e.args[0]!r} not in the plate alphabet") from e
    return codes + [PAD_CODE] * (GRID_COLS - len(codes))


def render_plate(canvas: np.ndarray, box: tuple[int, int, int, int], text: str) -> None:
    """Draw the plate for ``text`` into a grayscale canvas, in place.

    ``box`` is (x, y, w, h) in canvas pixels and becomes the annotation box.
    """
    x, y, w, h = box
    if w < GRID_COLS * 2 or h < GRID_ROWS * 2:
        raise ValueError(f"plate box {w}x{h} too small to encode {GRID_COLS}x{GRID_ROWS} cells")
    codes = encode_codes(text)
    t = max(1, round(BORDER_FRAC * h))
    canvas[y : y + h, x : x + w] = 0  # border ring
    ix, iy = x + t, y + t
    iw, ih = w - 2 * t, h - 2 * t
    canvas[iy : iy + ih, ix : ix + iw] = 255
    for col, code in enumerate(codes):
        cx0 = ix + round(col * iw / GRID_COLS)
        cx1 = ix + round((col + 1) * iw / GRID_COLS)
        for row in range(GRID_ROWS):
            bit = (code >> (GRID_ROWS - 1 - row)) & 1
            if bit:
                cy0 = iy + round(row * ih / GRID_ROWS)
                cy1 = iy + round((row + 1) * ih / GRID_ROWS)
                canvas[cy0:cy1, cx0:cx1] = 0


def decode_plate(crop: np.ndarray) -> str:
    """Read the plate string back from a crop of the exact plate box.

    Returns "" when the crop does not look like an encoded plate.
    """
    if crop.ndim == 3:
        crop = crop.mean(axis=2)
    ch, cw = crop.shape
    if ch < GRID_ROWS or cw < GRID_COLS:
        return ""
    t = BORDER_FRAC * ch
    ix, iy = t, t
    iw, ih = cw - 2 * t, ch - 2 * t
    if iw <= 0 or ih <= 0:
        return ""
    chars: list[str] = []
    for col in range(GRID_COLS):
        code = 0
        for row in range(GRID_ROWS):
            px = ix + (col + 0.5) * iw / GRID_COLS
            py = iy + (row + 0.5) * ih / GRID_ROWS
            x0 = max(0, int(round(px)) - 1)
            y0 = max(0, int(round(py)) - 1)
            sample = crop[y0 : y0 + 3, x0 : x0 + 3].mean()
            if sample < 128:
                code |= 1 << (GRID_ROWS - 1 - row)
        if code == PAD_CODE:
            break
        if code >= len(PLATE_ALPHABET):
            return ""
        chars.append(PLATE_ALPHABET[code])
    return "".join(chars)
