"""Machine-readable marker glyphs for synthetic fixtures.

A glyph is a magenta ring (1/8 of the glyph side thick) around a 4x4 grid
of black/white cells encoding a 16-bit word: 12-bit marker id (1..4095)
followed by a 4-bit XOR checksum of the id nibbles, MSB first, row-major.
Solid color blocks survive area-average downsampling, so mock perception
backends can decode marker ids from the (possibly resized) windows they
receive. Detection is tolerant: ring pixels are matched by color range,
candidate components are shape-checked, and the checksum rejects noise.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import ndimage

from .errors import InvalidArgument
from .geometry import BBox

MAX_MARKER_ID = 0xFFF

_RING = np.array([255, 0, 255], dtype=np.uint8)
_MIN_GLYPH_SIDE = 16


def checksum(marker_id: int) -> int:
    return (marker_id & 0xF) ^ ((marker_id >> 4) & 0xF) ^ ((marker_id >> 8) & 0xF)


def encode_word(marker_id: int) -> int:
    if not 1 <= marker_id <= MAX_MARKER_ID:
        raise InvalidArgument(f"marker id must be in 1..{MAX_MARKER_ID}, got {marker_id}")
    return (marker_id << 4) | checksum(marker_id)


def decode_word(word: int) -> int | None:
    marker_id = word >> 4
    if marker_id < 1 or checksum(marker_id) != (word & 0xF):
        return None
    return marker_id


@lru_cache(maxsize=256)
def render_glyph(marker_id: int, width: int, height: int) -> np.ndarray:
    """Rasterize the glyph for a (width, height) plant region."""
    word = encode_word(marker_id)
    if width < _MIN_GLYPH_SIDE or height < _MIN_GLYPH_SIDE:
        raise InvalidArgument(f"glyph must be at least {_MIN_GLYPH_SIDE}px per side")
    out = np.empty((height, width, 3), dtype=np.uint8)
    out[:, :] = _RING
    # interior spans units 1..7 of an 8-unit grid; cells are 1.5 units
    xs = [round(width * u / 16) for u in (2, 5, 8, 11, 14)]
    ys = [round(height * u / 16) for u in (2, 5, 8, 11, 14)]
    for r in range(4):
        for c in range(4):
            bit = (word >> (15 - (r * 4 + c))) & 1
            out[ys[r] : ys[r + 1], xs[c] : xs[c + 1]] = 255 if bit else 0
    return out


def _cell_value(gray: np.ndarray, cy: float, cx: float) -> float:
    h, w = gray.shape
    y = min(max(int(round(cy)), 1), h - 2)
    x = min(max(int(round(cx)), 1), w - 2)
    return float(gray[y - 1 : y + 2, x - 1 : x + 2].mean())


def scan_markers(pixels: np.ndarray) -> list[tuple[int, BBox]]:
    """Find decodable glyphs; returns (marker_id, bbox) in pixel coords."""
    r = pixels[:, :, 0].astype(np.int16)
    g = pixels[:, :, 1].astype(np.int16)
    b = pixels[:, :, 2].astype(np.int16)
    mask = (r >= 180) & (g <= 75) & (b >= 180)
    if not mask.any():
        return []
    labels, count = ndimage.label(mask)
    found: list[tuple[int, BBox]] = []
    gray = 0.299 * r + 0.587 * g + 0.114 * b
    for sl in ndimage.find_objects(labels):
        if sl is None:
            continue
        y0, y1 = sl[0].start, sl[0].stop
        x0, x1 = sl[1].start, sl[1].stop
        bw, bh = x1 - x0, y1 - y0
        if bw < _MIN_GLYPH_SIDE or bh < _MIN_GLYPH_SIDE:
            continue
        if not (0.5 <= bw / bh <= 2.0):
            continue
        # a ring is magenta at edge midpoints and not in the center
        mid_y, mid_x = (y0 + y1) // 2, (x0 + x1) // 2
        edge_hits = sum(
            bool(mask[py, px])
            for py, px in (
                (y0 + max(1, bh // 16), mid_x),
                (y1 - 1 - max(1, bh // 16), mid_x),
                (mid_y, x0 + max(1, bw // 16)),
                (mid_y, x1 - 1 - max(1, bw // 16)),
            )
        )
        if edge_hits < 4 or mask[mid_y, mid_x]:
            continue
        word = 0
        for rr in range(4):
            for cc in range(4):
                cy = y0 + bh * (2 + 3 * rr + 1.5) / 16
                cx = x0 + bw * (2 + 3 * cc + 1.5) / 16
                bit = 1 if _cell_value(gray, cy, cx) > 127 else 0
                word = (word << 1) | bit
        marker_id = decode_word(word)
        if marker_id is not None:
            found.append((marker_id, BBox(int(x0), int(y0), int(x1), int(y1))))
    found.sort(key=lambda t: (t[1].y0, t[1].x0))
    return found
