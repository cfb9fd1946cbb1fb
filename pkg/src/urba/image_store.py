"""Memory-bounded access to ultra-high-resolution images.

Supported formats: png, jpeg, tiled-tiff, raw-synthetic. Opening reads
headers only. Windowed reads are O(window) for raw-synthetic (pixels are
computed from the stored formula) and tiled-tiff (only intersecting
tiles/strips are decoded); png and jpeg have no partial-decode codec path,
so windows on those formats decode the full image and crop (fine at test
scale; convert gigapixel sources to tiled-tiff or raw-synthetic).

raw-synthetic (.ursy) layout: 32-byte header
``magic "URSY" | version u32 | width u32 | height u32 | formula u32 |
seed u64 | 4 pad bytes`` (little-endian). Formula 0 is solid black,
1 is the deterministic gradient
``pixel(x,y) = ((x*7)%256, (y*13)%256, ((x+y)*3)%256)``, 2 is the gradient
plus a plant table appended after the header (u32 count, then
``marker_id u32, x0,y0,x1,y1 u32`` records) whose marker glyphs are
rasterized on demand.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BoundsError, CorruptHeader, InvalidArgument, MissingFile, UnsupportedFormat
from .geometry import BBox

_URSY_MAGIC = b"URSY"
_URSY_HEADER = struct.Struct("<4sIIIIQ4x")
_URSY_PLANT = struct.Struct("<IIIII")
_URSY_VERSION = 1

FORMULA_BLACK = 0
FORMULA_GRADIENT = 1
FORMULA_GRADIENT_PLANTS = 2


@dataclass(frozen=True)
class ImageRef:
    """Header-level handle to an image; never holds decoded pixels."""

    path: str
    width: int
    height: int
    format: str  # tiled-tiff | png | jpeg | raw-synthetic

    @property
    def bounds(self) -> BBox:
        return BBox(0, 0, self.width, self.height)


@dataclass(frozen=True)
class PixelWindow:
    """A decoded window: ``origin`` is its region in the parent frame.

    ``pixels`` is a (height, width, 3) uint8 array matching origin's size.
    Resampled outputs use origin (0,0,out_w,out_h): their own frame.
    """

    origin: BBox
    pixels: np.ndarray

    def __post_init__(self):
        h, w = self.pixels.shape[:2]
        if self.pixels.shape != (h, w, 3) or self.pixels.dtype != np.uint8:
            raise InvalidArgument("pixel buffer must be (H, W, 3) uint8")
        if (w, h) != (self.origin.width, self.origin.height):
            raise InvalidArgument(
                f"buffer {w}x{h} does not match origin {self.origin.width}x{self.origin.height}"
            )

    @property
    def width(self) -> int:
        return self.origin.width

    @property
    def height(self) -> int:
        return self.origin.height


@dataclass(frozen=True)
class EnhanceParams:
    brightness: float = 1.0
    contrast: float = 1.0
    sharpness: float = 1.0
    color: float = 1.0

    def __post_init__(self):
        for name in ("brightness", "contrast", "sharpness", "color"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise InvalidArgument(f"{name} must be a finite factor >= 0, got {v!r}")


@dataclass(frozen=True)
class TokenBudget:
    max_tokens: int
    pixels_per_token_side: int = 28

    def __post_init__(self):
        if self.max_tokens < 1 or self.pixels_per_token_side < 1:
            raise InvalidArgument("max_tokens and pixels_per_token_side must be >= 1")


@dataclass(frozen=True)
class _Plant:
    marker_id: int
    region: BBox


@dataclass(frozen=True)
class _SyntheticMeta:
    formula: int
    seed: int
    plants: tuple[_Plant, ...] = field(default=())


_synthetic_meta_cache: dict[str, _SyntheticMeta] = {}


def open_image(path: str | Path) -> ImageRef:
    """Read dimensions and format from headers only."""
    p = Path(path)
    if not p.is_file():
        raise MissingFile(f"no such image file: {p}")
    with p.open("rb") as fh:
        head = fh.read(4)
    if head == _URSY_MAGIC:
        return _open_synthetic(p)
    if head[:2] in (b"II", b"MM"):
        return _open_tiff(p)
    return _open_pillow(p)


def _open_synthetic(p: Path) -> ImageRef:
    raw = p.read_bytes()
    if len(raw) < _URSY_HEADER.size:
        raise CorruptHeader(f"{p}: truncated raw-synthetic header")
    magic, version, width, height, formula, seed = _URSY_HEADER.unpack_from(raw, 0)
    if magic != _URSY_MAGIC:
        raise CorruptHeader(f"{p}: bad magic")
    if version != _URSY_VERSION:
        raise CorruptHeader(f"{p}: unsupported raw-synthetic version {version}")
    if width < 1 or height < 1:
        raise CorruptHeader(f"{p}: invalid dimensions {width}x{height}")
    if formula not in (FORMULA_BLACK, FORMULA_GRADIENT, FORMULA_GRADIENT_PLANTS):
        raise CorruptHeader(f"{p}: unknown formula id {formula}")
    plants: list[_Plant] = []
    if formula == FORMULA_GRADIENT_PLANTS:
        off = _URSY_HEADER.size
        if len(raw) < off + 4:
            raise CorruptHeader(f"{p}: missing plant table")
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        if len(raw) < off + count * _URSY_PLANT.size:
            raise CorruptHeader(f"{p}: truncated plant table")
        for _ in range(count):
            marker, x0, y0, x1, y1 = _URSY_PLANT.unpack_from(raw, off)
            off += _URSY_PLANT.size
            if not (0 <= x0 < x1 <= width and 0 <= y0 < y1 <= height):
                raise CorruptHeader(f"{p}: plant bbox out of range")
            plants.append(_Plant(marker, BBox(x0, y0, x1, y1)))
    ref = ImageRef(path=str(p), width=width, height=height, format="raw-synthetic")
    _synthetic_meta_cache[str(p)] = _SyntheticMeta(formula, seed, tuple(plants))
    return ref


def _open_tiff(p: Path) -> ImageRef:
    import tifffile

    try:
        with tifffile.TiffFile(p) as tf:
            page = tf.pages[0]
            shape = page.shape
    except Exception as exc:
        raise CorruptHeader(f"{p}: unreadable TIFF header ({exc})") from exc
    if len(shape) == 2:
        height, width = shape
    elif len(shape) == 3 and shape[2] in (1, 3, 4):
        height, width = shape[:2]
    else:
        raise UnsupportedFormat(f"{p}: unsupported TIFF layout {shape}")
    return ImageRef(path=str(p), width=int(width), height=int(height), format="tiled-tiff")


def _open_pillow(p: Path) -> ImageRef:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(p) as im:
            fmt = (im.format or "").lower()
            width, height = im.size
    except UnidentifiedImageError as exc:
        raise CorruptHeader(f"{p}: not a recognized image ({exc})") from exc
    except OSError as exc:
        raise CorruptHeader(f"{p}: corrupt image header ({exc})") from exc
    if fmt == "png":
        return ImageRef(path=str(p), width=width, height=height, format="png")
    if fmt == "jpeg":
        return ImageRef(path=str(p), width=width, height=height, format="jpeg")
    raise UnsupportedFormat(f"{p}: format {fmt!r} not supported")


def _synthetic_meta(ref: ImageRef) -> _SyntheticMeta:
    meta = _synthetic_meta_cache.get(ref.path)
    if meta is None:
        _open_synthetic(Path(ref.path))
        meta = _synthetic_meta_cache[ref.path]
    return meta


def gradient_pixel(x: int, y: int) -> tuple[int, int, int]:
    """The formula-1 gradient at absolute coordinates (x, y)."""
    return ((x * 7) % 256, (y * 13) % 256, ((x + y) * 3) % 256)


def _gradient_block(region: BBox) -> np.ndarray:
    xs = np.arange(region.x0, region.x1, dtype=np.int64)
    ys = np.arange(region.y0, region.y1, dtype=np.int64)
    out = np.empty((region.height, region.width, 3), dtype=np.uint8)
    out[:, :, 0] = ((xs * 7) % 256)[None, :]
    out[:, :, 1] = ((ys * 13) % 256)[:, None]
    out[:, :, 2] = ((xs[None, :] + ys[:, None]) * 3) % 256
    return out


def read_window(ref: ImageRef, region: BBox) -> PixelWindow:
    """Decode exactly the requested region; no clamping of out-of-bounds."""
    if not ref.bounds.contains(region):
        raise BoundsError(
            f"region {region.to_list()} out of bounds for {ref.width}x{ref.height} image"
        )
    if ref.format == "raw-synthetic":
        pixels = _read_synthetic(ref, region)
    elif ref.format == "tiled-tiff":
        pixels = _read_tiff(ref, region)
    else:
        pixels = _read_pillow(ref, region)
    return PixelWindow(origin=region, pixels=pixels)


def _read_synthetic(ref: ImageRef, region: BBox) -> np.ndarray:
    meta = _synthetic_meta(ref)
    if meta.formula == FORMULA_BLACK:
        block = np.zeros((region.height, region.width, 3), dtype=np.uint8)
    else:
        block = _gradient_block(region)
    if meta.formula == FORMULA_GRADIENT_PLANTS:
        from .markers import render_glyph

        for plant in meta.plants:
            inter = plant.region.intersection(region)
            if inter is None:
                continue
            glyph = render_glyph(plant.marker_id, plant.region.width, plant.region.height)
            gy0 = inter.y0 - plant.region.y0
            gx0 = inter.x0 - plant.region.x0
            block[
                inter.y0 - region.y0 : inter.y1 - region.y0,
                inter.x0 - region.x0 : inter.x1 - region.x0,
            ] = glyph[gy0 : gy0 + inter.height, gx0 : gx0 + inter.width]
    return block


def _to_rgb(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    elif arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    elif arr.shape[2] == 4:
        arr = arr[:, :, :3]
    return np.ascontiguousarray(arr)


def _read_tiff(ref: ImageRef, region: BBox) -> np.ndarray:
    import tifffile

    with tifffile.TiffFile(ref.path) as tf:
        page = tf.pages[0]
        if page.dtype != np.uint8:
            raise UnsupportedFormat(f"{ref.path}: only 8-bit TIFFs are supported")
        if page.is_tiled:
            seg_w, seg_h = page.tilewidth, page.tilelength
        else:
            seg_w, seg_h = page.imagewidth, page.rowsperstrip or page.imagelength
        cols = math.ceil(page.imagewidth / seg_w)
        samples = page.samplesperpixel
        out = np.zeros((region.height, region.width, samples), dtype=np.uint8)
        fh = tf.filehandle
        ty0, ty1 = region.y0 // seg_h, (region.y1 - 1) // seg_h
        tx0, tx1 = region.x0 // seg_w, (region.x1 - 1) // seg_w
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                idx = ty * cols + tx
                if page.databytecounts[idx] == 0:
                    continue
                fh.seek(page.dataoffsets[idx])
                data = fh.read(page.databytecounts[idx])
                seg, indices, _ = page.decode(data, idx)
                arr = np.asarray(seg)[0]  # (seg_h, seg_w, S), padded at edges
                if arr.ndim == 2:
                    arr = arr[:, :, None]
                oy, ox = ty * seg_h, tx * seg_w
                seg_box = BBox(
                    ox, oy, min(ox + seg_w, ref.width), min(oy + seg_h, ref.height)
                )
                inter = seg_box.intersection(region)
                if inter is None:
                    continue
                out[
                    inter.y0 - region.y0 : inter.y1 - region.y0,
                    inter.x0 - region.x0 : inter.x1 - region.x0,
                ] = arr[inter.y0 - oy : inter.y1 - oy, inter.x0 - ox : inter.x1 - ox]
    return _to_rgb(out)


def _read_pillow(ref: ImageRef, region: BBox) -> np.ndarray:
    from PIL import Image

    with Image.open(ref.path) as im:
        cropped = im.crop((region.x0, region.y0, region.x1, region.y1)).convert("RGB")
        return np.asarray(cropped, dtype=np.uint8).copy()


def crop_window(window: PixelWindow, region: BBox) -> PixelWindow:
    """Crop a materialized window; region is in the window's own frame."""
    frame = BBox(0, 0, window.width, window.height)
    if not frame.contains(region):
        raise BoundsError(
            f"region {region.to_list()} out of bounds for {window.width}x{window.height} window"
        )
    pixels = np.ascontiguousarray(
        window.pixels[region.y0 : region.y1, region.x0 : region.x1]
    )
    return PixelWindow(origin=region, pixels=pixels)


def _round_u8(arr: np.ndarray) -> np.ndarray:
    # half-up rounding, fixed across platforms
    return np.floor(np.clip(arr, 0.0, 255.0) + 0.5).astype(np.uint8)


def _grayscale(arr: np.ndarray) -> np.ndarray:
    return 0.299 * arr[:, :, 0] + 0.587 * arr[:, :, 1] + 0.114 * arr[:, :, 2]


def _box_blur3(arr: np.ndarray) -> np.ndarray:
    padded = np.pad(arr, ((1, 1), (1, 1), (0, 0)), mode="edge")
    total = np.zeros_like(arr, dtype=np.float64)
    h, w = arr.shape[:2]
    for dy in range(3):
        for dx in range(3):
            total += padded[dy : dy + h, dx : dx + w]
    return total / 9.0


def enhance(window: PixelWindow, params: EnhanceParams) -> PixelWindow:
    """Brightness, contrast, color, sharpness, in that order.

    Each stage computes in float64 and rounds half-up to 8 bits, so output
    bytes are identical across runs and platforms.
    """
    arr = window.pixels.astype(np.float64)
    arr = _round_u8(arr * params.brightness).astype(np.float64)

    mu = float(np.mean(_grayscale(arr)))
    arr = _round_u8(mu + (arr - mu) * params.contrast).astype(np.float64)

    gray = _grayscale(arr)[:, :, None]
    arr = _round_u8(gray + params.color * (arr - gray)).astype(np.float64)

    blur = _box_blur3(arr)
    arr = _round_u8(blur + params.sharpness * (arr - blur))
    return PixelWindow(origin=window.origin, pixels=arr)


def estimate_raw_tokens(ref: ImageRef, budget: TokenBudget) -> int:
    """ceil(width/pps) * ceil(height/pps): visual tokens before abstraction."""
    return _tokens_for(ref.width, ref.height, budget)


def _tokens_for(width: int, height: int, budget: TokenBudget) -> int:
    pps = budget.pixels_per_token_side
    return math.ceil(width / pps) * math.ceil(height / pps)


def _fit_dims(width: int, height: int, budget: TokenBudget) -> tuple[int, int]:
    """Largest-f proportional shrink whose token estimate fits the budget.

    First iteration is f = sqrt(max_tokens / estimate); extra iterations only
    fire when ceil-quantized token counts keep the estimate above budget.
    """
    w, h = width, height
    while _tokens_for(w, h, budget) > budget.max_tokens:
        f = math.sqrt(budget.max_tokens / _tokens_for(w, h, budget))
        nw = max(1, math.floor(w * f))
        nh = max(1, math.floor(h * f))
        if (nw, nh) == (w, h):
            if w >= h and w > 1:
                nw = w - 1
            elif h > 1:
                nh = h - 1
            else:
                break
        w, h = nw, nh
    return w, h


def _expand(v: np.ndarray, ndim: int, axis: int) -> np.ndarray:
    shape = [1] * ndim
    shape[axis] = v.size
    return v.reshape(shape)


def _area_reduce(arr: np.ndarray, edges: np.ndarray, axis: int) -> np.ndarray:
    """Exact area-average between fractional edge positions along axis.

    Downsample only (consecutive edges at least 1 apart). Full pixels are
    summed with reduceat; partially covered boundary pixels are corrected
    by their fractional coverage, so averages are exact in float64.
    """
    n = arr.shape[axis]
    starts = np.clip(np.ceil(edges).astype(np.int64), 0, n)
    starts[-1] = n
    inner = np.add.reduceat(arr, starts[:-1], axis=axis)
    head_w = starts[:-1] - edges[:-1]
    tail_w = starts[1:] - edges[1:]
    head = np.take(arr, np.maximum(starts[:-1] - 1, 0), axis=axis) * _expand(
        head_w, arr.ndim, axis
    )
    tail = np.take(arr, np.maximum(starts[1:] - 1, 0), axis=axis) * _expand(
        tail_w, arr.ndim, axis
    )
    widths = _expand(edges[1:] - edges[:-1], arr.ndim, axis)
    return (inner + head - tail) / widths


def _edges(n_in: int, n_out: int) -> np.ndarray:
    e = np.arange(n_out + 1, dtype=np.float64) * (n_in / n_out)
    e[-1] = n_in
    return e


def area_resample(pixels: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Exact area-average downsample of an in-memory (H, W, 3) block."""
    in_h, in_w = pixels.shape[:2]
    if out_w > in_w or out_h > in_h:
        raise InvalidArgument("area_resample only downsamples")
    arr = pixels.astype(np.float64)
    arr = _area_reduce(arr, _edges(in_w, out_w), axis=1)
    arr = _area_reduce(arr, _edges(in_h, out_h), axis=0)
    return _round_u8(arr)


def downsample_region(ref: ImageRef, region: BBox, budget: TokenBudget) -> PixelWindow:
    """Area-average the region down to the token budget, streaming by strips.

    Unscaled when the region already fits. Peak memory is O(output + one
    input strip). Resampled output origin is its own frame (0,0,out_w,out_h).
    """
    if not ref.bounds.contains(region):
        raise BoundsError(
            f"region {region.to_list()} out of bounds for {ref.width}x{ref.height} image"
        )
    in_w, in_h = region.width, region.height
    if _tokens_for(in_w, in_h, budget) <= budget.max_tokens:
        return read_window(ref, region)
    out_w, out_h = _fit_dims(in_w, in_h, budget)

    sy = in_h / out_h
    out = np.empty((out_h, out_w, 3), dtype=np.uint8)
    ex = np.arange(out_w + 1, dtype=np.float64) * (in_w / out_w)
    ex[-1] = in_w
    # strip of ~4M input pixels per block
    block = max(1, int(4_000_000 / max(1.0, sy * in_w)))
    j0 = 0
    while j0 < out_h:
        j1 = min(out_h, j0 + block)
        iy0 = math.floor(j0 * sy)
        iy1 = min(in_h, math.ceil(j1 * sy))
        strip = read_window(
            ref, BBox(region.x0, region.y0 + iy0, region.x1, region.y0 + iy1)
        ).pixels.astype(np.float64)
        strip = np.swapaxes(strip, 0, 1)
        strip = _area_reduce_axis0(strip, ex[:-1], ex[1:])
        strip = np.swapaxes(strip, 0, 1)
        ey = np.arange(j0, j1 + 1, dtype=np.float64) * sy
        if j1 == out_h:
            ey[-1] = in_h
        out[j0:j1] = _round_u8(_area_reduce_axis0(strip, ey[:-1] - iy0, ey[1:] - iy0))
        j0 = j1
    return PixelWindow(origin=BBox(0, 0, out_w, out_h), pixels=out)


def downsample_to_budget(ref: ImageRef, budget: TokenBudget) -> PixelWindow:
    """Whole-image downsample used by the end-to-end baseline."""
    return downsample_region(ref, ref.bounds, budget)


def downsample_window(window: PixelWindow, budget: TokenBudget) -> PixelWindow:
    """In-memory budget fit for already-materialized windows."""
    if _tokens_for(window.width, window.height, budget) <= budget.max_tokens:
        return window
    out_w, out_h = _fit_dims(window.width, window.height, budget)
    return PixelWindow(
        origin=BBox(0, 0, out_w, out_h), pixels=area_resample(window.pixels, out_w, out_h)
    )


def encode_png(window: PixelWindow) -> bytes:
    from io import BytesIO

    from PIL import Image

    buf = BytesIO()
    Image.fromarray(window.pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_image_bytes(data: bytes) -> np.ndarray:
    from io import BytesIO

    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(BytesIO(data)) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except UnidentifiedImageError as exc:
        raise InvalidArgument(f"undecodable image payload: {exc}") from exc


def write_png(window: PixelWindow, path: str | Path) -> None:
    """Debug dump of a window."""
    Path(path).write_bytes(encode_png(window))


def write_synthetic(
    path: str | Path,
    width: int,
    height: int,
    formula: int = FORMULA_GRADIENT,
    seed: int = 0,
    plants: list[tuple[int, BBox]] | None = None,
) -> ImageRef:
    """Write a raw-synthetic file; plants force formula 2."""
    if width < 1 or height < 1:
        raise InvalidArgument(f"dimensions must be >= 1, got {width}x{height}")
    plants = plants or []
    if plants:
        formula = FORMULA_GRADIENT_PLANTS
    parts = [_URSY_HEADER.pack(_URSY_MAGIC, _URSY_VERSION, width, height, formula, seed)]
    if formula == FORMULA_GRADIENT_PLANTS:
        parts.append(struct.pack("<I", len(plants)))
        for marker_id, box in plants:
            if not BBox(0, 0, width, height).contains(box):
                raise InvalidArgument(f"plant bbox {box.to_list()} outside image")
            parts.append(_URSY_PLANT.pack(marker_id, box.x0, box.y0, box.x1, box.y1))
    p = Path(path)
    p.write_bytes(b"".join(parts))
    _synthetic_meta_cache.pop(str(p), None)
    return open_image(p)
