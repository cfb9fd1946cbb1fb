"""Pixel-space rectangle algebra: grid partitioning, region unions, adjacency.

Coordinates are integer, half-open intervals [x0,x1) x [y0,y1) with the
origin at the top-left. A box serializes everywhere as the 4-array
``[x0, y0, x1, y1]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import InvalidArgument


@dataclass(frozen=True, order=True)
class BBox:
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        for v in (self.x0, self.y0, self.x1, self.y1):
            if not isinstance(v, int):
                raise InvalidArgument(f"bbox coordinates must be integers, got {v!r}")
        if not (0 <= self.x0 < self.x1 and 0 <= self.y0 < self.y1):
            raise InvalidArgument(
                f"invalid bbox [{self.x0},{self.y0},{self.x1},{self.y1}]: "
                "need 0 <= x0 < x1 and 0 <= y0 < y1"
            )

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def contains(self, other: "BBox") -> bool:
        return (
            self.x0 <= other.x0
            and self.y0 <= other.y0
            and other.x1 <= self.x1
            and other.y1 <= self.y1
        )

    def intersects(self, other: "BBox") -> bool:
        return (
            self.x0 < other.x1
            and other.x0 < self.x1
            and self.y0 < other.y1
            and other.y0 < self.y1
        )

    def intersection(self, other: "BBox") -> "BBox | None":
        x0 = max(self.x0, other.x0)
        y0 = max(self.y0, other.y0)
        x1 = min(self.x1, other.x1)
        y1 = min(self.y1, other.y1)
        if x0 < x1 and y0 < y1:
            return BBox(x0, y0, x1, y1)
        return None

    def iou(self, other: "BBox") -> float:
        inter = self.intersection(other)
        if inter is None:
            return 0.0
        ia = inter.area
        return ia / (self.area + other.area - ia)

    def to_list(self) -> list[int]:
        return [self.x0, self.y0, self.x1, self.y1]

    @classmethod
    def from_list(cls, raw) -> "BBox":
        if not isinstance(raw, (list, tuple)) or len(raw) != 4:
            raise InvalidArgument(f"bbox must be a 4-array [x0,y0,x1,y1], got {raw!r}")
        vals = []
        for v in raw:
            if isinstance(v, bool) or not isinstance(v, int):
                raise InvalidArgument(f"bbox coordinates must be integers, got {v!r}")
            vals.append(v)
        return cls(*vals)


@dataclass(frozen=True)
class RegionSet:
    """Deduplicated, canonically ordered set of boxes plus their hull."""

    regions: tuple[BBox, ...]
    enclosing: BBox | None = field(default=None)

    def __len__(self) -> int:
        return len(self.regions)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def grid_shape(width: int, height: int, n_target: int) -> tuple[int, int]:
    """(rows, cols) for a grid of roughly n_target chunks.

    cols ~ round(sqrt(n_target * width / height)) clamped to [1, n_target],
    rows = ceil(n_target / cols). Saturation clamps keep every cell >= 1px:
    when the image has fewer pixels than n_target the grid tops out at
    width x height cells.
    """
    if width < 1 or height < 1:
        raise InvalidArgument(f"image dimensions must be >= 1, got {width}x{height}")
    if n_target < 1:
        raise InvalidArgument(f"n_target must be >= 1, got {n_target}")
    cols = _round_half_up(math.sqrt(n_target * width / height))
    cols = max(1, min(cols, n_target, width))
    rows = math.ceil(n_target / cols)
    if rows > height:
        rows = height
        cols = min(width, math.ceil(n_target / rows))
    return rows, cols


def grid_boxes(width: int, height: int, rows: int, cols: int) -> list[BBox]:
    """Row-major cells of the rows x cols grid; last row/column absorbs the
    remainder left by floor-sized interior cells."""
    if not (1 <= cols <= width and 1 <= rows <= height):
        raise InvalidArgument(f"grid {rows}x{cols} does not fit {width}x{height}")
    cell_w = width // cols
    cell_h = height // rows
    boxes: list[BBox] = []
    for r in range(rows):
        y0 = r * cell_h
        y1 = height if r == rows - 1 else (r + 1) * cell_h
        for c in range(cols):
            x0 = c * cell_w
            x1 = width if c == cols - 1 else (c + 1) * cell_w
            boxes.append(BBox(x0, y0, x1, y1))
    return boxes


def grid_partition(width: int, height: int, n_target: int) -> list[BBox]:
    """Partition [0,width) x [0,height) into a grid of roughly n_target
    chunks; the returned count rows*cols may exceed n_target and callers
    report the actual count."""
    rows, cols = grid_shape(width, height, n_target)
    return grid_boxes(width, height, rows, cols)


def union_regions(regions: list[BBox]) -> RegionSet:
    """Deduplicate and canonically order boxes; enclosing is the min/max hull."""
    unique = sorted(set(regions), key=lambda b: (b.y0, b.x0, b.x1, b.y1))
    if not unique:
        return RegionSet(regions=())
    hull = BBox(
        min(b.x0 for b in unique),
        min(b.y0 for b in unique),
        max(b.x1 for b in unique),
        max(b.y1 for b in unique),
    )
    return RegionSet(regions=tuple(unique), enclosing=hull)


def adjacent(a: BBox, b: BBox) -> bool:
    """True iff the boxes overlap or share an edge segment of positive length.

    4-adjacency: corner-only contact does not count.
    """
    if a.intersects(b):
        return True
    y_overlap = min(a.y1, b.y1) - max(a.y0, b.y0)
    x_overlap = min(a.x1, b.x1) - max(a.x0, b.x0)
    if (a.x1 == b.x0 or b.x1 == a.x0) and y_overlap > 0:
        return True
    if (a.y1 == b.y0 or b.y1 == a.y0) and x_overlap > 0:
        return True
    return False
