"""Geometric primitives and domain types shared by every pipeline stage.

Coordinate convention: (x, y) = (column, row), origin at the top-left of the
image. Pixel (i, j) has its center at the integer coordinate (i, j) and
occupies the half-open cell [i, i+1) x [j, j+1); a mask-tight bounding box of
a single pixel at (3, 7) is therefore (3, 7, 4, 8).

All types here are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class ValidationError(ValueError):
    """Raised when user-supplied data violates a documented precondition."""


class InvariantError(RuntimeError):
    """Raised when an internal invariant is violated (a bug, not bad input)."""


class ObjectClass(enum.Enum):
    LIGAMENT = "L"
    DROPLET = "D"

    @classmethod
    def from_code(cls, code: str) -> "ObjectClass":
        for member in cls:
            if member.value == code:
                return member
        raise ValidationError(f"unknown object class code {code!r}")


class RelationLabel(enum.IntEnum):
    """Temporal relation between an object at frame t and one at frame t+1."""

    NONE = -1
    MOVE = 0
    BREAKUP = 1

    @classmethod
    def from_code(cls, code: int) -> "RelationLabel":
        try:
            return cls(int(code))
        except ValueError as exc:
            raise ValidationError(f"unknown relation label code {code!r}") from exc


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box (x1, y1, x2, y2), real-valued, x2 > x1 and y2 > y1."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValidationError(
                f"degenerate bbox ({self.x1}, {self.y1}, {self.x2}, {self.y2}): "
                "requires x2 > x1 and y2 > y1"
            )

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def aspect_ratio(self) -> float:
        """Long-side over short-side ratio, always >= 1."""
        long_side = max(self.width, self.height)
        short_side = min(self.width, self.height)
        return long_side / short_side

    def contains_point(self, x: float, y: float) -> bool:
        return self.x1 <= x <= self.x2 and self.y1 <= y <= self.y2

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


class Mask:
    """Binary raster of an object, row-major, immutable after construction."""

    __slots__ = ("_bits",)

    def __init__(self, bits: np.ndarray):
        arr = np.asarray(bits, dtype=bool)
        if arr.ndim != 2:
            raise ValidationError("mask bits must be a 2-D raster")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "_bits", arr)

    @classmethod
    def from_pixels(cls, width: int, height: int, pixels) -> "Mask":
        """Build a mask of the given dims from an iterable of (x, y) pixels."""
        arr = np.zeros((height, width), dtype=bool)
        for x, y in pixels:
            arr[y, x] = True
        return cls(arr)

    @property
    def bits(self) -> np.ndarray:
        return self._bits

    @property
    def width(self) -> int:
        return self._bits.shape[1]

    @property
    def height(self) -> int:
        return self._bits.shape[0]

    @property
    def area(self) -> int:
        return int(self._bits.sum())

    def is_empty(self) -> bool:
        return not self._bits.any()

    def tight_bbox(self) -> BBox:
        """Pixel-tight box around the set pixels (cell-occupancy convention)."""
        if self.is_empty():
            raise ValidationError("empty object")
        rows, cols = np.nonzero(self._bits)
        return BBox(
            float(cols.min()),
            float(rows.min()),
            float(cols.max()) + 1.0,
            float(rows.max()) + 1.0,
        )

    def boundary_pixel_count(self) -> int:
        """Perimeter estimate: set pixels with a missing 4-neighbour.

        The perimeter estimator is unspecified upstream; boundary-pixel count
        is this library's choice.
        """
        if self.is_empty():
            return 0
        padded = np.pad(self._bits, 1, mode="constant")
        interior = (
            padded[:-2, 1:-1]
            & padded[2:, 1:-1]
            & padded[1:-1, :-2]
            & padded[1:-1, 2:]
        )
        return int((self._bits & ~interior).sum())

    def __eq__(self, other) -> bool:
        return isinstance(other, Mask) and np.array_equal(self._bits, other._bits)

    def __hash__(self):
        return hash((self._bits.shape, self._bits.tobytes()))


def bbox_iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes; 0 when disjoint, 1 iff identical."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def centroid(m: Mask) -> tuple[float, float]:
    """(c_x, c_y) mean of set-pixel centers; raises on an empty mask."""
    if m.is_empty():
        raise ValidationError("empty object")
    rows, cols = np.nonzero(m.bits)
    return (float(cols.mean()), float(rows.mean()))


def equivalent_diameter(area: float) -> float:
    """Diameter of the circle with the given area: 2 * sqrt(area / pi)."""
    if area <= 0:
        raise ValidationError(f"area must be positive, got {area}")
    return 2.0 * math.sqrt(area / math.pi)


@dataclass(frozen=True)
class DetectedObject:
    """One ligament or droplet in one frame.

    The mask is tight: its raster spans exactly the bbox, and `area` equals
    the mask's set-pixel count. The centroid is expressed in frame
    coordinates.
    """

    id: int
    frame_index: int
    bbox: BBox
    mask: Mask
    centroid: tuple[float, float]
    area: int
    object_class: ObjectClass
    confidence: float = 1.0

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValidationError("frame_index must be >= 0")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError("confidence must be in [0, 1]")
        if self.area != self.mask.area:
            raise ValidationError(
                f"area {self.area} != mask set-pixel count {self.mask.area}"
            )
        if self.area < 4:
            raise ValidationError(f"area {self.area} below the 4-pixel detector floor")
        if not self.bbox.contains_point(*self.centroid):
            raise ValidationError(f"centroid {self.centroid} outside bbox {self.bbox}")

    @classmethod
    def from_full_mask(
        cls,
        frame_index: int,
        obj_id: int,
        full_mask: np.ndarray,
        object_class: ObjectClass,
        confidence: float = 1.0,
    ) -> "DetectedObject":
        """Build from a frame-sized boolean raster; crops the mask tight."""
        full = np.asarray(full_mask, dtype=bool)
        if not full.any():
            raise ValidationError("empty object")
        rows, cols = np.nonzero(full)
        r0, r1 = int(rows.min()), int(rows.max())
        c0, c1 = int(cols.min()), int(cols.max())
        tight = Mask(full[r0 : r1 + 1, c0 : c1 + 1])
        local_cx, local_cy = centroid(tight)
        return cls(
            id=obj_id,
            frame_index=frame_index,
            bbox=BBox(float(c0), float(r0), float(c1) + 1.0, float(r1) + 1.0),
            mask=tight,
            centroid=(c0 + local_cx, r0 + local_cy),
            area=tight.area,
            object_class=object_class,
            confidence=confidence,
        )

    @property
    def key(self) -> tuple[int, int]:
        """(frame_index, id) pair, globally unique across a sequence."""
        return (self.frame_index, self.id)


@dataclass(frozen=True)
class Frame:
    """All detected objects of one image, with its acquisition time."""

    index: int
    width: int
    height: int
    objects: tuple[DetectedObject, ...] = ()
    dt_s: float = 1.0 / 5120.0

    def __post_init__(self):
        if self.index < 0:
            raise ValidationError("frame index must be >= 0")
        if self.dt_s <= 0:
            raise ValidationError("dt_s must be positive")
        object.__setattr__(self, "objects", tuple(self.objects))
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate object ids in frame {self.index}")
        for o in self.objects:
            if o.frame_index != self.index:
                raise ValidationError(
                    f"object {o.id} carries frame_index {o.frame_index}, "
                    f"expected {self.index}"
                )

    @property
    def timestamp_s(self) -> float:
        return self.index * self.dt_s
