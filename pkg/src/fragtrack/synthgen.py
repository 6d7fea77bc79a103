"""Ground-truth data sources.

Two generators live here:

* a morphology-preserving compositor that pastes tightly-cropped "clean
  object" crops onto a bright-noise canvas (random arrangements, or the
  source frame's original arrangement), and
* a breakup scene simulator that advects ellipse/capsule objects, fragments
  ligaments into children with conserved pixel area, and records the exact
  MOVE/BREAKUP lineage it generated.

Simulated objects are rendered as exactly-N-pixel blobs (the N pixels with
the smallest elliptical distance from the object's center), so truth areas
are integers under full control and breakup area conservation can be checked
exactly when the area-noise parameter is zero.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .core import (
    BBox,
    DetectedObject,
    Frame,
    InvariantError,
    Mask,
    ObjectClass,
    RelationLabel,
    ValidationError,
)

logger = logging.getLogger(__name__)

EIGHT_CONN = np.ones((3, 3), dtype=bool)

# Children below this pixel count would fall under the detector floor.
MIN_CHILD_AREA = 4


def _as_rng(seed_or_rng) -> tuple[np.random.Generator, int | None]:
    """Accept an int seed (recorded) or a ready Generator (seed unknown)."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng, None
    seed = int(seed_or_rng)
    return np.random.default_rng(seed), seed


# ---------------------------------------------------------------------------
# Clean objects and banks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CleanObject:
    """Tightly cropped single-component grayscale crop with its mask."""

    crop: np.ndarray
    mask: Mask
    object_class: ObjectClass
    source_id: str = ""

    def __post_init__(self):
        crop = np.asarray(self.crop, dtype=np.uint8).copy()
        crop.setflags(write=False)
        object.__setattr__(self, "crop", crop)
        if crop.shape != (self.mask.height, self.mask.width):
            raise ValidationError("crop and mask dimensions differ")
        if self.mask.is_empty():
            raise ValidationError("empty object")
        bits = self.mask.bits
        if not (bits[0].any() and bits[-1].any() and bits[:, 0].any() and bits[:, -1].any()):
            raise ValidationError("clean object crop is not tight around its mask")
        _, n_components = ndimage.label(bits, structure=EIGHT_CONN)
        if n_components != 1:
            raise ValidationError(f"clean object mask has {n_components} components")


@dataclass(frozen=True)
class ObjectBank:
    objects: tuple[CleanObject, ...]

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))

    @property
    def ligaments(self) -> tuple[CleanObject, ...]:
        return tuple(o for o in self.objects if o.object_class is ObjectClass.LIGAMENT)

    @property
    def droplets(self) -> tuple[CleanObject, ...]:
        return tuple(o for o in self.objects if o.object_class is ObjectClass.DROPLET)

    def require_both_classes(self):
        if not self.ligaments or not self.droplets:
            raise ValidationError("object bank needs at least one ligament and one droplet")


def extract_clean_object(
    patch: np.ndarray,
    seed_mask,
    object_class: ObjectClass = ObjectClass.DROPLET,
    source_id: str = "",
) -> CleanObject:
    """Keep the largest connected component of the seed mask, tightly cropped.

    Small satellite fragments inside the crop are discarded. An exact size
    tie is broken deterministically in favour of the component containing
    the smallest (row, col) pixel.
    """
    bits = seed_mask.bits if isinstance(seed_mask, Mask) else np.asarray(seed_mask, dtype=bool)
    patch = np.asarray(patch, dtype=np.uint8)
    if patch.shape != bits.shape:
        raise ValidationError("patch and seed mask dimensions differ")
    if not bits.any():
        raise ValidationError("empty object")

    labels, n = ndimage.label(bits, structure=EIGHT_CONN)
    sizes = ndimage.sum_labels(bits, labels, index=np.arange(1, n + 1))
    best_label = None
    best_key = None
    for lbl in range(1, n + 1):
        rows, cols = np.nonzero(labels == lbl)
        first_pixel = min(zip(rows.tolist(), cols.tolist()))
        key = (-int(sizes[lbl - 1]), first_pixel)
        if best_key is None or key < best_key:
            best_key = key
            best_label = lbl
    keep = labels == best_label
    rows, cols = np.nonzero(keep)
    r0, r1 = rows.min(), rows.max()
    c0, c1 = cols.min(), cols.max()
    return CleanObject(
        crop=patch[r0 : r1 + 1, c0 : c1 + 1],
        mask=Mask(keep[r0 : r1 + 1, c0 : c1 + 1]),
        object_class=object_class,
        source_id=source_id,
    )


def extract_bank(frames, images) -> ObjectBank:
    """Build a bank from per-frame truth/detected objects and their images."""
    clean = []
    for frame, image in zip(frames, images):
        image = np.asarray(image)
        for obj in frame.objects:
            x0, y0 = int(obj.bbox.x1), int(obj.bbox.y1)
            patch = image[y0 : y0 + obj.mask.height, x0 : x0 + obj.mask.width]
            clean.append(
                extract_clean_object(
                    patch,
                    obj.mask,
                    obj.object_class,
                    source_id=f"{frame.index}:{obj.id}",
                )
            )
    return ObjectBank(tuple(clean))


# ---------------------------------------------------------------------------
# Exact-area blob rendering
# ---------------------------------------------------------------------------


def _blob_pixels(
    cx: float,
    cy: float,
    area: int,
    aspect: float,
    angle: float,
    width: int,
    height: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Rows/cols of the `area` pixels closest to the center in elliptical metric.

    Ties are resolved in row-major order, so output is deterministic.
    """
    if area < 1:
        raise ValidationError("blob area must be >= 1")
    semi_minor = math.sqrt(area / (math.pi * aspect))
    semi_major = aspect * semi_minor
    reach = int(math.ceil(semi_major)) + 2
    x0 = max(0, int(round(cx)) - reach)
    x1 = min(width, int(round(cx)) + reach + 1)
    y0 = max(0, int(round(cy)) - reach)
    y1 = min(height, int(round(cy)) + reach + 1)
    if (x1 - x0) * (y1 - y0) < area:
        raise ValidationError("object does not fit inside the canvas")
    ys, xs = np.mgrid[y0:y1, x0:x1]
    dx = xs - cx
    dy = ys - cy
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    u = (dx * cos_a + dy * sin_a) / semi_major
    v = (-dx * sin_a + dy * cos_a) / semi_minor
    dist = (u * u + v * v).ravel()
    order = np.argsort(dist, kind="stable")[:area]
    return ys.ravel()[order], xs.ravel()[order]


def sample_bank(
    seed_or_rng,
    n_ligaments: int = 8,
    n_droplets: int = 24,
    ligament_area_range: tuple[int, int] = (120, 360),
    ligament_aspect_range: tuple[float, float] = (3.0, 5.5),
    droplet_area_range: tuple[int, int] = (30, 150),
    droplet_aspect_range: tuple[float, float] = (1.0, 1.6),
    intensity_range: tuple[int, int] = (20, 120),
) -> ObjectBank:
    """Procedurally generate a bank of dark shapes for compositing tests."""
    rng, _ = _as_rng(seed_or_rng)
    specs = [(ObjectClass.LIGAMENT, ligament_area_range, ligament_aspect_range)] * n_ligaments
    specs += [(ObjectClass.DROPLET, droplet_area_range, droplet_aspect_range)] * n_droplets
    clean = []
    for i, (cls, area_range, aspect_range) in enumerate(specs):
        area = int(rng.integers(area_range[0], area_range[1] + 1))
        aspect = float(rng.uniform(*aspect_range))
        angle = float(rng.uniform(0, math.pi))
        side = 2 * (int(math.ceil(math.sqrt(area * aspect / math.pi))) + 3)
        canvas = np.full((side, side), 255, dtype=np.uint8)
        rows, cols = _blob_pixels(side / 2, side / 2, area, aspect, angle, side, side)
        base = int(rng.integers(intensity_range[0], intensity_range[1] + 1))
        jitter = rng.integers(-6, 7, size=rows.shape[0])
        canvas[rows, cols] = np.clip(base + jitter, 10, 126).astype(np.uint8)
        mask = np.zeros((side, side), dtype=bool)
        mask[rows, cols] = True
        clean.append(
            extract_clean_object(canvas, mask, cls, source_id=f"bank:{i}")
        )
    return ObjectBank(tuple(clean))


# ---------------------------------------------------------------------------
# Compositing
# ---------------------------------------------------------------------------


def _noise_canvas(rng, width, height, background_range) -> np.ndarray:
    lo, hi = background_range
    return rng.integers(lo, hi + 1, size=(height, width), dtype=np.int64).astype(np.uint8)


def _paste(canvas: np.ndarray, clean: CleanObject, x0: int, y0: int):
    """Min-blend the clean object's mask pixels into the canvas."""
    h, w = clean.mask.height, clean.mask.width
    region = canvas[y0 : y0 + h, x0 : x0 + w]
    bits = clean.mask.bits
    region[bits] = np.minimum(region[bits], clean.crop[bits])


def _boxes_clash(x0, y0, w, h, placed, gap) -> bool:
    for px0, py0, pw, ph in placed:
        if x0 - gap < px0 + pw and px0 < x0 + w + gap and y0 - gap < py0 + ph and py0 < y0 + h + gap:
            return True
    return False


def compose_synthetic(
    bank: ObjectBank,
    seed_or_rng,
    width: int = 256,
    height: int = 256,
    count_range: tuple[int, int] = (50, 70),
    background_range: tuple[int, int] = (225, 255),
    min_gap: int = 2,
    max_retries: int = 1000,
    frame_index: int = 0,
) -> tuple[np.ndarray, list[DetectedObject]]:
    """Composite a random arrangement of bank objects on a bright-noise canvas.

    Object count is uniform over `count_range`; placements are rejection
    sampled until pairwise bbox-disjoint (with a small safety gap so masks of
    neighbouring objects cannot touch). Raises "canvas saturated" when a
    placement cannot be found within `max_retries` attempts.
    """
    bank.require_both_classes()
    rng, _ = _as_rng(seed_or_rng)
    canvas = _noise_canvas(rng, width, height, background_range)
    n_objects = int(rng.integers(count_range[0], count_range[1] + 1))
    chosen = [bank.objects[int(i)] for i in rng.integers(0, len(bank.objects), n_objects)]
    # place big objects first; improves packing success, positions stay uniform
    chosen.sort(key=lambda c: -c.mask.width * c.mask.height)

    placed: list[tuple[int, int, int, int]] = []
    annotations: list[DetectedObject] = []
    for obj_id, clean in enumerate(chosen):
        w, h = clean.mask.width, clean.mask.height
        if w > width or h > height:
            raise ValidationError("bank object larger than the canvas")
        for _ in range(max_retries):
            x0 = int(rng.integers(0, width - w + 1))
            y0 = int(rng.integers(0, height - h + 1))
            if not _boxes_clash(x0, y0, w, h, placed, min_gap):
                break
        else:
            raise ValidationError("canvas saturated")
        placed.append((x0, y0, w, h))
        _paste(canvas, clean, x0, y0)
        local_cx, local_cy = _mask_centroid(clean.mask)
        annotations.append(
            DetectedObject(
                id=obj_id,
                frame_index=frame_index,
                bbox=BBox(float(x0), float(y0), float(x0 + w), float(y0 + h)),
                mask=clean.mask,
                centroid=(x0 + local_cx, y0 + local_cy),
                area=clean.mask.area,
                object_class=clean.object_class,
            )
        )
    canvas.setflags(write=False)
    return canvas, annotations


def _mask_centroid(mask: Mask) -> tuple[float, float]:
    rows, cols = np.nonzero(mask.bits)
    return float(cols.mean()), float(rows.mean())


def compose_clean_scene(
    source_frame: Frame,
    bank: ObjectBank,
    seed_or_rng,
    background_range: tuple[int, int] = (225, 255),
) -> tuple[np.ndarray, list[DetectedObject]]:
    """Re-render a frame's objects at their original positions on fresh noise.

    Bank entries are matched to the frame's objects by source id
    ("<frame>:<object id>"). Objects extending past the canvas are clipped
    with a warning; fully off-canvas objects are dropped.
    """
    rng, _ = _as_rng(seed_or_rng)
    width, height = source_frame.width, source_frame.height
    canvas = _noise_canvas(rng, width, height, background_range)
    by_source = {c.source_id: c for c in bank.objects}

    annotations: list[DetectedObject] = []
    for obj in source_frame.objects:
        key = f"{source_frame.index}:{obj.id}"
        clean = by_source.get(key)
        if clean is None:
            raise ValidationError(f"bank has no clean object for source {key}")
        x0, y0 = int(round(obj.bbox.x1)), int(round(obj.bbox.y1))
        h, w = clean.mask.height, clean.mask.width
        cx0, cy0 = max(0, x0), max(0, y0)
        cx1, cy1 = min(width, x0 + w), min(height, y0 + h)
        if cx0 >= cx1 or cy0 >= cy1:
            logger.warning("object %s is fully outside the canvas; dropped", key)
            continue
        clipped = (cx0, cy0, cx1, cy1) != (x0, y0, x0 + w, y0 + h)
        if clipped:
            logger.warning("object %s clipped at the canvas border", key)
        bits = clean.mask.bits[cy0 - y0 : cy1 - y0, cx0 - x0 : cx1 - x0]
        crop = clean.crop[cy0 - y0 : cy1 - y0, cx0 - x0 : cx1 - x0]
        if not bits.any():
            logger.warning("object %s mask empty after clipping; dropped", key)
            continue
        region = canvas[cy0:cy1, cx0:cx1]
        region[bits] = np.minimum(region[bits], crop[bits])
        full = np.zeros((height, width), dtype=bool)
        full[cy0:cy1, cx0:cx1] = bits
        annotations.append(
            DetectedObject.from_full_mask(
                source_frame.index, obj.id, full, clean.object_class
            )
        )
    canvas.setflags(write=False)
    return canvas, annotations


# ---------------------------------------------------------------------------
# Breakup scene simulator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    """Knobs for the ground-truth breakup simulator."""

    n_frames: int = 8
    width: int = 256
    height: int = 256
    dt_s: float = 1.0 / 5120.0
    n_ligaments: int = 4
    n_droplets: int = 14
    p_breakup: float = 0.12
    fragment_range: tuple[int, int] = (2, 4)
    speed_range: tuple[float, float] = (2.0, 9.0)
    area_noise: float = 0.0
    move_area_jitter: float = 0.03
    ligament_area_range: tuple[int, int] = (260, 900)
    ligament_aspect_range: tuple[float, float] = (4.0, 9.0)
    droplet_area_range: tuple[int, int] = (30, 170)
    droplet_aspect_range: tuple[float, float] = (1.0, 1.6)
    intensity_range: tuple[int, int] = (20, 120)
    background_range: tuple[int, int] = (225, 255)

    def validate(self):
        problems = []
        if self.n_frames < 2:
            problems.append("n_frames must be >= 2")
        if self.dt_s <= 0:
            problems.append("dt_s must be > 0")
        if not 0.0 <= self.p_breakup <= 1.0:
            problems.append("p_breakup must be in [0, 1]")
        if not (2 <= self.fragment_range[0] <= self.fragment_range[1]):
            problems.append("fragment_range must satisfy 2 <= lo <= hi")
        if not (0 < self.speed_range[0] <= self.speed_range[1]):
            problems.append("speed_range must satisfy 0 < lo <= hi")
        if self.area_noise < 0:
            problems.append("area_noise must be >= 0")
        if self.move_area_jitter < 0:
            problems.append("move_area_jitter must be >= 0")
        if self.width < 64 or self.height < 64:
            problems.append("canvas must be at least 64x64")
        for name in ("ligament_area_range", "droplet_area_range"):
            lo, hi = getattr(self, name)
            if not (MIN_CHILD_AREA <= lo <= hi):
                problems.append(f"{name} must satisfy {MIN_CHILD_AREA} <= lo <= hi")
        if self.n_ligaments + self.n_droplets < 1:
            problems.append("at least one object required")
        max_area = max(self.ligament_area_range[1], self.droplet_area_range[1])
        max_aspect = max(self.ligament_aspect_range[1], self.droplet_aspect_range[1])
        max_semi_major = math.sqrt(max_area * max_aspect / math.pi)
        if 2 * (max_semi_major + 4) >= min(self.width, self.height):
            problems.append("largest object does not fit the canvas with margins")
        if problems:
            raise ValidationError("invalid simulator config: " + "; ".join(problems))


@dataclass(frozen=True)
class TruthRelation:
    """Ground-truth edge from object `parent_id`@`frame` to `child_id`@`frame+1`."""

    frame: int
    parent_id: int
    child_id: int
    label: RelationLabel


@dataclass(frozen=True)
class ScenePacket:
    """Simulator output: rendered frames, truth objects, truth lineage."""

    frames: tuple[np.ndarray, ...]
    truth_frames: tuple[Frame, ...]
    truth_relations: tuple[TruthRelation, ...]
    config: SimConfig
    seed: int | None = None

    def validate(self):
        """Check lineage invariants; violations are simulator bugs."""
        n = len(self.truth_frames)
        areas = [{o.id: o.area for o in f.objects} for f in self.truth_frames]
        children_of: dict[tuple[int, int], list[TruthRelation]] = {}
        seen_children: set[tuple[int, int]] = set()
        for rel in self.truth_relations:
            if not 0 <= rel.frame < n - 1:
                raise InvariantError(f"relation at frame {rel.frame} out of range")
            if rel.parent_id not in areas[rel.frame]:
                raise InvariantError(f"unknown parent {rel.parent_id}@{rel.frame}")
            if rel.child_id not in areas[rel.frame + 1]:
                raise InvariantError(f"unknown child {rel.child_id}@{rel.frame + 1}")
            child_key = (rel.frame + 1, rel.child_id)
            if child_key in seen_children:
                raise InvariantError(f"child {child_key} has two parents")
            seen_children.add(child_key)
            if rel.label is RelationLabel.BREAKUP:
                children_of.setdefault((rel.frame, rel.parent_id), []).append(rel)
        eps = self.config.area_noise
        for (frame, parent_id), rels in children_of.items():
            if len(rels) < 2:
                raise InvariantError(f"breakup parent {parent_id}@{frame} has <2 children")
            parent_area = areas[frame][parent_id]
            total = sum(areas[frame + 1][r.child_id] for r in rels)
            lo = (1.0 - eps) * parent_area - 0.5
            hi = (1.0 + eps) * parent_area + 0.5
            if not lo <= total <= hi:
                raise InvariantError(
                    f"breakup of {parent_id}@{frame}: children total {total} "
                    f"outside [{lo:.1f}, {hi:.1f}] for parent area {parent_area}"
                )


@dataclass
class _SimObject:
    object_class: ObjectClass
    cx: float
    cy: float
    vx: float
    vy: float
    area: int
    aspect: float
    angle: float
    intensity: int

    @property
    def semi_major(self) -> float:
        return self.aspect * math.sqrt(self.area / (math.pi * self.aspect))


def _clamp_center(obj: _SimObject, width: int, height: int):
    m = obj.semi_major + 3.0
    obj.cx = min(max(obj.cx, m), width - 1 - m)
    obj.cy = min(max(obj.cy, m), height - 1 - m)


def _separate(objects: list[_SimObject], width: int, height: int,
              iterations: int = 2, gap: float = 4.0):
    """Push overlapping objects apart; fragments do not pass through each
    other. Deterministic pairwise relaxation, best effort in crowded scenes."""
    for _ in range(iterations):
        for i in range(len(objects)):
            for j in range(i + 1, len(objects)):
                a, b = objects[i], objects[j]
                min_sep = 0.9 * (a.semi_major + b.semi_major) + gap
                dx = b.cx - a.cx
                dy = b.cy - a.cy
                dist = math.hypot(dx, dy)
                if dist >= min_sep:
                    continue
                if dist < 1e-9:
                    dx, dy, dist = 1.0, 0.0, 1.0
                push = 0.5 * (min_sep - dist)
                ux, uy = dx / dist, dy / dist
                a.cx -= ux * push
                a.cy -= uy * push
                b.cx += ux * push
                b.cy += uy * push
        for obj in objects:
            _clamp_center(obj, width, height)


def _reflect(value: float, velocity: float, low: float, high: float) -> tuple[float, float]:
    if value < low:
        return min(2 * low - value, high), -velocity
    if value > high:
        return max(2 * high - value, low), -velocity
    return value, velocity


def _split_exact(total: int, k: int, rng) -> list[int] | None:
    """Split `total` into k integer parts >= MIN_CHILD_AREA summing exactly."""
    while k >= 2 and total < k * MIN_CHILD_AREA:
        k -= 1
    if k < 2:
        return None
    spare = total - k * MIN_CHILD_AREA
    proportions = rng.dirichlet(np.full(k, 3.0))
    raw = proportions * spare
    base = np.floor(raw).astype(int)
    remainder = spare - int(base.sum())
    order = np.argsort(-(raw - base), kind="stable")
    for i in range(remainder):
        base[order[i]] += 1
    return [int(p) + MIN_CHILD_AREA for p in base]


def _spawn_object(rng, config: SimConfig, object_class: ObjectClass) -> _SimObject:
    if object_class is ObjectClass.LIGAMENT:
        area_range = config.ligament_area_range
        aspect_range = config.ligament_aspect_range
    else:
        area_range = config.droplet_area_range
        aspect_range = config.droplet_aspect_range
    speed = rng.uniform(*config.speed_range)
    direction = rng.uniform(0, 2 * math.pi)
    obj = _SimObject(
        object_class=object_class,
        cx=rng.uniform(0.15 * config.width, 0.85 * config.width),
        cy=rng.uniform(0.15 * config.height, 0.85 * config.height),
        vx=speed * math.cos(direction),
        vy=speed * math.sin(direction),
        area=int(rng.integers(area_range[0], area_range[1] + 1)),
        aspect=float(rng.uniform(*aspect_range)),
        angle=float(rng.uniform(0, math.pi)),
        intensity=int(rng.integers(config.intensity_range[0], config.intensity_range[1] + 1)),
    )
    _clamp_center(obj, config.width, config.height)
    return obj


def _advance(obj: _SimObject, rng, config: SimConfig) -> _SimObject:
    moved = replace(obj)
    moved.cx += moved.vx
    moved.cy += moved.vy
    m = moved.semi_major + 3.0
    moved.cx, moved.vx = _reflect(moved.cx, moved.vx, m, config.width - 1 - m)
    moved.cy, moved.vy = _reflect(moved.cy, moved.vy, m, config.height - 1 - m)
    if config.move_area_jitter > 0:
        factor = 1.0 + rng.uniform(-config.move_area_jitter, config.move_area_jitter)
        moved.area = max(MIN_CHILD_AREA, int(round(moved.area * factor)))
    moved.angle = (moved.angle + rng.uniform(-0.12, 0.12)) % math.pi
    return moved


def _fragment(parent: _SimObject, rng, config: SimConfig) -> list[_SimObject] | None:
    k = int(rng.integers(config.fragment_range[0], config.fragment_range[1] + 1))
    total = parent.area
    if config.area_noise > 0:
        total += int(round(parent.area * rng.uniform(-config.area_noise, config.area_noise)))
    child_areas = _split_exact(total, k, rng)
    if child_areas is None:
        return None
    base_x = parent.cx + parent.vx
    base_y = parent.cy + parent.vy
    a = parent.semi_major
    b = a / parent.aspect
    cos_a, sin_a = math.cos(parent.angle), math.sin(parent.angle)
    # children inherit the parent's position along its axis and its momentum
    offsets = np.linspace(-0.45 * a, 0.45 * a, len(child_areas))
    children = []
    for offset, child_area in zip(offsets, child_areas):
        along = offset + rng.uniform(-b / 2, b / 2)
        across = rng.uniform(-b / 3, b / 3)
        child = _SimObject(
            object_class=ObjectClass.DROPLET,
            cx=base_x + along * cos_a - across * sin_a,
            cy=base_y + along * sin_a + across * cos_a,
            vx=parent.vx + rng.uniform(-1.0, 1.0),
            vy=parent.vy + rng.uniform(-1.0, 1.0),
            area=child_area,
            aspect=float(rng.uniform(*config.droplet_aspect_range)),
            angle=float(rng.uniform(0, math.pi)),
            intensity=int(np.clip(parent.intensity + rng.integers(-10, 11), 15, 125)),
        )
        _clamp_center(child, config.width, config.height)
        children.append(child)
    return children


def _render_frame(
    objects: list[_SimObject], frame_index: int, rng, config: SimConfig
) -> tuple[np.ndarray, Frame]:
    canvas = _noise_canvas(rng, config.width, config.height, config.background_range)
    detected = []
    for obj_id, obj in enumerate(objects):
        rows, cols = _blob_pixels(
            obj.cx, obj.cy, obj.area, obj.aspect, obj.angle, config.width, config.height
        )
        jitter = rng.integers(-6, 7, size=rows.shape[0])
        values = np.clip(obj.intensity + jitter, 10, 126).astype(np.uint8)
        canvas[rows, cols] = np.minimum(canvas[rows, cols], values)
        full = np.zeros((config.height, config.width), dtype=bool)
        full[rows, cols] = True
        detected.append(
            DetectedObject.from_full_mask(frame_index, obj_id, full, obj.object_class)
        )
    canvas.setflags(write=False)
    frame = Frame(
        index=frame_index,
        width=config.width,
        height=config.height,
        objects=tuple(detected),
        dt_s=config.dt_s,
    )
    return canvas, frame


def simulate_sequence(config: SimConfig, seed_or_rng) -> ScenePacket:
    """Generate a frame sequence with known MOVE/BREAKUP lineage.

    Ligaments fragment with probability `p_breakup` per step into children
    whose pixel areas sum to the parent's area within `area_noise`; droplets
    only move. Identical (config, seed) pairs produce byte-identical packets.
    """
    config.validate()
    rng, seed = _as_rng(seed_or_rng)

    objects = [_spawn_object(rng, config, ObjectClass.LIGAMENT) for _ in range(config.n_ligaments)]
    objects += [_spawn_object(rng, config, ObjectClass.DROPLET) for _ in range(config.n_droplets)]
    _separate(objects, config.width, config.height, iterations=4)

    images: list[np.ndarray] = []
    truth_frames: list[Frame] = []
    relations: list[TruthRelation] = []

    for t in range(config.n_frames):
        image, frame = _render_frame(objects, t, rng, config)
        images.append(image)
        truth_frames.append(frame)
        if t == config.n_frames - 1:
            break
        next_objects: list[_SimObject] = []
        for parent_id, obj in enumerate(objects):
            children = None
            if obj.object_class is ObjectClass.LIGAMENT and rng.random() < config.p_breakup:
                children = _fragment(obj, rng, config)
            if children is not None:
                for child in children:
                    relations.append(
                        TruthRelation(t, parent_id, len(next_objects), RelationLabel.BREAKUP)
                    )
                    next_objects.append(child)
            else:
                relations.append(
                    TruthRelation(t, parent_id, len(next_objects), RelationLabel.MOVE)
                )
                next_objects.append(_advance(obj, rng, config))
        _separate(next_objects, config.width, config.height)
        objects = next_objects

    packet = ScenePacket(
        frames=tuple(images),
        truth_frames=tuple(truth_frames),
        truth_relations=tuple(relations),
        config=config,
        seed=seed,
    )
    packet.validate()
    return packet
