"""Classical frame-wise detection of ligaments and droplets.

Dark objects on a bright background are recovered by inverting the image,
binarizing at a fixed threshold, opening with a small structuring element,
and labeling 8-connected components. The largest component is treated as the
continuous liquid sheet and excluded when it covers a large fraction of the
image; components below 4 pixels are rejected as noise. Survivors are
classified by elongation (eccentricity of the mask's second-moment ellipse or
bounding-box aspect ratio).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import DetectedObject, Mask, ObjectClass, ValidationError

EIGHT_CONN = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class DetectParams:
    threshold: int = 128  # applied to the inverted image
    opening_size: int = 3
    opening_iterations: int = 1
    min_area: int = 4
    sheet_fraction: float = 0.25
    eccentricity_threshold: float = 0.92
    aspect_threshold: float = 2.5


def binarize(image: np.ndarray, params: DetectParams = DetectParams()) -> np.ndarray:
    """Invert, threshold, and open; returns the boolean foreground."""
    image = _check_image(image)
    inverted = 255 - image.astype(np.int16)
    foreground = inverted >= params.threshold
    if params.opening_iterations > 0 and foreground.any():
        structure = np.ones((params.opening_size, params.opening_size), dtype=bool)
        foreground = ndimage.binary_opening(
            foreground, structure=structure, iterations=params.opening_iterations
        )
    return foreground


def mask_eccentricity(mask: Mask) -> float:
    """Eccentricity of the ellipse matching the mask's second moments."""
    rows, cols = np.nonzero(mask.bits)
    if rows.size < 2:
        return 0.0
    x = cols - cols.mean()
    y = rows - rows.mean()
    cov = np.array([[np.mean(x * x), np.mean(x * y)], [np.mean(x * y), np.mean(y * y)]])
    eigvals = np.linalg.eigvalsh(cov)
    lam_small, lam_big = float(eigvals[0]), float(eigvals[1])
    if lam_big <= 0:
        return 0.0
    return float(np.sqrt(max(0.0, 1.0 - lam_small / lam_big)))


def classify_shape(obj: DetectedObject, params: DetectParams = DetectParams()) -> ObjectClass:
    """Ligament when elongated (high eccentricity or high bbox aspect)."""
    if mask_eccentricity(obj.mask) > params.eccentricity_threshold:
        return ObjectClass.LIGAMENT
    if obj.bbox.aspect_ratio > params.aspect_threshold:
        return ObjectClass.LIGAMENT
    return ObjectClass.DROPLET


def detect_objects(
    image: np.ndarray, params: DetectParams = DetectParams(), frame_index: int = 0
) -> list[DetectedObject]:
    image = _check_image(image)
    foreground = binarize(image, params)
    labels, n = ndimage.label(foreground, structure=EIGHT_CONN)
    if n == 0:
        return []
    sizes = ndimage.sum_labels(foreground, labels, index=np.arange(1, n + 1)).astype(int)

    keep = np.ones(n, dtype=bool)
    largest = int(np.argmax(sizes))
    if sizes[largest] > params.sheet_fraction * image.size:
        keep[largest] = False
    keep &= sizes >= params.min_area

    objects: list[DetectedObject] = []
    obj_id = 0
    slices = ndimage.find_objects(labels)
    for idx in range(n):
        if not keep[idx]:
            continue
        sl = slices[idx]
        local = labels[sl] == (idx + 1)
        r0, c0 = sl[0].start, sl[1].start
        full = np.zeros(image.shape, dtype=bool)
        full[r0 : r0 + local.shape[0], c0 : c0 + local.shape[1]] = local
        candidate = DetectedObject.from_full_mask(
            frame_index, obj_id, full, ObjectClass.DROPLET, confidence=1.0
        )
        cls = classify_shape(candidate, params)
        if cls is not candidate.object_class:
            candidate = DetectedObject(
                id=candidate.id,
                frame_index=candidate.frame_index,
                bbox=candidate.bbox,
                mask=candidate.mask,
                centroid=candidate.centroid,
                area=candidate.area,
                object_class=cls,
                confidence=candidate.confidence,
            )
        objects.append(candidate)
        obj_id += 1
    return objects


def _check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValidationError(f"expected a 2-D grayscale image, got shape {image.shape}")
    if image.dtype != np.uint8:
        raise ValidationError(f"expected 8-bit grayscale, got dtype {image.dtype}")
    return image
