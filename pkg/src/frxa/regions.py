"""Landmark schema, the seven face regions, cropping and pad-to-square.

Landmark indices are 1-based and follow the standard dlib 68-point layout:
1-17 jaw, 18-27 eyebrows, 28-36 nose, 37-48 eyes, 49-68 mouth.  A region is
cut as the axis-aligned bounding box of its landmark subset, optionally
expanded by a margin fraction of the larger box side.
"""

from dataclasses import dataclass, field

import numpy as np

# index ranges are 1-based and inclusive on both ends
REGION_INDEX_RANGES = {
    "mouth": ((49, 68),),
    "nose": ((29, 36),),
    "eyes": ((18, 22), (37, 42)),
    "nose_mouth": ((29, 36), (49, 68)),
    "nose_eyes": ((18, 22), (29, 36), (37, 42)),
    "mouth_eyes": ((18, 22), (37, 42), (49, 68)),
    "whole_face": ((1, 68),),
}

# report row order; compounds after their parts, whole face last
REGION_ORDER = (
    "mouth", "nose", "eyes", "nose_mouth", "nose_eyes", "mouth_eyes", "whole_face",
)

# Both-sides eyes variant (eyebrows 18-27 plus eyes 37-48).  Not one of the
# seven standard regions; only reachable with extended=True.
EXTENDED_REGION_INDEX_RANGES = {
    "eyes_symmetric": ((18, 27), (37, 48)),
}

DEFAULT_MARGIN = 0.05


class RegionError(ValueError):
    """Unknown region name or a degenerate crop."""


def region_indices(name, extended=False):
    """Sorted 1-based landmark indices belonging to a region."""
    ranges = REGION_INDEX_RANGES.get(name)
    if ranges is None and extended:
        ranges = EXTENDED_REGION_INDEX_RANGES.get(name)
    if ranges is None:
        known = sorted(REGION_INDEX_RANGES)
        raise RegionError(f"unknown region {name!r}; expected one of {known}")
    out = []
    for lo, hi in ranges:
        out.extend(range(lo, hi + 1))
    return sorted(out)


@dataclass(frozen=True)
class RegionSpec:
    """A named face area plus the landmark indices that bound it."""

    name: str
    indices: tuple = ()

    def __post_init__(self):
        idx = tuple(self.indices) if self.indices else tuple(region_indices(self.name, extended=True))
        object.__setattr__(self, "indices", idx)

    @classmethod
    def named(cls, name, extended=False):
        return cls(name, tuple(region_indices(name, extended=extended)))


@dataclass
class LandmarkSet68:
    """Exactly 68 (x, y) pixel coordinates, 1-based indexing semantics."""

    points: np.ndarray
    image_size: tuple = None  # (width, height) when known

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (68, 2):
            raise RegionError(f"need exactly 68 (x, y) points, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise RegionError("landmark coordinates must be finite")
        self.points = pts

    def select(self, indices_1based):
        return self.points[np.asarray(indices_1based) - 1]


@dataclass
class RegionCrop:
    """A cut sub-image plus where it came from."""

    pixels: np.ndarray
    source_box: tuple  # (left, top, right, bottom), right/bottom exclusive
    region: str


def extract_region(image, landmarks, region, margin=DEFAULT_MARGIN):
    """Cut the bounding box of a region's landmarks out of a grayscale image.

    The box is expanded by ``margin * max(box_w, box_h)`` on every side and
    clipped to the image; landmarks outside the image are tolerated (they
    are clipped before the containment guarantee applies).
    """
    image = np.asarray(image)
    if image.ndim != 2 or image.size == 0:
        raise RegionError(f"need a non-empty 2-D grayscale image, got shape {image.shape}")
    if isinstance(region, str):
        region = RegionSpec.named(region, extended=True)
    h, w = image.shape
    pts = landmarks.select(region.indices)
    xs = np.clip(pts[:, 0], 0.0, float(w))
    ys = np.clip(pts[:, 1], 0.0, float(h))
    left, right = xs.min(), xs.max()
    top, bottom = ys.min(), ys.max()
    pad = margin * max(right - left, bottom - top)
    left_i = int(np.floor(max(left - pad, 0.0)))
    top_i = int(np.floor(max(top - pad, 0.0)))
    right_i = int(np.ceil(min(right + pad, float(w))))
    bottom_i = int(np.ceil(min(bottom + pad, float(h))))
    if right_i <= left_i or bottom_i <= top_i:
        raise RegionError(
            f"degenerate {region.name} box ({left_i}, {top_i}, {right_i}, {bottom_i}) "
            f"after clipping to {w}x{h}"
        )
    return RegionCrop(
        pixels=image[top_i:bottom_i, left_i:right_i].copy(),
        source_box=(left_i, top_i, right_i, bottom_i),
        region=region.name,
    )


def pad_to_square(image, fill=0):
    """Center an image on a max(w, h) square canvas, extra pixel bottom/right."""
    image = np.asarray(image)
    if image.ndim != 2 or image.size == 0:
        raise RegionError(f"need a non-empty 2-D grayscale image, got shape {image.shape}")
    h, w = image.shape
    side = max(h, w)
    if h == w:
        return image.copy()
    out = np.full((side, side), fill, dtype=image.dtype)
    top = (side - h) // 2
    left = (side - w) // 2
    out[top : top + h, left : left + w] = image
    return out


# ---------------------------------------------------------------------------
# .lmk sidecar files: line 1 is "68", lines 2-69 are "x y" decimals, line
# i+1 holding landmark i of the 1-based numbering.

def save_landmarks(path, landmarks):
    lines = ["68"]
    for x, y in landmarks.points:
        lines.append(f"{x:.6f} {y:.6f}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_landmarks(path, image_size=None):
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise RegionError(f"{path}: empty landmark file")
    if lines[0] != "68":
        raise RegionError(f"{path}: first line must be '68', got {lines[0]!r}")
    if len(lines) != 69:
        raise RegionError(f"{path}: expected 68 coordinate lines, got {len(lines) - 1}")
    pts = np.empty((68, 2), dtype=np.float64)
    for i, line in enumerate(lines[1:]):
        parts = line.split()
        if len(parts) != 2:
            raise RegionError(f"{path}: line {i + 2} is not 'x y': {line!r}")
        try:
            pts[i] = (float(parts[0]), float(parts[1]))
        except ValueError as exc:
            raise RegionError(f"{path}: line {i + 2} has non-numeric values: {line!r}") from exc
    return LandmarkSet68(points=pts, image_size=image_size)
