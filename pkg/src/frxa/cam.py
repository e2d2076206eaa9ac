"""Class activation maps and heatmap rendering.

A class's raw map is the per-pixel weighted sum of the final feature maps
with that class's output-layer weights; under mean pooling and a bias-free
head its spatial sum equals H'*W' times the class logit.  Rendering is
min-max normalization, align-corners bilinear upsampling, a piecewise-
linear jet colormap and a fixed 0.4/0.5 blend onto the source image.
"""

from dataclasses import dataclass

import numpy as np

from .imageio import bilinear_resize, write_png, write_ppm

BLEND_HEAT = 0.4
BLEND_IMAGE = 0.5


class CamError(ValueError):
    """Inputs violate an activation-map contract."""


@dataclass
class CamMap:
    raw: np.ndarray  # (H', W') float64
    class_index: int
    normalized: np.ndarray  # (H', W') in [0, 1]; zeros when raw is constant
    source: object = None


def compute_cam(feature_maps, fc_weights, class_index):
    """Weighted sum over feature maps: raw(x, y) = sum_k w[k, c] * maps[k, x, y]."""
    maps = np.asarray(feature_maps, dtype=np.float64)
    weights = np.asarray(fc_weights, dtype=np.float64)
    if maps.ndim != 3:
        raise CamError(f"feature maps must be (K, H, W), got shape {maps.shape}")
    if weights.ndim != 2 or weights.shape[0] != maps.shape[0]:
        raise CamError(
            f"weights must be (K, C) with K={maps.shape[0]}, got shape {weights.shape}"
        )
    c = int(class_index)
    if not 0 <= c < weights.shape[1]:
        raise CamError(f"class index {c} out of range [0, {weights.shape[1]})")
    raw = np.tensordot(weights[:, c], maps, axes=1)
    return CamMap(raw=raw, class_index=c, normalized=normalize_map(raw))


def normalize_map(raw):
    """Min-max scale to [0, 1]; a constant map normalizes to all zeros."""
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = raw.min(), raw.max()
    if hi > lo:
        return (raw - lo) / (hi - lo)
    return np.zeros_like(raw)


def upsample_bilinear(map2d, target):
    """Align-corners bilinear upsampling; target must not shrink the map."""
    map2d = np.asarray(map2d, dtype=np.float64)
    th, tw = int(target[0]), int(target[1])
    if th < map2d.shape[0] or tw < map2d.shape[1]:
        raise CamError(f"target {th}x{tw} smaller than source {map2d.shape}")
    return bilinear_resize(map2d, th, tw)


def _round_half_up(x):
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def colormap_jet(normalized):
    """Blue (low) through green (mid) to red (high), 8-bit RGB.

    channel(v) = round(255 * clamp(1.5 - |4v - a|, 0, 1)) with a = 3, 2, 1
    for red, green, blue.
    """
    v = np.asarray(normalized, dtype=np.float64)
    if v.size and (v.min() < 0.0 or v.max() > 1.0):
        raise CamError(f"normalized values must lie in [0, 1], got [{v.min()}, {v.max()}]")
    out = np.empty(v.shape + (3,), dtype=np.uint8)
    for ch, a in enumerate((3.0, 2.0, 1.0)):
        ramp = np.clip(1.5 - np.abs(4.0 * v - a), 0.0, 1.0)
        out[..., ch] = _round_half_up(255.0 * ramp).astype(np.uint8)
    return out


def blend(heatmap, image):
    """result = round(clamp(0.4 * heatmap + 0.5 * image, 0, 255)) per channel."""
    heat = np.asarray(heatmap, dtype=np.float64)
    img = np.asarray(image, dtype=np.float64)
    if heat.ndim != 3 or heat.shape[2] != 3:
        raise CamError(f"heatmap must be (H, W, 3), got shape {heat.shape}")
    if img.ndim == 2:
        img = img[:, :, None]
    if img.shape[:2] != heat.shape[:2]:
        raise CamError(f"heatmap {heat.shape[:2]} and image {img.shape[:2]} sizes differ")
    mixed = np.clip(BLEND_HEAT * heat + BLEND_IMAGE * img, 0.0, 255.0)
    return _round_half_up(mixed).astype(np.uint8)


def render_heatmap(cam_map, image):
    """Upsample a map to the image size, colormap it and blend onto the image."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise CamError(f"source image must be 2-D grayscale, got shape {img.shape}")
    up = upsample_bilinear(cam_map.normalized, img.shape)
    # upsampling stays inside [0, 1]; clip away rounding dust
    return blend(colormap_jet(np.clip(up, 0.0, 1.0)), img)


def heatmap_paths(out_dir, image_stem, class_name):
    """File name pattern <image-stem>.<class-name>.cam.{ppm,png}."""
    import os

    base = os.path.join(str(out_dir), f"{image_stem}.{class_name}.cam")
    return base + ".ppm", base + ".png"


def save_heatmap(out_dir, image_stem, class_name, rgb, png=True):
    """Write the PPM rendering (always) and a PNG next to it; returns the paths."""
    ppm_path, png_path = heatmap_paths(out_dir, image_stem, class_name)
    write_ppm(ppm_path, rgb)
    written = [ppm_path]
    if png:
        write_png(png_path, rgb)
        written.append(png_path)
    return written
