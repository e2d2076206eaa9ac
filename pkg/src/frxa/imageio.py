"""Image codecs and resampling.

PGM (P5) and PPM (P6) are written byte-for-byte reproducibly and read
without any third-party dependency; PNG (and other formats on ingest) go
through Pillow.  ``bilinear_resize`` is the shared align-corners resampler
used by both augmentation and activation-map upsampling.
"""

import numpy as np


class ImageFormatError(ValueError):
    """Malformed or unsupported image data."""


def _read_header_tokens(data, count):
    """Pull `count` whitespace-separated header tokens, skipping # comments.

    Returns (tokens, offset of the raster byte).
    """
    tokens = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i] != 0x0A:
                i += 1
            continue
        start = i
        while i < n and not data[i : i + 1].isspace() and data[i : i + 1] != b"#":
            i += 1
        if start == i:
            raise ImageFormatError("truncated netpbm header")
        tokens.append(data[start:i])
    if i >= n or not data[i : i + 1].isspace():
        raise ImageFormatError("netpbm header not followed by whitespace")
    return tokens, i + 1


def _read_netpbm(path, magic, channels):
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, offset = _read_header_tokens(data, 4)
    if tokens[0] != magic:
        raise ImageFormatError(f"{path}: expected {magic.decode()} file, got {tokens[0]!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise ImageFormatError(f"{path}: non-numeric netpbm header") from exc
    if w < 1 or h < 1:
        raise ImageFormatError(f"{path}: bad dimensions {w}x{h}")
    if not 0 < maxval < 256:
        raise ImageFormatError(f"{path}: unsupported maxval {maxval} (8-bit only)")
    need = w * h * channels
    raster = data[offset : offset + need]
    if len(raster) != need:
        raise ImageFormatError(f"{path}: raster has {len(raster)} bytes, expected {need}")
    arr = np.frombuffer(raster, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(h, w).copy()
    return arr.reshape(h, w, channels).copy()


def read_pgm(path):
    """Read an 8-bit P5 grayscale image as a (H, W) uint8 array."""
    return _read_netpbm(path, b"P5", 1)


def read_ppm(path):
    """Read an 8-bit P6 color image as a (H, W, 3) uint8 array."""
    return _read_netpbm(path, b"P6", 3)


def write_pgm(path, image):
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ImageFormatError(f"write_pgm needs a 2-D uint8 array, got {image.dtype} {image.shape}")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def write_ppm(path, image):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ImageFormatError(f"write_ppm needs (H, W, 3) uint8, got {image.dtype} {image.shape}")
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def write_png(path, image):
    """Write a grayscale (H, W) or color (H, W, 3) uint8 array as PNG."""
    from PIL import Image

    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise ImageFormatError(f"write_png needs uint8 data, got {image.dtype}")
    mode = "L" if image.ndim == 2 else "RGB"
    Image.fromarray(image, mode=mode).save(path, format="PNG")


def read_image_gray(path):
    """Read any supported image as grayscale uint8; PGM natively, rest via Pillow."""
    path = str(path)
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"P5":
        return read_pgm(path)
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def bilinear_resize(image, out_h, out_w):
    """Align-corners bilinear resample of a 2-D array to (out_h, out_w).

    Corner samples are preserved exactly; works for both up- and
    down-scaling (no anti-alias filter).
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ImageFormatError(f"bilinear_resize needs a 2-D array, got shape {img.shape}")
    h, w = img.shape
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bad target size {out_h}x{out_w}")
    ys = np.arange(out_h) * ((h - 1) / (out_h - 1)) if out_h > 1 else np.zeros(1)
    xs = np.arange(out_w) * ((w - 1) / (out_w - 1)) if out_w > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bot = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy
