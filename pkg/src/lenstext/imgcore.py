"""Grayscale image helpers shared by every stage of the pipeline.

Images are plain 2D ``float64`` numpy arrays of shape ``(height, width)``
holding intensities with a nominal range of [0, 1].  Files are quantized
only at the I/O boundary: PGM (P5, 8 or 16 bit) and 8-bit grayscale PNG.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

Image = np.ndarray

PSNR_CAP_DB = 99.0


class ImageIOError(ValueError):
    """Base class for image read/write failures."""


class UnreadableImageError(ImageIOError):
    pass


class BadHeaderError(ImageIOError):
    pass


class TruncatedDataError(ImageIOError):
    pass


class UnsupportedDepthError(ImageIOError):
    pass


def as_image(data) -> Image:
    """Validate ``data`` as an image and return it as a float64 array."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"image dimensions must be >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    return arr


def _read_header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace separated PNM header tokens, skipping comments."""
    tokens: list[bytes] = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise BadHeaderError("PGM header ended prematurely")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    if pos >= n or not buf[pos : pos + 1].isspace():
        raise BadHeaderError("PGM header not terminated by whitespace")
    return tokens, pos + 1


def _load_pgm(buf: bytes) -> Image:
    if buf[:2] != b"P5":
        raise BadHeaderError(f"bad magic {buf[:2]!r}, expected b'P5'")
    tokens, offset = _read_header_tokens(buf, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise BadHeaderError(f"non-integer PGM header field: {exc}") from None
    if width < 1 or height < 1:
        raise BadHeaderError(f"invalid PGM dimensions {width}x{height}")
    if not 1 <= maxval <= 65535:
        raise UnsupportedDepthError(f"unsupported PGM maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    expected = width * height * dtype.itemsize
    raster = buf[offset : offset + expected]
    if len(raster) < expected:
        raise TruncatedDataError(f"PGM pixel data truncated: got {len(raster)} of {expected} bytes")
    pixels = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    return pixels.astype(np.float64) / maxval


def _load_png(path: Path) -> Image:
    from PIL import Image as PILImage

    with PILImage.open(path) as im:
        if im.mode != "L":
            raise UnsupportedDepthError(f"PNG mode {im.mode!r} unsupported; only 8-bit grayscale ('L')")
        pixels = np.asarray(im, dtype=np.uint8)
    return pixels.astype(np.float64) / 255.0


def load_image(path) -> Image:
    """Load a PGM (P5) or 8-bit grayscale PNG file scaled to [0, 1]."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise UnreadableImageError(f"cannot read {path}: {exc.strerror or exc}") from None
    if buf[:8] == b"\x89PNG\r\n\x1a\n":
        try:
            return _load_png(path)
        except ImageIOError:
            raise
        except Exception as exc:
            raise TruncatedDataError(f"corrupt PNG {path}: {exc}") from None
    return _load_pgm(buf)


def save_image(img: Image, path, depth: int = 8) -> None:
    """Write ``img`` as PGM (by default) or PNG, chosen by the file suffix.

    Values are clamped to [0, 1] and quantized to ``2**depth - 1`` levels.
    PNG output supports ``depth=8`` only.
    """
    img = as_image(img)
    if depth not in (8, 16):
        raise UnsupportedDepthError(f"depth must be 8 or 16, got {depth}")
    path = Path(path)
    maxval = (1 << depth) - 1
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval)
    try:
        if path.suffix.lower() == ".png":
            if depth != 8:
                raise UnsupportedDepthError("PNG output is 8-bit only")
            from PIL import Image as PILImage

            PILImage.fromarray(q.astype(np.uint8), mode="L").save(path)
            return
        dtype = ">u2" if depth == 16 else "u1"
        header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(q.astype(dtype).tobytes())
    except OSError as exc:
        raise ImageIOError(f"cannot write {path}: {exc.strerror or exc}") from None


def _axis_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centers, clamped to the border
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(img: Image, new_width: int, new_height: int) -> Image:
    """Bilinear resampling with the half-pixel-center convention."""
    img = as_image(img)
    if new_width < 1 or new_height < 1:
        raise ValueError(f"target dimensions must be >= 1, got {new_width}x{new_height}")
    h, w = img.shape
    if (h, w) == (new_height, new_width):
        return img.copy()
    y0, y1, fy = _axis_weights(h, new_height)
    x0, x1, fx = _axis_weights(w, new_width)
    rows = img[y0, :] * (1.0 - fy)[:, None] + img[y1, :] * fy[:, None]
    return rows[:, x0] * (1.0 - fx)[None, :] + rows[:, x1] * fx[None, :]


def mse(a: Image, b: Image) -> float:
    a, b = as_image(a), as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a: Image, b: Image, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 dB for (near) identical inputs."""
    err = mse(a, b)
    if err < 1e-12:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(peak * peak / err))


def total_variation(img: Image) -> float:
    """Anisotropic TV: summed absolute forward differences along both axes."""
    img = as_image(img)
    return float(np.abs(np.diff(img, axis=0)).sum() + np.abs(np.diff(img, axis=1)).sum())


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
