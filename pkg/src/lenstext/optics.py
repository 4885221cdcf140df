"""Lensless capture model ``b = crop(h * x)`` and its adjoint.

Scene and PSF live on an ``H x W`` grid.  Convolution is carried out on a
zero-padded ``2H x 2W`` grid via real FFTs, where circular convolution
equals linear convolution for everything that lands in the sensor window.
The sensor window is the central ``H x W`` block, aligned so that a delta
PSF at ``(H // 2, W // 2)`` reproduces the scene exactly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np
from scipy import fft, ndimage

from .imgcore import Image, as_image, load_image


class DegeneratePsfError(ValueError):
    pass


class GeometryError(ValueError):
    pass


class CropConvolution:
    """Crop-after-convolution operator for one PSF and grid.

    The PSF spectrum is computed once and only read afterwards, so an
    instance can be shared by any number of solves.
    """

    def __init__(self, kernel: Image):
        kernel = np.asarray(kernel, dtype=np.float64)
        self.shape = kernel.shape
        h, w = kernel.shape
        self.padded_shape = (2 * h, 2 * w)
        self.offset = (h // 2, w // 2)
        padded = np.zeros(self.padded_shape)
        padded[:h, :w] = kernel
        # kernel center -> index 0 of the circular grid
        padded = np.roll(padded, (-(h // 2), -(w // 2)), axis=(0, 1))
        self.spectrum = fft.rfft2(padded)

    # padded-grid helpers -------------------------------------------------

    def pad(self, img: Image) -> np.ndarray:
        out = np.zeros(self.padded_shape)
        oy, ox = self.offset
        out[oy : oy + self.shape[0], ox : ox + self.shape[1]] = img
        return out

    def crop(self, padded: np.ndarray) -> np.ndarray:
        oy, ox = self.offset
        return padded[oy : oy + self.shape[0], ox : ox + self.shape[1]]

    def convolve(self, padded: np.ndarray) -> np.ndarray:
        return fft.irfft2(fft.rfft2(padded) * self.spectrum, s=self.padded_shape)

    def correlate(self, padded: np.ndarray) -> np.ndarray:
        return fft.irfft2(fft.rfft2(padded) * np.conj(self.spectrum), s=self.padded_shape)

    # scene-grid operator --------------------------------------------------

    def forward(self, scene: Image) -> np.ndarray:
        return self.crop(self.convolve(self.pad(scene)))

    def adjoint(self, meas: Image) -> np.ndarray:
        return self.crop(self.correlate(self.pad(meas)))


@dataclass
class Psf:
    kernel: Image
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kernel = as_image(self.kernel)

    @property
    def shape(self) -> tuple[int, int]:
        return self.kernel.shape

    @cached_property
    def operator(self) -> CropConvolution:
        return CropConvolution(self.kernel)

    def __getstate__(self):
        # the cached operator is rebuilt on demand in worker processes
        state = dict(self.__dict__)
        state.pop("operator", None)
        return state


def normalize_kernel(kernel: np.ndarray) -> np.ndarray:
    kernel = np.clip(np.asarray(kernel, dtype=np.float64), 0.0, None)
    total = kernel.sum()
    if not np.isfinite(total) or total <= 0:
        raise DegeneratePsfError("degenerate PSF: kernel has no positive mass")
    return kernel / total


def delta_psf(width: int, height: int) -> Psf:
    k = np.zeros((height, width))
    k[height // 2, width // 2] = 1.0
    return Psf(k, {"kind": "delta"})


def aperture_radius(width: int, height: int, aperture_fraction: float) -> float:
    return aperture_fraction * min(width, height) / 2.0


def simulate_psf(width: int, height: int, speckle_count: int = 300, aperture_fraction: float = 0.25,
                 speckle_sigma: float = 1.5, seed: int = 0, centers=None) -> Psf:
    """Caustic-like PSF: a sum of Gaussian spots inside a central aperture disc.

    Spot centers are drawn uniformly over the disc, shrunk by the spot
    radius so the tails stay inside; the kernel is then truncated to the
    disc and normalized to unit mass.  ``centers`` (``(row, col)`` pairs)
    overrides the random draw.
    """
    if speckle_count < 1:
        raise ValueError("speckle_count must be >= 1")
    if not 0 < aperture_fraction <= 1:
        raise ValueError("aperture_fraction must lie in (0, 1]")
    if speckle_sigma <= 0:
        raise ValueError("speckle_sigma must be > 0")
    cy, cx = height // 2, width // 2
    radius = aperture_radius(width, height, aperture_fraction)
    if centers is None:
        rng = np.random.default_rng(seed)
        inner = max(radius - 3.0 * speckle_sigma, 0.0)
        r = inner * np.sqrt(rng.random(speckle_count))
        theta = 2.0 * np.pi * rng.random(speckle_count)
        centers = np.column_stack([cy + r * np.sin(theta), cx + r * np.cos(theta)])
    else:
        centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)

    kernel = np.zeros((height, width))
    half = int(math.ceil(6.0 * speckle_sigma))
    for py, px in centers:
        y0, y1 = max(int(py) - half, 0), min(int(py) + half + 2, height)
        x0, x1 = max(int(px) - half, 0), min(int(px) + half + 2, width)
        yy = np.arange(y0, y1)[:, None] - py
        xx = np.arange(x0, x1)[None, :] - px
        kernel[y0:y1, x0:x1] += np.exp(-(yy * yy + xx * xx) / (2.0 * speckle_sigma**2))
    yy, xx = np.mgrid[:height, :width]
    kernel[(yy - cy) ** 2 + (xx - cx) ** 2 > radius * radius] = 0.0
    provenance = {"kind": "simulated", "seed": int(seed), "speckle_count": int(len(centers)),
                  "aperture_fraction": float(aperture_fraction), "speckle_sigma": float(speckle_sigma)}
    return Psf(normalize_kernel(kernel), provenance)


def load_psf(path) -> Psf:
    """Load a measured PSF image; negatives are clamped and mass normalized to 1."""
    return Psf(normalize_kernel(load_image(path)), {"kind": "loaded", "path": str(path)})


def magnify_psf(psf: Psf, factor: float) -> Psf:
    """Scale the PSF pattern by ``factor`` about its centroid, then renormalize."""
    if factor <= 0:
        raise ValueError("magnification must be > 0")
    if factor == 1.0:
        return psf
    k = psf.kernel
    yy, xx = np.mgrid[: k.shape[0], : k.shape[1]]
    total = k.sum()
    center = np.array([(yy * k).sum() / total, (xx * k).sum() / total])
    # output p samples input at center + (p - center) / factor
    matrix = np.eye(2) / factor
    offset = center - matrix @ center
    scaled = ndimage.affine_transform(k, matrix, offset=offset, order=1, mode="constant", cval=0.0)
    return Psf(normalize_kernel(scaled), {**psf.provenance, "magnification": float(factor)})


@dataclass(frozen=True)
class CaptureParams:
    intensity_scale: float = 1.0
    noise_sigma: float = 0.0
    shift_x: int = 0
    shift_y: int = 0
    psf_magnification: float = 1.0
    quantize_bits: int = 0
    seed: int = 0

    def __post_init__(self):
        if not self.intensity_scale > 0:
            raise ValueError("intensity_scale must be > 0")
        if not self.noise_sigma >= 0:
            raise ValueError("noise_sigma must be >= 0")
        if not self.psf_magnification > 0:
            raise ValueError("psf_magnification must be > 0")
        if self.quantize_bits not in (0, 8):
            raise ValueError("quantize_bits must be 0 or 8")
        if int(self.shift_x) != self.shift_x or int(self.shift_y) != self.shift_y:
            raise ValueError("shifts must be whole pixels")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SensorMeasurement:
    data: Image
    params: CaptureParams


def shift_image(img: Image, dx: int, dy: int) -> np.ndarray:
    """Translate by whole pixels (positive = right/down) with zero fill."""
    h, w = img.shape
    out = np.zeros_like(img)
    if abs(dx) >= w or abs(dy) >= h:
        return out
    src = img[max(-dy, 0) : h - max(dy, 0), max(-dx, 0) : w - max(dx, 0)]
    out[max(dy, 0) : max(dy, 0) + src.shape[0], max(dx, 0) : max(dx, 0) + src.shape[1]] = src
    return out


def forward_capture(scene: Image, psf: Psf, params: CaptureParams | None = None) -> SensorMeasurement:
    """Simulate one sensor measurement of ``scene`` through ``psf``."""
    params = params or CaptureParams()
    scene = as_image(scene)
    if scene.shape != psf.shape:
        raise GeometryError(f"scene {scene.shape} and PSF {psf.shape} dimensions differ")
    x = scene
    if params.shift_x or params.shift_y:
        x = shift_image(x, int(params.shift_x), int(params.shift_y))
    if params.intensity_scale != 1.0:
        x = x * params.intensity_scale
    op = psf.operator if params.psf_magnification == 1.0 else magnify_psf(psf, params.psf_magnification).operator
    b = op.forward(x)
    if params.noise_sigma > 0:
        rng = np.random.default_rng(params.seed)
        b = b + rng.normal(0.0, params.noise_sigma, size=b.shape)
    b = np.maximum(b, 0.0)
    if params.quantize_bits == 8:
        top = max(1.0, float(b.max()))
        b = np.rint(b / top * 255.0) / 255.0 * top
    return SensorMeasurement(b, params)


def adjoint_capture(meas: Image, psf: Psf) -> np.ndarray:
    """Apply ``(C H)^T``: zero-pad, correlate with the PSF, take the central window."""
    meas = as_image(meas.data if isinstance(meas, SensorMeasurement) else meas)
    if meas.shape != psf.shape:
        raise GeometryError(f"measurement {meas.shape} and PSF {psf.shape} dimensions differ")
    return psf.operator.adjoint(meas)
