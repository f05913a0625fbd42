"""Deterministic rasterization of the three image modes.

Spectrograms map one matrix cell to one pixel (no resampling), IQ panels
are Bresenham polylines without anti-aliasing, and joint images are plain
horizontal concatenations. PNGs carry no timestamps or text chunks, so
identical inputs produce identical files.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from PIL import Image

from ._viridis import VIRIDIS_RGB

__all__ = [
    "MODES",
    "TRACE_BLUE",
    "TRACE_RED",
    "BACKGROUND_WHITE",
    "VIRIDIS_RGB",
    "RenderConfig",
    "RenderedImage",
    "render_spectrogram",
    "render_iq_panel",
    "render_joint",
    "write_png",
    "read_png",
]

MODES = ("spec", "iq", "joint")

TRACE_BLUE = (0, 0, 255)        # real part
TRACE_RED = (255, 0, 0)         # imaginary part, drawn last
BACKGROUND_WHITE = (255, 255, 255)

# traces are scaled so the joint amplitude range spans [5%, 95%] of height
_TRACE_MARGIN = 0.05


@dataclass(frozen=True)
class RenderConfig:
    """IQ panel geometry and the spectrogram color lookup table."""

    iq_width: int = 512
    iq_height: int = 512
    colormap: np.ndarray = field(default_factory=lambda: VIRIDIS_RGB)

    def __post_init__(self) -> None:
        if self.iq_width < 2 or self.iq_height < 2:
            raise ValueError("IQ panel must be at least 2x2 pixels")
        cmap = np.asarray(self.colormap)
        if cmap.shape != (256, 3) or cmap.dtype != np.uint8:
            raise ValueError("colormap must be a 256x3 uint8 lookup table")


@dataclass
class RenderedImage:
    """8-bit RGB raster plus mode and provenance metadata."""

    pixels: np.ndarray  # (height, width, 3) uint8
    mode: str
    provenance: dict = field(default_factory=dict)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def render_spectrogram(norm_matrix, config: RenderConfig = RenderConfig(),
                       provenance: Optional[dict] = None) -> RenderedImage:
    """Map a [0, 1] K x T matrix to a K-tall, T-wide image, one pixel per cell.

    Matrix row 0 (lowest shifted frequency) becomes the bottom pixel row;
    value v maps to LUT entry round(v * 255).
    """
    values = np.asarray(norm_matrix, dtype=float)
    if values.ndim != 2:
        raise ValueError("normalized matrix must be 2-D")
    if np.any(values < 0.0) or np.any(values > 1.0) or not np.all(np.isfinite(values)):
        raise ValueError("normalized matrix entries must lie in [0, 1]")
    idx = np.rint(values * 255).astype(np.uint8)
    pixels = np.asarray(config.colormap)[idx][::-1, :, :]  # low frequency at bottom
    return RenderedImage(pixels=np.ascontiguousarray(pixels), mode="spec",
                         provenance=dict(provenance or {}))


def _draw_line(pixels: np.ndarray, x0: int, y0: int, x1: int, y1: int, color) -> None:
    # integer Bresenham, no anti-aliasing
    dx = abs(x1 - x0)
    sx = 1 if x0 < x1 else -1
    dy = -abs(y1 - y0)
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        pixels[y0, x0] = color
        if x0 == x1 and y0 == y1:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def _draw_trace(pixels: np.ndarray, xs: np.ndarray, ys: np.ndarray, color) -> None:
    for i in range(len(xs) - 1):
        _draw_line(pixels, xs[i], ys[i], xs[i + 1], ys[i + 1], color)
    if len(xs) == 1:
        pixels[ys[0], xs[0]] = color


def render_iq_panel(segment, config: RenderConfig = RenderConfig(),
                    provenance: Optional[dict] = None) -> RenderedImage:
    """Plot real (blue) and imaginary (red) traces on a white background.

    Both traces share one vertical scale: the joint min/max maps to
    [5%, 95%] of the panel height, larger values higher on screen. A flat
    segment (zero amplitude range) centers at mid-height. Red draws last.
    """
    samples = np.asarray(getattr(segment, "samples", segment))
    if samples.ndim != 1 or len(samples) == 0:
        raise ValueError("segment must be a nonempty 1-D sample array")
    if not np.all(np.isfinite(samples.real)) or not np.all(np.isfinite(samples.imag)):
        raise ValueError("segment contains non-finite values")

    w, h = config.iq_width, config.iq_height
    pixels = np.empty((h, w, 3), dtype=np.uint8)
    pixels[:] = BACKGROUND_WHITE

    re, im = samples.real, samples.imag
    lo = min(re.min(), im.min())
    hi = max(re.max(), im.max())
    top = _TRACE_MARGIN * (h - 1)
    span = (1.0 - 2.0 * _TRACE_MARGIN) * (h - 1)

    n = len(samples)
    if n == 1:
        xs = np.array([(w - 1) // 2])
    else:
        xs = np.rint(np.arange(n) * (w - 1) / (n - 1)).astype(int)

    def rows(values):
        if hi <= lo:
            return np.full(n, int(round((h - 1) / 2)))
        return np.rint(top + (hi - values) / (hi - lo) * span).astype(int)

    _draw_trace(pixels, xs, rows(re), TRACE_BLUE)
    _draw_trace(pixels, xs, rows(im), TRACE_RED)
    return RenderedImage(pixels=pixels, mode="iq", provenance=dict(provenance or {}))


def render_joint(spec_img: RenderedImage, iq_img: RenderedImage) -> RenderedImage:
    """Concatenate spectrogram (left) and IQ panel (right) of equal height."""
    if spec_img.height != iq_img.height:
        raise ValueError(
            f"height mismatch: spectrogram {spec_img.height} vs IQ panel {iq_img.height}; "
            "render the IQ panel at the spectrogram height instead of resampling")
    pixels = np.hstack([spec_img.pixels, iq_img.pixels])
    provenance = dict(spec_img.provenance)
    provenance.update(iq_img.provenance)
    return RenderedImage(pixels=pixels, mode="joint", provenance=provenance)


def write_png(image: RenderedImage, path) -> None:
    """Write a lossless 8-bit RGB PNG with no ancillary time/text chunks."""
    pixels = image.pixels
    if pixels.dtype != np.uint8 or pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError("image pixels must be (H, W, 3) uint8")
    Image.fromarray(pixels, mode="RGB").save(path, format="PNG", compress_level=6)


def read_png(path) -> np.ndarray:
    """Read a PNG back to (H, W, 3) uint8 pixels."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)
