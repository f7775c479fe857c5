"""Seeded synthesizers for non-ideal versions of clean RGB images.

Each degradation keeps the scene content, so an ideal image and its
degraded twin form a matched training pair.

Random streams come from numpy's PCG64 seeded through ``SeedSequence`` with
the entropy ``[seed, *stream]``; identical keys give identical streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .tensor import DomainError, ImageRGB, ShapeError

FOG_AIRLIGHT = 0.9
FOG_DENSITY = 3.0
FOG_DEPTH_NEAR = 0.2
FOG_DEPTH_FAR = 1.0
RAIN_DENSITY = 0.02
RAIN_BRIGHTNESS = 0.25
RAIN_LENGTH = (8, 16)
RAIN_ANGLE_DEG = (80.0, 100.0)
RAIN_BLUR_ABOVE = 0.5
DARK_GAIN_DROP = 0.8
DARK_GAMMA_RISE = 1.5
DARK_NOISE_STD = 0.02


class Kind(str, Enum):
    RAIN = "rain"
    FOG = "fog"
    DARK = "dark"
    BAYER = "bayer"


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


@dataclass(frozen=True)
class DegradeSpec:
    kind: Kind
    intensity: float = 0.0
    seed: int = 0
    # Constant overrides, e.g. {"airlight": 0.8}; see the module-level defaults.
    options: tuple = field(default=(), compare=True)

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not 0.0 <= self.intensity <= 1.0:
            raise DomainError(f"intensity must lie in [0, 1], got {self.intensity}")
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if isinstance(self.options, dict):
            object.__setattr__(self, "options", tuple(sorted(self.options.items())))

    def __str__(self):
        if self.kind is Kind.BAYER:
            return "bayer"
        return f"{self.kind.value}@{self.intensity:g}"


def _check_intensity(intensity):
    if not 0.0 <= intensity <= 1.0:
        raise DomainError(f"intensity must lie in [0, 1], got {intensity}")


def apply_fog(img: ImageRGB, intensity: float, airlight: float = FOG_AIRLIGHT, density: float = FOG_DENSITY) -> ImageRGB:
    """Koschmieder haze with a vertical depth ramp (far at the top row)."""
    _check_intensity(intensity)
    if intensity == 0.0:
        return img
    h = img.height
    frac = np.arange(h) / (h - 1) if h > 1 else np.zeros(1)
    depth = FOG_DEPTH_FAR - (FOG_DEPTH_FAR - FOG_DEPTH_NEAR) * frac
    t = np.exp(-density * intensity * depth)[None, None, :]
    return ImageRGB(np.clip(img.pixels * t + airlight * (1.0 - t), 0.0, 1.0))


def _box_blur(layer: np.ndarray) -> np.ndarray:
    w, h = layer.shape
    p = np.pad(layer, 1, mode="edge")
    out = np.zeros_like(layer)
    for i in range(3):
        for j in range(3):
            out += p[i : i + w, j : j + h]
    return out / 9.0


def rain_layer(width: int, height: int, intensity: float, rng: np.random.Generator, brightness: float = RAIN_BRIGHTNESS, density: float = RAIN_DENSITY) -> np.ndarray:
    """Additive streak brightness per pixel, shape (width, height)."""
    n = int(math.floor(intensity * density * width * height + 0.5))
    cover = np.zeros((width + 1, height + 1))
    for _ in range(n):
        x0 = rng.uniform(0, width)
        y0 = rng.uniform(0, height)
        length = rng.integers(RAIN_LENGTH[0], RAIN_LENGTH[1] + 1)
        theta = math.radians(rng.uniform(*RAIN_ANGLE_DEG))
        # Bilinear splat of points spaced half a pixel apart along the streak.
        ts = np.arange(0.0, length, 0.5)
        xs = x0 + ts * math.cos(theta)
        ys = y0 + ts * math.sin(theta)
        keep = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
        xs, ys = xs[keep], ys[keep]
        ix, iy = np.floor(xs).astype(int), np.floor(ys).astype(int)
        fx, fy = xs - ix, ys - iy
        np.add.at(cover, (ix, iy), 0.5 * (1 - fx) * (1 - fy))
        np.add.at(cover, (ix + 1, iy), 0.5 * fx * (1 - fy))
        np.add.at(cover, (ix, iy + 1), 0.5 * (1 - fx) * fy)
        np.add.at(cover, (ix + 1, iy + 1), 0.5 * fx * fy)
    layer = brightness * np.minimum(cover[:width, :height], 1.0)
    if intensity > RAIN_BLUR_ABOVE:
        layer = _box_blur(layer)
    return layer


def apply_rain(img: ImageRGB, intensity: float, seed: int = 0, *, stream: tuple = (), brightness: float = RAIN_BRIGHTNESS, density: float = RAIN_DENSITY) -> ImageRGB:
    """Anti-aliased bright streaks added to every channel.

    Above intensity 0.5 the streak layer is softened by a 3x3 box blur
    before it is added, so the output never gets darker than the input.
    """
    _check_intensity(intensity)
    if intensity == 0.0:
        return img
    rng = make_rng(seed, *stream)
    layer = rain_layer(img.width, img.height, intensity, rng, brightness, density)
    return ImageRGB(np.clip(img.pixels + layer[None], 0.0, 1.0))


def apply_dark(img: ImageRGB, intensity: float, seed: int = 0, *, stream: tuple = (), noise: bool = True) -> ImageRGB:
    """Low light: gain drop, gamma rise, then Gaussian read noise."""
    _check_intensity(intensity)
    if intensity == 0.0:
        return img
    out = (img.pixels * (1.0 - DARK_GAIN_DROP * intensity)) ** (1.0 + DARK_GAMMA_RISE * intensity)
    if noise:
        rng = make_rng(seed, *stream)
        out = out + rng.normal(0.0, DARK_NOISE_STD * intensity, size=out.shape)
    return ImageRGB(np.clip(out, 0.0, 1.0))


def bayer_mask(width: int, height: int) -> np.ndarray:
    """RGGB channel selector of shape (3, width, height)."""
    x = np.arange(width)[:, None] % 2
    y = np.arange(height)[None, :] % 2
    mask = np.zeros((3, width, height), dtype=bool)
    mask[0] = (x == 0) & (y == 0)
    mask[1] = x != y
    mask[2] = (x == 1) & (y == 1)
    return mask


def apply_bayer(img: ImageRGB) -> ImageRGB:
    if img.width % 2 or img.height % 2:
        raise ShapeError(f"bayer mosaic needs even dims, got {img.width}x{img.height}")
    return ImageRGB(np.where(bayer_mask(img.width, img.height), img.pixels, 0.0))


def degrade_image(img: ImageRGB, spec: DegradeSpec, index: int | None = None) -> ImageRGB:
    """Apply ``spec``; ``index`` selects a per-image random stream within a dataset."""
    stream = () if index is None else (int(index),)
    opts = dict(spec.options)
    if spec.kind is Kind.FOG:
        return apply_fog(img, spec.intensity, **opts)
    if spec.kind is Kind.RAIN:
        return apply_rain(img, spec.intensity, spec.seed, stream=stream, **opts)
    if spec.kind is Kind.DARK:
        return apply_dark(img, spec.intensity, spec.seed, stream=stream, **opts)
    return apply_bayer(img)


def _to_bytes(px: np.ndarray) -> np.ndarray:
    return np.floor(px * 255.0 + 0.5).astype(np.uint8)


def encode_ppm(img: ImageRGB) -> bytes:
    # Rows are written top to bottom: pixels[c, x, y] -> raster[y, x, c].
    raster = _to_bytes(img.pixels).transpose(2, 1, 0)
    return f"P6\n{img.width} {img.height}\n255\n".encode() + raster.tobytes()


def decode_ppm(buf: bytes) -> ImageRGB:
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PPM header")
        tokens.append(buf[start:pos])
    if tokens[0] != b"P6":
        raise ValueError(f"not a binary PPM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"only maxval 255 is supported, got {maxval}")
    pos += 1
    need = width * height * 3
    raster = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos) if len(buf) - pos >= need else None
    if raster is None:
        raise ValueError(f"truncated PPM payload: expected {need} bytes, got {len(buf) - pos}")
    return ImageRGB(raster.reshape(height, width, 3).transpose(2, 1, 0) / 255.0)


def write_ppm(img: ImageRGB, path) -> None:
    Path(path).write_bytes(encode_ppm(img))


def read_ppm(path) -> ImageRGB:
    return decode_ppm(Path(path).read_bytes())
