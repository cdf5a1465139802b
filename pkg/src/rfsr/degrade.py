"""Procedural HR textures and a seeded blur -> downsample -> noise chain."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image, ImageDraw
from scipy import ndimage

from .ndgrad import resample2x

Tensor = torch.Tensor


@dataclass(frozen=True)
class DegradeConfig:
    scale: int = 2
    blur_sigma_range: tuple[float, float] = (0.4, 1.6)
    noise_sigma_range: tuple[float, float] = (0.0, 0.06)
    downsample: str = "area"
    seed: int = 0

    def __post_init__(self):
        if self.scale not in (2, 4):
            raise ValueError(f"scale must be 2 or 4, got {self.scale}")
        lo, hi = self.blur_sigma_range
        if not 0 <= lo <= hi:
            raise ValueError(f"bad blur_sigma_range {self.blur_sigma_range}")
        lo, hi = self.noise_sigma_range
        if not 0 <= lo <= hi <= 0.3:
            raise ValueError(f"bad noise_sigma_range {self.noise_sigma_range}")
        if self.downsample != "area":
            raise ValueError("only area downsampling is supported")


@dataclass
class ImagePair:
    x_hr: Tensor
    x_lr: Tensor

    def __post_init__(self):
        if self.x_hr.shape != self.x_lr.shape:
            raise ValueError(f"pair shapes differ: {tuple(self.x_hr.shape)} vs {tuple(self.x_lr.shape)}")


def derive_seed(base_seed: int, index: int) -> int:
    """Per-sample seed: first 8 bytes (little endian) of BLAKE2b over both values."""
    payload = (base_seed % 2**64).to_bytes(8, "little") + (index % 2**64).to_bytes(8, "little")
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def _value_noise(rng, size, cells):
    grid = rng.random((cells + 1, cells + 1))
    return ndimage.zoom(grid, size / (cells + 1), order=3, mode="nearest")[:size, :size]


def make_texture(seed: int, size: int = 32, channels: int = 3, dtype=torch.float32) -> Tensor:
    """A 1 x C x size x size image in [0, 1], a pure function of ``seed``.

    Sum of band-limited value noise, a couple of oriented gratings and a few
    flat-coloured polygons (rasterised at 4x and box-filtered down).
    """
    if size < 8:
        raise ValueError(f"texture size must be >= 8, got {size}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((channels, size, size))
    for c in range(channels):
        base = 0.35 * _value_noise(rng, size, int(rng.integers(2, 6)))
        detail = 0.15 * _value_noise(rng, size, int(rng.integers(6, 12)))
        img[c] = base + detail + 0.1 * rng.random()
    for _ in range(int(rng.integers(1, 3))):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(2.0, size / 4)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
        img += rng.uniform(0.05, 0.2, size=(channels, 1, 1)) * wave
    up = 4 * size
    for _ in range(int(rng.integers(1, 4))):
        canvas = Image.new("F", (up, up), 0.0)
        cx, cy = rng.uniform(0, up, size=2)
        n = int(rng.integers(3, 7))
        ang = np.sort(rng.uniform(0, 2 * np.pi, size=n))
        rad = rng.uniform(up / 10, up / 3, size=n)
        pts = [(float(cx + r * np.cos(a)), float(cy + r * np.sin(a))) for a, r in zip(ang, rad)]
        ImageDraw.Draw(canvas).polygon(pts, fill=1.0)
        mask = np.asarray(canvas, dtype=np.float64).reshape(size, 4, size, 4).mean(axis=(1, 3))
        colour = rng.random((channels, 1, 1))
        img = img * (1 - mask) + colour * mask
    img = np.clip(img, 0.0, 1.0)
    return torch.from_numpy(img[None]).to(dtype)


def _check_divisible(x: Tensor, scale: int):
    h, w = x.shape[-2:]
    if h % scale or w % scale:
        raise ValueError(f"HR extents {h}x{w} not divisible by scale {scale}")


def degrade(x_hr: Tensor, cfg: DegradeConfig, seed: int) -> Tensor:
    """Blur, area-downsample by ``cfg.scale`` and add Gaussian noise; clamp to [0, 1].

    Blur and noise strengths are drawn from the config ranges with an RNG keyed
    on ``(cfg.seed, seed)``; the result is reduced in size (not re-upscaled).
    """
    _check_divisible(x_hr, cfg.scale)
    rng = np.random.default_rng([cfg.seed % 2**64, seed % 2**64])
    blur = rng.uniform(*cfg.blur_sigma_range)
    noise = rng.uniform(*cfg.noise_sigma_range)
    x = x_hr.detach().to(torch.float64).cpu().numpy()
    if blur > 0:
        x = ndimage.gaussian_filter(x, sigma=(0, 0, blur, blur), mode="reflect", truncate=3.0)
    y = torch.from_numpy(np.ascontiguousarray(x))
    for _ in range({2: 1, 4: 2}[cfg.scale]):
        y = resample2x(y, "down")
    if noise > 0:
        y = y + noise * torch.from_numpy(rng.standard_normal(tuple(y.shape)))
    return y.clamp(0.0, 1.0).to(x_hr.dtype)


def upscale(x_small: Tensor, scale: int, method: str = "nearest") -> Tensor:
    if scale not in (2, 4):
        raise ValueError(f"scale must be 2 or 4, got {scale}")
    y = x_small
    for _ in range({2: 1, 4: 2}[scale]):
        y = resample2x(y, "up", mode=method)
    return y


def make_pair(seed: int, size: int, cfg: DegradeConfig, channels: int = 3,
              upscale_method: str = "nearest", dtype=torch.float32) -> ImagePair:
    x_hr = make_texture(seed, size, channels, dtype=torch.float64)
    x_lr = upscale(degrade(x_hr, cfg, seed), cfg.scale, upscale_method).clamp(0.0, 1.0)
    return ImagePair(x_hr.to(dtype), x_lr.to(dtype))


def make_corpus(base_seed: int, n: int, size: int, cfg: DegradeConfig, **kw) -> list[ImagePair]:
    return [make_pair(derive_seed(base_seed, i), size, cfg, **kw) for i in range(n)]


def stack_pairs(pairs: list[ImagePair]) -> ImagePair:
    return ImagePair(torch.cat([p.x_hr for p in pairs]), torch.cat([p.x_lr for p in pairs]))


def sobel_energy(x: Tensor) -> float:
    """Mean absolute Sobel response over both orientations and all channels."""
    from .flow import sobel

    return sobel(x).abs().mean().item()
