"""PNG / raw-float image I/O and on-disk corpora.

A corpus directory holds ``manifest.txt`` and one subdirectory per split with
``{index}_hr.png`` and ``{index}_lr.png`` (the LR image at its reduced size).
``gen-data --raw`` also writes exact float32 ``.npy`` sidecars next to each
PNG; loaders prefer them. A split holding only ``*_hr.png`` files (e.g. real
photos dropped in by hand) gets its LR side synthesised on load.
"""
from __future__ import annotations

import os
import re
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .config import ExperimentConfig
from .degrade import ImagePair, degrade, derive_seed, make_pair, make_texture, stack_pairs, upscale

MANIFEST = "manifest.txt"
SPLITS = {"train": 0, "eval": 1}


def read_png(path) -> torch.Tensor:
    im = Image.open(path)
    im = im if im.mode == "L" else im.convert("RGB")
    img = np.asarray(im, dtype=np.float32) / 255.0
    if img.ndim == 2:
        img = img[..., None]
    return torch.from_numpy(img.transpose(2, 0, 1).copy())[None]


def to_uint8(x: torch.Tensor) -> np.ndarray:
    arr = x.detach().double().clamp(0, 1).cpu().numpy()
    if arr.ndim == 4:
        arr = arr[0]
    arr = np.round(arr * 255.0).astype(np.uint8).transpose(1, 2, 0)
    return arr[..., 0] if arr.shape[2] == 1 else arr


def write_png(x: torch.Tensor, path, raw: bool = False):
    """8-bit PNG, written atomically; ``raw`` adds a float32 ``.npy`` sidecar."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    Image.fromarray(to_uint8(x)).save(tmp, format="PNG")
    os.replace(tmp, path)
    if raw:
        npy = path.with_suffix(".npy")
        tmp = npy.with_name(npy.name + ".tmp")
        with open(tmp, "wb") as fh:
            np.save(fh, x.detach().cpu().numpy().astype(np.float32))
        os.replace(tmp, npy)


def read_image(path) -> torch.Tensor:
    path = Path(path)
    npy = path.with_suffix(".npy")
    if npy.exists():
        arr = np.load(npy)
        return torch.from_numpy(arr if arr.ndim == 4 else arr[None])
    return read_png(path)


def split_seed(base_seed: int, split: str) -> int:
    return derive_seed(base_seed, 2**32 + SPLITS[split])


def generate_split(cfg: ExperimentConfig, split: str) -> list[ImagePair]:
    """Pairs for ``split``; the i-th pair's seed is derive_seed(split_seed, i)."""
    n = cfg.data.train_size if split == "train" else cfg.data.eval_size
    base = split_seed(cfg.data.seed, split)
    return [make_pair(derive_seed(base, i), cfg.data.hr_size, cfg.degrade_config(), cfg.data.channels,
                      cfg.data.upscale) for i in range(n)]


def generate_corpus(cfg: ExperimentConfig, out_dir, raw: bool = False) -> Path:
    out = Path(out_dir)
    dcfg = cfg.degrade_config()
    lines = ["# rfsr corpus manifest",
             "seed_rule = derive_seed(derive_seed(data.seed, 2**32 + split_id), index); "
             "derive_seed = first 8 bytes (LE) of blake2b(le64(a) || le64(b))",
             f"lr_upscale = {cfg.data.upscale}", "lr_files = reduced size (x1/scale)"]
    for split in SPLITS:
        d = out / split
        d.mkdir(parents=True, exist_ok=True)
        n = cfg.data.train_size if split == "train" else cfg.data.eval_size
        base = split_seed(cfg.data.seed, split)
        lines.append(f"split {split} = {n} pairs, split_seed {base}")
        for i in range(n):
            seed = derive_seed(base, i)
            hr = make_texture(seed, cfg.data.hr_size, cfg.data.channels, dtype=torch.float64)
            lr_small = degrade(hr, dcfg, seed)
            write_png(hr.float(), d / f"{i}_hr.png", raw)
            write_png(lr_small.float(), d / f"{i}_lr.png", raw)
    lines += ["", "# resolved config", cfg.to_text()]
    (out / MANIFEST).write_text("\n".join(lines))
    return out


def load_split(root, split: str, cfg: ExperimentConfig) -> ImagePair:
    """Stack a split into one ImagePair with LR pre-upscaled to HR size."""
    d = Path(root) / split
    if not d.is_dir():
        raise FileNotFoundError(f"corpus split not found: {d}")
    idx = sorted((int(m.group(1)) for p in d.iterdir() if (m := re.fullmatch(r"(\d+)_hr\.png", p.name))))
    if not idx:
        raise ValueError(f"corpus split {d} is empty")
    pairs = []
    for i in idx:
        hr = read_image(d / f"{i}_hr.png")
        lr_path = d / f"{i}_lr.png"
        if lr_path.exists():
            lr_small = read_image(lr_path)
        else:
            lr_small = degrade(hr.double(), cfg.degrade_config(), derive_seed(cfg.data.seed, i)).float()
        pairs.append(ImagePair(hr.float(), upscale(lr_small.float(), cfg.data.scale, cfg.data.upscale)))
    return stack_pairs(pairs)
