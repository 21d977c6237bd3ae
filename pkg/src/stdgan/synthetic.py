"""Procedural multi-domain dataset: shared scenes, per-domain radiometry."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import BUILDING, ROAD, TREE, DomainImage, save_domain, write_manifest

BACKGROUND = np.array([0.52, 0.47, 0.33])
TREE_COLOR = np.array([0.16, 0.36, 0.13])
ROAD_COLOR = np.array([0.42, 0.42, 0.44])
ROOF_COLORS = np.array([[0.66, 0.30, 0.24], [0.78, 0.76, 0.72], [0.55, 0.40, 0.36]])


@dataclass(frozen=True)
class Radiometry:
    """``offset + gain * x ** gamma`` per channel, clipped to [0, 1]."""

    gain: tuple[float, float, float]
    offset: tuple[float, float, float]
    gamma: float

    def apply(self, pixels: np.ndarray) -> np.ndarray:
        out = np.asarray(self.offset) + np.asarray(self.gain) * np.power(pixels, self.gamma)
        return np.clip(out, 0.0, 1.0)


PRESETS = (
    Radiometry((1.0, 1.0, 1.0), (0.0, 0.0, 0.0), 1.0),
    Radiometry((1.25, 0.95, 0.55), (0.08, 0.02, 0.0), 0.75),
    Radiometry((0.55, 0.8, 1.35), (0.0, 0.03, 0.08), 1.5),
    Radiometry((0.7, 0.7, 0.7), (0.25, 0.25, 0.25), 1.2),
    Radiometry((1.1, 1.3, 0.9), (-0.05, 0.0, 0.05), 0.9),
)


def domain_radiometry(k: int, rng: np.random.Generator) -> list[Radiometry]:
    """Presets jittered slightly per seed; beyond the presets, random draws."""
    out = []
    for d in range(k):
        if d < len(PRESETS):
            p = PRESETS[d]
            gain = tuple(float(g * rng.uniform(0.97, 1.03)) for g in p.gain)
            out.append(Radiometry(gain, p.offset, p.gamma))
        else:
            out.append(
                Radiometry(
                    tuple(float(g) for g in rng.uniform(0.5, 1.4, 3)),
                    tuple(float(o) for o in rng.uniform(-0.05, 0.2, 3)),
                    float(rng.uniform(0.7, 1.5)),
                )
            )
    return out


def _smooth_noise(shape, rng: np.random.Generator, cell: int = 8) -> np.ndarray:
    h, w = shape
    coarse = rng.normal(size=(h // cell + 2, w // cell + 2))
    ys = np.arange(h) / cell
    xs = np.arange(w) / cell
    y0, x0 = ys.astype(int), xs.astype(int)
    fy, fx = (ys - y0)[:, None], (xs - x0)[None, :]
    c = coarse
    top = c[y0][:, x0] * (1 - fx) + c[y0][:, x0 + 1] * fx
    bot = c[y0 + 1][:, x0] * (1 - fx) + c[y0 + 1][:, x0 + 1] * fx
    return top * (1 - fy) + bot * fy


def make_scene(size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """One canonical-radiometry tile and its class map."""
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w]
    labels = np.zeros((h, w), dtype=np.int64)
    pixels = np.broadcast_to(BACKGROUND, (h, w, 3)).copy()
    pixels += 0.05 * _smooth_noise((h, w), rng)[..., None]

    for _ in range(rng.integers(1, 4)):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        for _ in range(rng.integers(2, 6)):
            r = rng.uniform(size * 0.05, size * 0.14)
            oy, ox = cy + rng.normal(0, r), cx + rng.normal(0, r)
            mask = (yy - oy) ** 2 + (xx - ox) ** 2 <= r * r
            labels[mask] = TREE
            pixels[mask] = TREE_COLOR

    for _ in range(rng.integers(1, 3)):
        width = rng.uniform(size * 0.04, size * 0.08)
        angle = rng.uniform(0, np.pi)
        py, px = rng.uniform(0, h), rng.uniform(0, w)
        dist = np.abs((yy - py) * np.cos(angle) - (xx - px) * np.sin(angle))
        mask = dist <= width / 2
        labels[mask] = ROAD
        pixels[mask] = ROAD_COLOR

    for _ in range(rng.integers(1, 5)):
        bh, bw = rng.integers(size // 10, size // 4, 2)
        y0, x0 = rng.integers(0, h - bh), rng.integers(0, w - bw)
        labels[y0 : y0 + bh, x0 : x0 + bw] = BUILDING
        pixels[y0 : y0 + bh, x0 : x0 + bw] = ROOF_COLORS[rng.integers(len(ROOF_COLORS))]

    pixels += rng.normal(0, 0.01, pixels.shape)
    return np.clip(pixels, 0.0, 1.0), labels


def make_synthetic(
    n_domains: int = 3, tiles: int = 200, size: int = 64, seed: int = 0
) -> list[list[DomainImage]]:
    """Domains that share every tile's geometry and labels but differ in radiometry."""
    if n_domains < 1:
        raise ValueError("need at least one domain")
    rng = np.random.default_rng(seed)
    looks = domain_radiometry(n_domains, rng)
    scenes = [make_scene(size, rng) for _ in range(tiles)]
    return [
        [
            DomainImage(look.apply(pix), lab.copy(), d, f"tile{t:04d}")
            for t, (pix, lab) in enumerate(scenes)
        ]
        for d, look in enumerate(looks)
    ]


def write_synthetic(out: str | os.PathLike, domains: list[list[DomainImage]]) -> Path:
    """Write the dataset layout and return the manifest path."""
    out = Path(out)
    names = [f"domain{d}" for d in range(len(domains))]
    for name, images in zip(names, domains):
        save_domain(out / name, images)
    manifest = out / "manifest.txt"
    write_manifest(manifest, names)
    return manifest
