"""Classical standardization baselines: Z-score, gray-world, histogram equalization."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .imaging import DomainImage

LEVELS = 256
ZSCORE_RANGE = 3.0


@dataclass(frozen=True)
class ZScoreStats:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.sigma) < 0):
            raise ValueError("sigma must be non-negative")


def _as_pixels(image) -> np.ndarray:
    if isinstance(image, DomainImage):
        return image.pixels
    return np.asarray(image, dtype=np.float64)


def zscore_stats(images: Sequence[DomainImage | np.ndarray]) -> ZScoreStats:
    """Per-channel mean and population std over every pixel of a domain."""
    flat = np.concatenate([_as_pixels(im).reshape(-1, _as_pixels(im).shape[-1]) for im in images])
    return ZScoreStats(flat.mean(axis=0), flat.std(axis=0))


def zscore_normalize(image: DomainImage | np.ndarray, stats: ZScoreStats | None = None) -> np.ndarray:
    """Return ``(x - mu) / sigma`` per channel.

    Without ``stats`` the image's own statistics are used (per-image mode).
    A zero sigma is replaced by 1 so a constant channel maps to zeros.
    """
    pixels = _as_pixels(image)
    if stats is None:
        stats = zscore_stats([pixels])
    sigma = np.array(stats.sigma, dtype=np.float64)
    if np.any(sigma == 0):
        warnings.warn("zero standard deviation in a channel; using sigma = 1", RuntimeWarning)
        sigma[sigma == 0] = 1.0
    return (pixels - stats.mu) / sigma


def zscore_to_unit(z: np.ndarray) -> np.ndarray:
    """Fixed affine map of Z-scores into [0, 1]; +-3 sigma spans the interval."""
    return np.clip((z + ZSCORE_RANGE) / (2 * ZSCORE_RANGE), 0.0, 1.0)


def channel_means(images: Sequence[DomainImage | np.ndarray]) -> np.ndarray:
    flat = np.concatenate([_as_pixels(im).reshape(-1, _as_pixels(im).shape[-1]) for im in images])
    return flat.mean(axis=0)


def gray_world_gains(means: np.ndarray) -> np.ndarray:
    means = np.asarray(means, dtype=np.float64)
    gains = np.ones_like(means)
    dark = means == 0
    if np.any(dark):
        warnings.warn("channel with zero mean; leaving its gain at 1", RuntimeWarning)
    gains[~dark] = means.mean() / means[~dark]
    return gains


def gray_world(
    image: DomainImage | np.ndarray, means: Optional[np.ndarray] = None, clip: bool = True
) -> DomainImage | np.ndarray:
    """Scale channels so their means match the mean of channel means.

    ``means`` lets a whole domain share one set of gains.
    """
    pixels = _as_pixels(image)
    if pixels.shape[-1] != 3:
        raise ValueError("gray-world expects 3 channels")
    if means is None:
        means = pixels.reshape(-1, 3).mean(axis=0)
    out = pixels * gray_world_gains(means)
    if clip:
        out = np.clip(out, 0.0, 1.0)
    if isinstance(image, DomainImage):
        return image.with_pixels(out)
    return out


def quantize(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(pixels * (LEVELS - 1)), 0, LEVELS - 1).astype(np.int64)


def level_counts(images: Sequence[DomainImage | np.ndarray]) -> np.ndarray:
    """Per-channel occurrence counts of the 256 quantized levels, shape (C, 256)."""
    total = None
    for im in images:
        q = quantize(_as_pixels(im))
        counts = np.stack(
            [np.bincount(q[..., c].ravel(), minlength=LEVELS) for c in range(q.shape[-1])]
        )
        total = counts if total is None else total + counts
    return total


def equalization_lut(counts: np.ndarray) -> Optional[np.ndarray]:
    """Level -> [0, 1] lookup for one channel, or ``None`` for a constant channel."""
    cdf = np.cumsum(counts) / counts.sum()
    cdf_min = cdf[np.flatnonzero(counts)[0]]
    if cdf_min >= 1.0:
        return None
    return np.clip((cdf - cdf_min) / (1.0 - cdf_min), 0.0, 1.0)


def hist_equalize(
    image: DomainImage | np.ndarray, counts: Optional[np.ndarray] = None
) -> DomainImage | np.ndarray:
    """Per-channel histogram equalization over 256 levels.

    ``counts`` (from :func:`level_counts`) lets a domain share one mapping.
    """
    pixels = _as_pixels(image)
    if counts is None:
        counts = level_counts([pixels])
    q = quantize(pixels)
    out = np.empty_like(pixels)
    for c in range(pixels.shape[-1]):
        lut = equalization_lut(counts[c])
        if lut is None:
            warnings.warn(f"channel {c} is constant; left unchanged", RuntimeWarning)
            out[..., c] = pixels[..., c]
        else:
            out[..., c] = lut[q[..., c]]
    if isinstance(image, DomainImage):
        return image.with_pixels(out)
    return out


def apply_baseline(method: str, images: Sequence[DomainImage], per_image: bool = False) -> list[DomainImage]:
    """Apply one baseline to a domain; statistics are pooled over the domain by default."""
    if method == "zscore":
        stats = None if per_image else zscore_stats(images)
        return [im.with_pixels(zscore_to_unit(zscore_normalize(im, stats))) for im in images]
    if method == "grayworld":
        means = None if per_image else channel_means(images)
        return [gray_world(im, means) for im in images]
    if method == "histeq":
        counts = None if per_image else level_counts(images)
        return [hist_equalize(im, counts) for im in images]
    raise ValueError(f"unknown baseline method {method!r}")


METHODS = ("zscore", "grayworld", "histeq")
