"""Inference with trained weights: standardization and cross-domain style transfer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from .errors import ConsistencyError, DataError, RegistryError
from .imaging import DomainImage, crop_patches, extract_patches, stitch
from .networks import AdaINParams, StandardGAN, adain
from .trainer import EMAState


@dataclass(frozen=True)
class StandardizationProfile:
    gamma_avg: np.ndarray
    beta_avg: np.ndarray
    n_domains: int
    checkpoint: str = ""

    def __post_init__(self):
        if self.gamma_avg.shape != self.beta_avg.shape:
            raise ValueError("gamma and beta lengths differ")
        if not (np.all(np.isfinite(self.gamma_avg)) and np.all(np.isfinite(self.beta_avg))):
            raise ValueError("profile contains non-finite values")

    @property
    def k(self) -> int:
        return self.gamma_avg.shape[0]


def average_params(ema: EMAState, checkpoint: str = "") -> StandardizationProfile:
    """Elementwise mean of the global parameters of the participating domains."""
    active = ema.active if ema.active is not None else np.ones(ema.n_domains, bool)
    if ema.n_domains == 0 or not active.any():
        raise DataError("no domains to average")
    return StandardizationProfile(
        ema.gamma[active].mean(axis=0), ema.beta[active].mean(axis=0), ema.n_domains, checkpoint
    )


def _params(gamma: np.ndarray, beta: np.ndarray, dtype) -> AdaINParams:
    return AdaINParams(torch.as_tensor(gamma, dtype=dtype), torch.as_tensor(beta, dtype=dtype))


@torch.no_grad()
def render(
    image: DomainImage,
    params: AdaINParams,
    model: StandardGAN,
    patch_size: int,
    overlap: int,
    batch_size: int = 16,
) -> DomainImage:
    """Decode every patch of ``image`` with fixed AdaIN parameters and stitch the result."""
    k = model.cfg.content_dim
    if params.gamma.shape[-1] != k:
        raise ConsistencyError(f"parameters of length {params.gamma.shape[-1]} for a model with K = {k}")
    model.eval()
    dtype = next(model.parameters()).dtype
    grid = extract_patches(image, patch_size, overlap)
    crops = crop_patches(image.pixels, grid)
    out = []
    for start in range(0, len(crops), batch_size):
        x = torch.as_tensor(np.stack(crops[start : start + batch_size]), dtype=dtype).permute(0, 3, 1, 2)
        y = model.decode(adain(model.encode_content(x), params))
        out.extend(y.permute(0, 2, 3, 1).to(torch.float64).numpy())
    pixels = np.clip(stitch(out, grid), 0.0, 1.0)
    return DomainImage(pixels, image.labels, image.domain_id, image.name)


def standardize_image(
    image: DomainImage,
    profile: StandardizationProfile,
    model: StandardGAN,
    patch_size: int,
    overlap: int,
) -> DomainImage:
    dtype = next(model.parameters()).dtype
    return render(image, _params(profile.gamma_avg, profile.beta_avg, dtype), model, patch_size, overlap)


def style_transfer_image(
    image: DomainImage,
    target_domain: int,
    ema: EMAState,
    model: StandardGAN,
    patch_size: int,
    overlap: int,
) -> DomainImage:
    """Re-render ``image`` with the global style of ``target_domain``."""
    if not 0 <= target_domain < ema.n_domains:
        raise RegistryError(f"unknown domain id {target_domain}")
    gamma, beta = ema.params(target_domain)
    dtype = next(model.parameters()).dtype
    return render(image, _params(gamma, beta, dtype), model, patch_size, overlap)


def style_matrix(
    samples: Sequence[DomainImage],
    ema: EMAState,
    model: StandardGAN,
    patch_size: int,
    overlap: int,
    profile: Optional[StandardizationProfile] = None,
) -> list[list[DomainImage]]:
    """Row i holds sample i rendered in every domain's style; an extra column with ``profile``."""
    rows = []
    for im in samples:
        row = [style_transfer_image(im, j, ema, model, patch_size, overlap) for j in range(ema.n_domains)]
        if profile is not None:
            row.append(standardize_image(im, profile, model, patch_size, overlap))
        rows.append(row)
    return rows


def gradient_magnitude(pixels: np.ndarray) -> np.ndarray:
    gy, gx = np.gradient(pixels, axis=(0, 1))
    return np.hypot(gy, gx)


def edge_correlation(before: np.ndarray, after: np.ndarray) -> np.ndarray:
    """Per-channel Pearson correlation of gradient-magnitude maps."""
    ga, gb = gradient_magnitude(before), gradient_magnitude(after)
    out = []
    for c in range(ga.shape[-1]):
        a, b = ga[..., c].ravel(), gb[..., c].ravel()
        a, b = a - a.mean(), b - b.mean()
        denom = np.sqrt((a * a).sum() * (b * b).sum())
        out.append((a * b).sum() / denom if denom > 0 else 0.0)
    return np.array(out)
