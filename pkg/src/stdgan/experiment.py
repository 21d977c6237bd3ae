"""Seeded desk-scale experiment on synthetic data.

Trains the GAN on three synthetic domains, standardizes them, and compares
a segmenter trained on raw sources against one trained on standardized
sources, both scored on the third domain.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .imaging import DomainImage, histogram_distance, mean_pairwise_distance, pooled_histogram
from .segmentation import SegConfig, evaluate_domain, train_segmenter
from .standardizer import average_params, edge_correlation, standardize_image
from .synthetic import make_synthetic
from .trainer import TrainConfig, TrainState, train

log = logging.getLogger(__name__)


@dataclass
class DeskSettings:
    seed: int = 7
    n_domains: int = 3
    tiles: int = 200
    size: int = 64
    patch_size: int = 64
    overlap: int = 8
    width: int = 16
    gan_epochs: int = 5
    gan_decay_epoch: int = 2
    seg_epochs: int = 35
    seg_batch_size: int = 32
    sources: tuple[int, ...] = (0, 1)
    target: int = 2

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            num_epochs=self.gan_epochs,
            decay_epoch=self.gan_decay_epoch,
            patch_size=self.patch_size,
            overlap=self.overlap,
            width=self.width,
            seed=self.seed,
        )

    def seg_config(self) -> SegConfig:
        return SegConfig(
            epochs=self.seg_epochs,
            batch_size=self.seg_batch_size,
            patch_size=self.patch_size,
            overlap=self.overlap,
            width=self.width,
            seed=self.seed,
        )


@dataclass
class StandardizationReport:
    raw_distance: float
    std_distance: float
    edge_correlation: np.ndarray  # per channel, mean over every standardized image
    twice_distance: float  # once- vs twice-standardized, all domains pooled
    raw_to_std_distance: float  # raw vs once-standardized, all domains pooled
    seconds: float

    @property
    def ratio(self) -> float:
        return self.std_distance / self.raw_distance


@dataclass
class SegmentationReport:
    raw: dict
    standardized: dict
    seconds: float = 0.0


@dataclass
class DeskResult:
    settings: DeskSettings
    standardization: StandardizationReport
    segmentation: Optional[SegmentationReport] = None
    state: Optional[TrainState] = field(default=None, repr=False)
    standardized: Optional[list[list[DomainImage]]] = field(default=None, repr=False)


def standardize_domains(state: TrainState, domains, patch_size: int, overlap: int) -> list[list[DomainImage]]:
    profile = average_params(state.ema)
    return [[standardize_image(im, profile, state.model, patch_size, overlap) for im in d] for d in domains]


def run_standardization(settings: DeskSettings, domains=None) -> DeskResult:
    torch.use_deterministic_algorithms(True)
    start = time.perf_counter()
    if domains is None:
        domains = make_synthetic(settings.n_domains, settings.tiles, settings.size, settings.seed)
    state = train(domains, settings.train_config())
    std = standardize_domains(state, domains, settings.patch_size, settings.overlap)
    raw_d = mean_pairwise_distance([pooled_histogram(d) for d in domains])
    std_d = mean_pairwise_distance([pooled_histogram(d) for d in std])
    edges = np.mean(
        [edge_correlation(a.pixels, b.pixels) for dr, ds in zip(domains, std) for a, b in zip(dr, ds)], axis=0
    )
    twice = standardize_domains(state, std, settings.patch_size, settings.overlap)
    pooled = [pooled_histogram([im for d in ds for im in d]) for ds in (domains, std, twice)]
    report = StandardizationReport(
        raw_d,
        std_d,
        edges,
        histogram_distance(pooled[1], pooled[2]),
        histogram_distance(pooled[0], pooled[1]),
        time.perf_counter() - start,
    )
    log.info("standardization: raw %.4f std %.4f edges %s", raw_d, std_d, edges)
    return DeskResult(settings, report, state=state, standardized=std)


def _scores(result) -> dict:
    return {**result.per_class_iou, "overall": result.overall_iou}


def run_segmentation(settings: DeskSettings, raw, standardized) -> SegmentationReport:
    start = time.perf_counter()
    cfg = settings.seg_config()
    out = {}
    for name, domains in (("raw", raw), ("standardized", standardized)):
        sources = [im for s in settings.sources for im in domains[s]]
        seg = train_segmenter(sources, cfg)
        result, _ = evaluate_domain(domains[settings.target], seg)
        out[name] = _scores(result)
        log.info("%s segmenter: %s", name, out[name])
    return SegmentationReport(out["raw"], out["standardized"], time.perf_counter() - start)


def desk_experiment(settings: Optional[DeskSettings] = None, segmentation: bool = True) -> DeskResult:
    settings = settings or DeskSettings()
    domains = make_synthetic(settings.n_domains, settings.tiles, settings.size, settings.seed)
    res = run_standardization(settings, domains)
    if segmentation:
        res.segmentation = run_segmentation(settings, domains, res.standardized)
    return res
