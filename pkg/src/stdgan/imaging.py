"""Image containers, patch tiling, channel histograms and dataset I/O."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .errors import ConsistencyError, DataError, DimensionError

VOID, BUILDING, ROAD, TREE = 0, 1, 2, 3
CLASS_NAMES = ("building", "road", "tree")
NUM_LABELS = 4

IMAGE_SUFFIXES = (".png", ".tif", ".tiff")


@dataclass
class DomainImage:
    """An H x W x C raster with values in [0, 1] and an optional class map."""

    pixels: np.ndarray
    labels: Optional[np.ndarray] = None
    domain_id: int = 0
    name: str = ""

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3:
            raise DimensionError(f"pixels must be H x W x C, got shape {self.pixels.shape}")
        if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise DataError("pixel values must lie in [0, 1]")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != self.pixels.shape[:2]:
                raise DimensionError(
                    f"labels shape {self.labels.shape} != pixel grid {self.pixels.shape[:2]}"
                )
            if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= NUM_LABELS):
                raise DataError("label values must be in {0, 1, 2, 3}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]

    def with_pixels(self, pixels: np.ndarray) -> "DomainImage":
        return DomainImage(pixels, self.labels, self.domain_id, self.name)


@dataclass(frozen=True)
class PatchGrid:
    patch_size: int
    overlap: int
    origins: tuple[tuple[int, int], ...]
    source_shape: tuple[int, int]

    @property
    def stride(self) -> int:
        return self.patch_size - self.overlap

    def __len__(self) -> int:
        return len(self.origins)


@dataclass
class ChannelHistogram:
    bins: int
    counts: np.ndarray = field(repr=False)  # (C, bins), rows sum to 1

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.bins + 1)


def axis_origins(dim: int, patch_size: int, overlap: int) -> list[int]:
    """Anchors along one axis; the last anchor snaps to ``dim - patch_size``."""
    if patch_size > dim:
        raise DimensionError(f"patch size {patch_size} exceeds dimension {dim}")
    if not 0 <= overlap < patch_size:
        raise ValueError(f"overlap must be in [0, {patch_size}), got {overlap}")
    stride = patch_size - overlap
    origins = list(range(0, dim - patch_size + 1, stride))
    if origins[-1] != dim - patch_size:
        origins.append(dim - patch_size)
    return origins


def extract_patches(image: DomainImage | np.ndarray, patch_size: int, overlap: int) -> PatchGrid:
    """Compute the tiling of ``image`` into square patches.

    Anchors advance by ``patch_size - overlap``. When the regular stride does
    not land on the border, one extra anchor is placed flush with it, so no
    padding is ever needed.
    """
    shape = image.shape[:2]
    h, w = shape
    if patch_size > min(h, w):
        raise DimensionError(f"image {h}x{w} is smaller than patch size {patch_size}")
    rows = axis_origins(h, patch_size, overlap)
    cols = axis_origins(w, patch_size, overlap)
    origins = tuple((r, c) for r in rows for c in cols)
    return PatchGrid(patch_size, overlap, origins, (h, w))


def crop_patches(array: np.ndarray, grid: PatchGrid) -> list[np.ndarray]:
    p = grid.patch_size
    return [array[r : r + p, c : c + p] for r, c in grid.origins]


def stitch(patches: Sequence[np.ndarray], grid: PatchGrid) -> np.ndarray:
    """Reassemble patches into the source raster, averaging overlaps."""
    if len(patches) != len(grid.origins):
        raise ConsistencyError(f"expected {len(grid.origins)} patches, got {len(patches)}")
    p = grid.patch_size
    first = np.asarray(patches[0])
    squeeze = first.ndim == 2
    k = 1 if squeeze else first.shape[2]
    h, w = grid.source_shape
    out = np.zeros((h, w, k), dtype=np.float64)
    count = np.zeros((h, w, 1), dtype=np.float64)
    for patch, (r, c) in zip(patches, grid.origins):
        patch = np.asarray(patch, dtype=np.float64)
        if squeeze:
            patch = patch[..., None]
        if patch.shape != (p, p, k):
            raise ConsistencyError(f"patch shape {patch.shape} does not match grid ({p}, {p}, {k})")
        region = out[r : r + p, c : c + p]
        n = count[r : r + p, c : c + p]
        n += 1.0
        # running mean: agreeing contributions reproduce the value bit-exactly
        region += (patch - region) / n
    return out[..., 0] if squeeze else out


def channel_histogram(image: DomainImage | np.ndarray, bins: int = 256) -> ChannelHistogram:
    """Per-channel normalized histogram over ``bins`` uniform bins of [0, 1]."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    pixels = image.pixels if isinstance(image, DomainImage) else np.asarray(image, dtype=np.float64)
    if pixels.ndim == 2:
        pixels = pixels[..., None]
    flat = pixels.reshape(-1, pixels.shape[-1])
    counts = np.stack(
        [np.histogram(flat[:, ch], bins=bins, range=(0.0, 1.0))[0] for ch in range(flat.shape[1])]
    ).astype(np.float64)
    counts /= counts.sum(axis=1, keepdims=True)
    return ChannelHistogram(bins, counts)


def pooled_histogram(images: Sequence[DomainImage], bins: int = 256) -> ChannelHistogram:
    """Histogram of all pixels of several images taken together."""
    stacked = np.concatenate([im.pixels.reshape(-1, im.pixels.shape[-1]) for im in images])
    return channel_histogram(stacked[:, None, :], bins)


def histogram_distance(a: ChannelHistogram, b: ChannelHistogram) -> float:
    """Mean over channels of the 1-Wasserstein distance between binned distributions."""
    if a.bins != b.bins or a.counts.shape != b.counts.shape:
        raise ConsistencyError("histograms must have equal bins and channels")
    cdf_gap = np.abs(np.cumsum(a.counts, axis=1) - np.cumsum(b.counts, axis=1))
    per_channel = cdf_gap.sum(axis=1) / a.bins
    return float(per_channel.mean())


def mean_pairwise_distance(histograms: Sequence[ChannelHistogram]) -> float:
    dists = [
        histogram_distance(histograms[i], histograms[j])
        for i in range(len(histograms))
        for j in range(i + 1, len(histograms))
    ]
    return float(np.mean(dists))


# -- file I/O -------------------------------------------------------------


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)


def read_image(path: str | os.PathLike) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_image(path: str | os.PathLike, pixels: np.ndarray) -> None:
    Image.fromarray(to_uint8(pixels), mode="RGB").save(path)


def read_labels(path: str | os.PathLike) -> np.ndarray:
    with Image.open(path) as im:
        # palette images keep their indices under mode "P"
        arr = np.asarray(im if im.mode in ("L", "P") else im.convert("L"))
    return arr.astype(np.int64)


def write_labels(path: str | os.PathLike, labels: np.ndarray) -> None:
    Image.fromarray(np.asarray(labels, dtype=np.uint8), mode="L").save(path)


@dataclass
class Domain:
    domain_id: int
    root: Path
    images: list[DomainImage]

    @property
    def name(self) -> str:
        return self.root.name

    @property
    def labeled(self) -> bool:
        return all(im.labels is not None for im in self.images)


def read_manifest(path: str | os.PathLike) -> list[Path]:
    """Domain directories listed one per line, relative to the manifest."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    dirs = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        d = Path(line)
        if not d.is_absolute():
            d = path.parent / d
        if not (d / "images").is_dir():
            raise DataError(f"domain directory lacks images/: {d}")
        dirs.append(d)
    if not dirs:
        raise DataError(f"manifest lists no domains: {path}")
    return dirs


def write_manifest(path: str | os.PathLike, domain_dirs: Sequence[str]) -> None:
    Path(path).write_text("".join(f"{d}\n" for d in domain_dirs))


def load_domain(root: str | os.PathLike, domain_id: int) -> Domain:
    root = Path(root)
    image_files = sorted(p for p in (root / "images").iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not image_files:
        raise DataError(f"domain {root} has no images")
    label_dir = root / "labels"
    images = []
    for f in image_files:
        labels = None
        if label_dir.is_dir():
            cand = label_dir / (f.stem + ".png")
            if cand.is_file():
                labels = read_labels(cand)
        images.append(DomainImage(read_image(f), labels, domain_id, f.stem))
    return Domain(domain_id, root, images)


def load_dataset(manifest: str | os.PathLike) -> list[Domain]:
    return [load_domain(d, i) for i, d in enumerate(read_manifest(manifest))]


def save_domain(root: str | os.PathLike, images: Sequence[DomainImage]) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    if any(im.labels is not None for im in images):
        (root / "labels").mkdir(exist_ok=True)
    for im in images:
        write_image(root / "images" / f"{im.name}.png", im.pixels)
        if im.labels is not None:
            write_labels(root / "labels" / f"{im.name}.png", im.labels)
