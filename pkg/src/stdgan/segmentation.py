"""Downstream U-net segmentation: training, patchwise prediction and IoU scoring."""

from __future__ import annotations

import csv
import logging
import math
import os
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch import Tensor, nn

from .errors import DataError, DimensionError
from .imaging import CLASS_NAMES, NUM_LABELS, VOID, DomainImage, crop_patches, extract_patches, stitch

log = logging.getLogger(__name__)

IGNORE = -100
# void black, building red, road green, tree white
PALETTE = [0, 0, 0, 255, 0, 0, 0, 255, 0, 255, 255, 255]


@dataclass
class SegConfig:
    epochs: int = 35
    lr: float = 0.0001
    betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int = 32
    patch_size: int = 256
    overlap: int = 32
    width: int = 64
    seed: int = 0
    classes: tuple[str, ...] = CLASS_NAMES

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.patch_size, self.width) <= 0 or self.lr <= 0:
            raise ValueError("segmentation settings must be positive")
        if tuple(self.classes) != CLASS_NAMES:
            raise ValueError(f"class list is fixed to {CLASS_NAMES}")
        self.betas = tuple(self.betas)
        self.classes = tuple(self.classes)


def _block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class UNet(nn.Module):
    """Four pooling stages down, four transposed-conv stages up, skip connections."""

    def __init__(self, in_channels: int = 3, n_classes: int = 3, width: int = 64):
        super().__init__()
        chans = [width * 2**i for i in range(5)]
        self.down = nn.ModuleList([_block(in_channels, chans[0])])
        self.down.extend(_block(chans[i], chans[i + 1]) for i in range(4))
        self.up = nn.ModuleList(nn.ConvTranspose2d(chans[i + 1], chans[i], 2, stride=2) for i in reversed(range(4)))
        self.merge = nn.ModuleList(_block(2 * chans[i], chans[i]) for i in reversed(range(4)))
        self.head = nn.Conv2d(chans[0], n_classes, 1)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] % 16 or x.shape[-2] % 16:
            raise DimensionError("U-net input sides must be multiples of 16")
        skips = []
        for i, block in enumerate(self.down):
            x = block(x if i == 0 else F.max_pool2d(x, 2))
            skips.append(x)
        x = skips.pop()
        for up, merge in zip(self.up, self.merge):
            x = merge(torch.cat([skips.pop(), up(x)], dim=1))
        return self.head(x)


@dataclass
class Segmenter:
    model: UNet
    cfg: SegConfig
    history: list[float] = field(default_factory=list)  # mean training loss per epoch


@dataclass
class SegmentationResult:
    per_class_iou: dict[str, Optional[float]]
    overall_iou: float
    confusion: np.ndarray  # rows truth, cols prediction, labels 0..3
    prediction: Optional[np.ndarray] = None


# -- augmentation -------------------------------------------------------------


def dihedral(x: Tensor, rot: int, flip: bool) -> Tensor:
    """Rotate the last two axes by ``rot`` quarter turns, then optionally mirror horizontally."""
    x = torch.rot90(x, rot, dims=(-2, -1))
    return torch.flip(x, dims=(-1,)) if flip else x


def augment(pixels: Tensor, labels: Tensor, rng: torch.Generator) -> tuple[Tensor, Tensor]:
    """Random right-angle rotation and horizontal flip, applied identically to both rasters.

    ``pixels`` is (..., H, W) and ``labels`` (..., H, W).
    """
    if pixels.shape[-1] != pixels.shape[-2]:
        raise DimensionError("augmentation needs square patches")
    rot = int(torch.randint(4, (1,), generator=rng))
    flip = bool(torch.randint(2, (1,), generator=rng))
    return dihedral(pixels, rot, flip), dihedral(labels, rot, flip)


# -- training -------------------------------------------------------------


def _patches(sources: Sequence[DomainImage], cfg: SegConfig) -> tuple[Tensor, Tensor]:
    xs, ys = [], []
    for im in sources:
        if im.labels is None:
            raise DataError(f"source image {im.name or '?'} has no labels")
        grid = extract_patches(im, cfg.patch_size, cfg.overlap)
        xs.extend(crop_patches(im.pixels, grid))
        ys.extend(crop_patches(im.labels, grid))
    x = torch.from_numpy(np.stack(xs).astype(np.float32)).permute(0, 3, 1, 2).contiguous()
    y = torch.from_numpy(np.stack(ys).astype(np.int64))
    if y.min() < 0 or y.max() >= NUM_LABELS:
        raise DataError("label values outside {0, 1, 2, 3}")
    return x, y


def to_targets(labels: Tensor) -> Tensor:
    """Shift foreground classes to 0..2 and mark void as ignored."""
    return torch.where(labels == VOID, torch.full_like(labels, IGNORE), labels - 1)


def train_segmenter(sources: Sequence[DomainImage], cfg: SegConfig) -> Segmenter:
    """Masked pixelwise cross-entropy training with online dihedral augmentation."""
    if not sources:
        raise DataError("no source images")
    x_all, y_all = _patches(sources, cfg)
    rng = torch.Generator().manual_seed(cfg.seed)
    model = UNet(x_all.shape[1], len(CLASS_NAMES), cfg.width)
    _kaiming_init(model, rng)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=cfg.betas)
    n = len(x_all)
    seg = Segmenter(model, cfg)
    for epoch in range(cfg.epochs):
        model.train()
        order = torch.randperm(n, generator=rng)
        total, count = 0.0, 0
        for b in range(math.ceil(n / cfg.batch_size)):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            pairs = [augment(x_all[i], y_all[i], rng) for i in idx.tolist()]
            x = torch.stack([p[0] for p in pairs])
            y = to_targets(torch.stack([p[1] for p in pairs]))
            if not (y != IGNORE).any():
                continue
            loss = F.cross_entropy(model(x), y, ignore_index=IGNORE)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        seg.history.append(total / max(count, 1))
        log.info("segmenter epoch %d/%d loss %.4f", epoch + 1, cfg.epochs, seg.history[-1])
    model.eval()
    return seg


def _kaiming_init(model: nn.Module, rng: torch.Generator) -> None:
    for m in model.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            fan_in = m.weight[0].numel() if isinstance(m, nn.Conv2d) else m.weight.shape[0] * m.weight[0, 0].numel()
            with torch.no_grad():
                m.weight.normal_(0.0, math.sqrt(2.0 / fan_in), generator=rng)
                m.bias.zero_()


# -- inference ------------------------------------------------------------


@torch.no_grad()
def predict_proba(image: DomainImage, seg: Segmenter, batch_size: int = 16) -> np.ndarray:
    """Class probabilities (H, W, 3), averaged over overlapping patches."""
    model, cfg = seg.model, seg.cfg
    model.eval()
    grid = extract_patches(image, cfg.patch_size, cfg.overlap)
    crops = crop_patches(image.pixels, grid)
    probs = []
    for start in range(0, len(crops), batch_size):
        x = torch.from_numpy(np.stack(crops[start : start + batch_size]).astype(np.float32)).permute(0, 3, 1, 2)
        probs.extend(F.softmax(model(x), dim=1).permute(0, 2, 3, 1).double().numpy())
    return stitch(probs, grid)


def predict(image: DomainImage, seg: Segmenter) -> np.ndarray:
    """Per-pixel class map with values in {1, 2, 3}."""
    return np.argmax(predict_proba(image, seg), axis=-1) + 1


def evaluate(prediction: np.ndarray, truth: np.ndarray) -> SegmentationResult:
    """Per-class IoU over non-void truth pixels; overall is the mean of defined class IoUs."""
    prediction = np.asarray(prediction, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if prediction.shape != truth.shape:
        raise DimensionError(f"prediction {prediction.shape} vs truth {truth.shape}")
    valid = truth != VOID
    confusion = np.bincount(
        truth[valid] * NUM_LABELS + np.clip(prediction[valid], 0, NUM_LABELS - 1),
        minlength=NUM_LABELS * NUM_LABELS,
    ).reshape(NUM_LABELS, NUM_LABELS)
    per_class: dict[str, Optional[float]] = {}
    for c, name in enumerate(CLASS_NAMES, start=1):
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = confusion[c, :].sum() - tp
        denom = tp + fp + fn
        if denom == 0:
            warnings.warn(f"class {name} absent from prediction and truth; IoU undefined", RuntimeWarning)
            per_class[name] = None
        else:
            per_class[name] = float(tp / denom)
    return SegmentationResult(per_class, overall_iou(per_class.values()), confusion, prediction)


def overall_iou(values) -> float:
    """Unweighted mean of the defined class scores."""
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else float("nan")


def evaluate_domain(
    images: Sequence[DomainImage], seg: Segmenter
) -> tuple[SegmentationResult, list[np.ndarray]]:
    """Score a whole domain by pooling every image's confusion counts."""
    preds = [predict(im, seg) for im in images]
    for im in images:
        if im.labels is None:
            raise DataError(f"target image {im.name or '?'} has no labels")
    pred = np.concatenate([p.ravel() for p in preds])
    truth = np.concatenate([im.labels.ravel() for im in images])
    result = evaluate(pred, truth)
    result.prediction = None
    return result, preds


# -- persistence and reports ----------------------------------------------


def save_segmenter(path: str | os.PathLike, seg: Segmenter) -> None:
    cfg = asdict(seg.cfg)
    torch.save({"config": cfg, "state": seg.model.state_dict(), "history": seg.history}, path)


def load_segmenter(path: str | os.PathLike) -> Segmenter:
    payload = torch.load(path, weights_only=True)
    cfg = SegConfig(**payload["config"])
    model = UNet(3, len(CLASS_NAMES), cfg.width)
    model.load_state_dict(payload["state"])
    model.eval()
    return Segmenter(model, cfg, list(payload["history"]))


RESULT_COLUMNS = ("method", "building", "road", "tree", "overall")


def result_row(method: str, res: SegmentationResult) -> list[str]:
    """One results-table row, IoUs in percent at full precision."""
    vals = [res.per_class_iou[c] for c in CLASS_NAMES]
    return [method, *("" if v is None else repr(100 * v) for v in vals), repr(100 * res.overall_iou)]


def write_results(path: str | os.PathLike, rows: Sequence[Sequence[str]]) -> None:
    """Write the results table; ``rows`` come from :func:`result_row`."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        writer.writerows(rows)


def read_results(path: str | os.PathLike) -> list[list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != RESULT_COLUMNS:
        raise DataError(f"{path} is not a results table")
    return rows[1:]


def write_prediction(path: str | os.PathLike, classes: np.ndarray) -> None:
    im = Image.fromarray(np.asarray(classes, dtype=np.uint8), mode="P")
    im.putpalette(PALETTE)
    im.save(path)
