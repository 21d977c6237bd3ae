"""Least-squares adversarial, domain classification and L1 reconstruction losses."""

from __future__ import annotations

from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F
from torch import Tensor


@dataclass(frozen=True)
class LossWeights:
    cross: float = 10.0
    self_recon: float = 10.0
    cls: float = 1.0
    adv: float = 1.0

    def __post_init__(self):
        if min(self.cross, self.self_recon, self.cls, self.adv) < 0:
            raise ValueError("loss weights must be non-negative")

    def scaled(self, c: float) -> "LossWeights":
        return LossWeights(self.cross * c, self.self_recon * c, self.cls * c, self.adv * c)


def _item(v) -> float:
    return v.detach().item() if isinstance(v, torch.Tensor) else float(v)


@dataclass
class LossBundle:
    """Scalar losses of one step; entries may be tensors still attached to the graph."""

    adv_G: Tensor
    adv_D: Tensor
    cls_G: Tensor
    cls_D: Tensor
    cross: Tensor
    self: Tensor
    total_G: Tensor
    total_D: Tensor

    def scalars(self) -> dict[str, float]:
        return {f.name: _item(getattr(self, f.name)) for f in fields(self)}

    def __add__(self, other: "LossBundle") -> "LossBundle":
        return LossBundle(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))


FIELDS = tuple(f.name for f in fields(LossBundle))


def lsgan_d_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    return ((d_real - 1) ** 2).mean() + (d_fake**2).mean()


def lsgan_g_loss(d_fake: Tensor) -> Tensor:
    return ((d_fake - 1) ** 2).mean()


def _class_nll(logits: Tensor, domain: int) -> Tensor:
    logits = torch.as_tensor(logits)
    if logits.dim() == 1:
        logits = logits[None]
    n = logits.shape[-1]
    if not 0 <= domain < n:
        raise IndexError(f"domain {domain} out of range for {n} classes")
    target = torch.full((logits.shape[0],), domain, dtype=torch.long)
    # log-softmax + NLL in one fused, overflow-safe op
    return F.cross_entropy(logits, target)


def cls_d_loss(logits: Tensor, true_domain: int) -> Tensor:
    """Negative log-probability of the true domain for a real patch."""
    return _class_nll(logits, true_domain)


def cls_g_loss(logits_of_fake: Tensor, target_domain: int) -> Tensor:
    """Negative log-probability that a generated patch is from the target domain."""
    return _class_nll(logits_of_fake, target_domain)


def recon_l1(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def total_g(cross, self_recon, cls_g, adv_g, w: LossWeights):
    return w.cross * cross + w.self_recon * self_recon + w.cls * cls_g + w.adv * adv_g


def total_d(cls_d, adv_d, w: LossWeights):
    return w.cls * cls_d + w.adv * adv_d


def make_bundle(adv_G, adv_D, cls_G, cls_D, cross, self_recon, w: LossWeights) -> LossBundle:
    return LossBundle(
        adv_G=adv_G,
        adv_D=adv_D,
        cls_G=cls_G,
        cls_D=cls_D,
        cross=cross,
        self=self_recon,
        total_G=total_g(cross, self_recon, cls_G, adv_G, w),
        total_D=total_d(cls_D, adv_D, w),
    )
