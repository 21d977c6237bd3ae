"""Generator and discriminator building blocks.

One shared content encoder, one decoder, one discriminator with an adversarial
and a domain-classification head, and one style encoder per domain. Style is
injected once, by adaptive instance normalization of the content embedding.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import DimensionError, RegistryError

EPS = 1e-5
INIT_STD = 0.02


@dataclass
class ArchConfig:
    n_domains: int
    width: int = 64
    content_dim: Optional[int] = None
    in_channels: int = 3

    def __post_init__(self):
        if self.content_dim is None:
            self.content_dim = self.width

    @property
    def stride(self) -> int:
        return 4

    def to_dict(self) -> dict:
        return asdict(self)


class AdaINParams(NamedTuple):
    gamma: Tensor  # (..., K)
    beta: Tensor


class DiscriminatorOutput(NamedTuple):
    adv: Tensor  # (B, 1, h, w) least-squares scores
    logits: Tensor  # (B, n)


def instance_stats(x: Tensor, eps: float = EPS) -> tuple[Tensor, Tensor]:
    """Per-sample, per-channel spatial mean and stabilized std of ``x`` (B, K, h, w)."""
    mu = x.mean(dim=(-2, -1))
    var = x.var(dim=(-2, -1), unbiased=False)
    return mu, torch.sqrt(var + eps)


def adain(x: Tensor, params: AdaINParams, eps: float = EPS) -> Tensor:
    gamma, beta = params
    k = x.shape[1]
    if gamma.shape[-1] != k or beta.shape[-1] != k:
        raise DimensionError(f"AdaIN params of length {gamma.shape[-1]}/{beta.shape[-1]} for {k} channels")
    mu, sigma = instance_stats(x, eps)
    normed = (x - mu[..., None, None]) / sigma[..., None, None]
    if gamma.dim() == 1:
        gamma, beta = gamma[None], beta[None]
    return gamma[..., None, None] * normed + beta[..., None, None]


def init_weights(
    module: nn.Module, generator: Optional[torch.Generator] = None, std: float = INIT_STD
) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            with torch.no_grad():
                m.weight.normal_(0.0, std, generator=generator)
                if m.bias is not None:
                    m.bias.zero_()


class ContentEncoder(nn.Module):
    """7x7 conv, then two stride-2 convs; the last conv output is the embedding."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        w = cfg.width
        self.net = nn.Sequential(
            nn.Conv2d(cfg.in_channels, w, 7, padding=3, padding_mode="reflect"),
            nn.InstanceNorm2d(w),
            nn.ReLU(),
            nn.Conv2d(w, 2 * w, 4, stride=2, padding=1, padding_mode="reflect"),
            nn.InstanceNorm2d(2 * w),
            nn.ReLU(),
            nn.Conv2d(2 * w, cfg.content_dim, 4, stride=2, padding=1, padding_mode="reflect"),
        )
        self.stride = cfg.stride

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[-2:]
        if h % self.stride or w % self.stride:
            raise DimensionError(f"patch {h}x{w} not divisible by encoder stride {self.stride}")
        return self.net(x)


class StyleEncoder(nn.Module):
    """Four stride-2 convs, global average pooling, linear map to (gamma, beta).

    Gamma is predicted as an offset from 1 so an untrained encoder starts near
    plain instance normalization.
    """

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        w = cfg.width
        chans = [cfg.in_channels, w, 2 * w, 4 * w, 4 * w]
        layers: list[nn.Module] = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            layers += [nn.Conv2d(cin, cout, 4, stride=2, padding=1, padding_mode="reflect"), nn.ReLU()]
        self.trunk = nn.Sequential(*layers)
        self.fc = nn.Linear(chans[-1], 2 * cfg.content_dim)
        self.k = cfg.content_dim

    def forward(self, x: Tensor) -> AdaINParams:
        feat = self.trunk(x).mean(dim=(-2, -1))
        out = self.fc(feat)
        return AdaINParams(1.0 + out[:, : self.k], out[:, self.k :])


class Decoder(nn.Module):
    """Two transposed-conv blocks and one 7x7 conv with a sigmoid output."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        w = cfg.width
        self.k = cfg.content_dim
        self.net = nn.Sequential(
            nn.ConvTranspose2d(cfg.content_dim, 2 * w, 4, stride=2, padding=1),
            nn.ReLU(),
            nn.ConvTranspose2d(2 * w, w, 4, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(w, cfg.in_channels, 7, padding=3, padding_mode="reflect"),
            nn.Sigmoid(),
        )

    def forward(self, z: Tensor) -> Tensor:
        if z.shape[1] != self.k:
            raise DimensionError(f"decoder expects {self.k} channels, got {z.shape[1]}")
        return self.net(z)


class Discriminator(nn.Module):
    """Stride-2 conv trunk with a patch score map and a domain classifier."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        w = cfg.width
        chans = [cfg.in_channels, w, 2 * w, 4 * w, 8 * w]
        layers: list[nn.Module] = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            layers += [nn.Conv2d(cin, cout, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
        self.trunk = nn.Sequential(*layers)
        self.adv = nn.Conv2d(chans[-1], 1, 3, padding=1)
        self.cls = nn.Linear(chans[-1], cfg.n_domains)

    def forward(self, x: Tensor) -> DiscriminatorOutput:
        feat = self.trunk(x)
        return DiscriminatorOutput(self.adv(feat), self.cls(feat.mean(dim=(-2, -1))))


class StandardGAN(nn.Module):
    """All trainable parts: content encoder, decoder, discriminator, n style encoders."""

    def __init__(self, cfg: ArchConfig, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.cfg = cfg
        self.content_encoder = ContentEncoder(cfg)
        self.decoder = Decoder(cfg)
        self.style_encoders = nn.ModuleList(StyleEncoder(cfg) for _ in range(cfg.n_domains))
        self.discriminator = Discriminator(cfg)
        init_weights(self, generator)

    @property
    def n_domains(self) -> int:
        return self.cfg.n_domains

    def generator_parameters(self) -> list[nn.Parameter]:
        return [
            *self.content_encoder.parameters(),
            *self.decoder.parameters(),
            *self.style_encoders.parameters(),
        ]

    def discriminator_parameters(self) -> list[nn.Parameter]:
        return list(self.discriminator.parameters())

    def encode_content(self, x: Tensor) -> Tensor:
        return self.content_encoder(x)

    def encode_style(self, x: Tensor, domain_id: int) -> AdaINParams:
        if not 0 <= domain_id < self.n_domains:
            raise RegistryError(f"unknown domain id {domain_id} (n = {self.n_domains})")
        return self.style_encoders[domain_id](x)

    def decode(self, z: Tensor) -> Tensor:
        return self.decoder(z)

    def translate(self, x: Tensor, params: AdaINParams) -> Tensor:
        return self.decode(adain(self.encode_content(x), params))

    def discriminate(self, x: Tensor) -> DiscriminatorOutput:
        return self.discriminator(x)


def to_tensor(pixels, dtype=torch.float32) -> Tensor:
    """H x W x C array (or a batch of them) -> B x C x H x W tensor."""
    t = torch.as_tensor(pixels, dtype=dtype)
    if t.dim() == 3:
        t = t[None]
    return t.permute(0, 3, 1, 2).contiguous()


def to_numpy(t: Tensor):
    """B x C x H x W tensor -> B x H x W x C float64 array."""
    return t.detach().permute(0, 2, 3, 1).to(torch.float64).cpu().numpy()


def softmax_probs(out: DiscriminatorOutput) -> Tensor:
    return F.softmax(out.logits, dim=-1)
