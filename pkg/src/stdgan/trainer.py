"""Multi-domain adversarial training over all domain pairs."""

from __future__ import annotations

import io
import json
import logging
import os
import struct
from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import torch
from torch import Tensor

from . import losses as L
from .errors import CheckpointError, ConfigError, DataError, RegistryError
from .imaging import DomainImage, crop_patches, extract_patches
from .networks import AdaINParams, ArchConfig, StandardGAN, adain

log = logging.getLogger(__name__)

EMA_DECAY = 0.95
CKPT_MAGIC = b"STDGANCK"
CKPT_VERSION = "1.0.0"


@dataclass
class TrainConfig:
    num_epochs: int = 20
    decay_epoch: int = 10
    init_lr: float = 0.0002
    betas: tuple[float, float] = (0.5, 0.999)
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    patch_size: int = 256
    overlap: int = 32
    seed: int = 0
    width: int = 64
    content_dim: Optional[int] = None
    iterations_per_epoch: Optional[int] = None  # default: largest domain's patch count
    held_out: tuple[int, ...] = ()  # domains kept out of pair training and the average

    def __post_init__(self):
        if not 0 < self.decay_epoch < self.num_epochs:
            raise ConfigError(f"need 0 < decay_epoch < num_epochs, got {self.decay_epoch}, {self.num_epochs}")
        if self.init_lr <= 0:
            raise ConfigError("init_lr must be positive")
        if not 0 <= self.overlap < self.patch_size:
            raise ConfigError("overlap must be in [0, patch_size)")
        if isinstance(self.weights, dict):
            self.weights = L.LossWeights(**self.weights)
        self.betas = tuple(self.betas)
        self.held_out = tuple(self.held_out)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["held_out"] = list(self.held_out)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    def arch(self, n_domains: int) -> ArchConfig:
        return ArchConfig(n_domains=n_domains, width=self.width, content_dim=self.content_dim)


@dataclass
class EMAState:
    """Per-domain global AdaIN parameters and their arithmetic average."""

    gamma: np.ndarray  # (n, K)
    beta: np.ndarray
    active: np.ndarray = None  # (n,) bool, domains included in the average
    gamma_avg: np.ndarray = field(init=False)
    beta_avg: np.ndarray = field(init=False)

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.gamma.shape != self.beta.shape:
            raise ValueError("gamma and beta shapes differ")
        if self.active is None:
            self.active = np.ones(self.gamma.shape[0], dtype=bool)
        self.active = np.asarray(self.active, dtype=bool)
        self._refresh()

    def _refresh(self):
        if self.active.any():
            self.gamma_avg = self.gamma[self.active].mean(axis=0)
            self.beta_avg = self.beta[self.active].mean(axis=0)
        else:
            self.gamma_avg = np.zeros(self.gamma.shape[1:])
            self.beta_avg = np.zeros(self.beta.shape[1:])

    @classmethod
    def zeros(cls, n: int, k: int, held_out: Iterable[int] = ()) -> "EMAState":
        active = np.ones(n, dtype=bool)
        active[list(held_out)] = False
        return cls(np.zeros((n, k)), np.zeros((n, k)), active)

    @property
    def n_domains(self) -> int:
        return self.gamma.shape[0]

    @property
    def k(self) -> int:
        return self.gamma.shape[1]

    def params(self, domain: int) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= domain < self.n_domains:
            raise RegistryError(f"unknown domain id {domain}")
        return self.gamma[domain], self.beta[domain]

    def to_dict(self) -> dict:
        return {"gamma": self.gamma.tolist(), "beta": self.beta.tolist(), "active": self.active.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "EMAState":
        return cls(np.array(d["gamma"]), np.array(d["beta"]), np.array(d["active"]))


def ema_update(state: EMAState, domain: int, current: AdaINParams) -> EMAState:
    """Return a new state with ``p <- 0.95 p + 0.05 p_current`` for one domain."""
    if not 0 <= domain < state.n_domains:
        raise RegistryError(f"unknown domain id {domain}")
    gamma_cur = np.asarray(torch.as_tensor(current.gamma).detach().reshape(-1), dtype=np.float64)
    beta_cur = np.asarray(torch.as_tensor(current.beta).detach().reshape(-1), dtype=np.float64)
    if gamma_cur.shape[0] != state.k or beta_cur.shape[0] != state.k:
        raise ValueError(f"expected parameter vectors of length {state.k}")
    gamma = state.gamma.copy()
    beta = state.beta.copy()
    gamma[domain] = EMA_DECAY * gamma[domain] + (1 - EMA_DECAY) * gamma_cur
    beta[domain] = EMA_DECAY * beta[domain] + (1 - EMA_DECAY) * beta_cur
    return EMAState(gamma, beta, state.active.copy())


def lr_at(epoch_no: int, cfg: TrainConfig) -> float:
    """Constant rate up to ``decay_epoch``, then linear decay reaching 0 at ``num_epochs``."""
    if not 1 <= epoch_no <= cfg.num_epochs:
        raise ConfigError(f"epoch {epoch_no} outside [1, {cfg.num_epochs}]")
    if epoch_no <= cfg.decay_epoch:
        return cfg.init_lr
    return cfg.init_lr * (cfg.num_epochs - epoch_no) / (cfg.num_epochs - cfg.decay_epoch)


def training_lr(epoch: int, cfg: TrainConfig) -> float:
    """Rate used while running 1-based ``epoch``: the schedule at the completed-epoch count."""
    done = epoch - 1
    return cfg.init_lr if done <= cfg.decay_epoch else lr_at(done, cfg)


def domain_pairs(n: int, held_out: Iterable[int] = ()) -> list[tuple[int, int]]:
    skip = set(held_out)
    return [(i, j) for i, j in combinations(range(n), 2) if i not in skip and j not in skip]


# -- per-pair losses --------------------------------------------------------


@dataclass
class DomainFeatures:
    x: Tensor
    content: Tensor
    style: AdaINParams
    real: object  # DiscriminatorOutput


def domain_features(model: StandardGAN, x: Tensor, domain: int) -> DomainFeatures:
    return DomainFeatures(x, model.encode_content(x), model.encode_style(x, domain), model.discriminate(x))


def pair_losses(
    model: StandardGAN, i: int, j: int, a: DomainFeatures, b: DomainFeatures, w: L.LossWeights
) -> L.LossBundle:
    """Both translation directions between domains ``i`` (A) and ``j`` (B), summed."""
    fake_b = model.decode(adain(a.content, b.style))  # A's content in B's style
    fake_a = model.decode(adain(b.content, a.style))
    cyc_a = model.translate(fake_b, a.style)  # A''
    cyc_b = model.translate(fake_a, b.style)
    self_a = model.decode(adain(a.content, a.style))  # A'
    self_b = model.decode(adain(b.content, b.style))
    d_fake_b = model.discriminate(fake_b)
    d_fake_a = model.discriminate(fake_a)

    adv_D = L.lsgan_d_loss(b.real.adv, d_fake_b.adv) + L.lsgan_d_loss(a.real.adv, d_fake_a.adv)
    adv_G = L.lsgan_g_loss(d_fake_b.adv) + L.lsgan_g_loss(d_fake_a.adv)
    cls_D = L.cls_d_loss(a.real.logits, i) + L.cls_d_loss(b.real.logits, j)
    cls_G = L.cls_g_loss(d_fake_b.logits, j) + L.cls_g_loss(d_fake_a.logits, i)
    cross = L.recon_l1(a.x, cyc_a) + L.recon_l1(b.x, cyc_b)
    self_recon = L.recon_l1(a.x, self_a) + L.recon_l1(b.x, self_b)
    return L.make_bundle(adv_G, adv_D, cls_G, cls_D, cross, self_recon, w)


def pairwise_step(
    model: StandardGAN, i: int, j: int, patches: Sequence[Tensor], w: L.LossWeights = L.LossWeights()
) -> L.LossBundle:
    """Losses for one domain pair; ``patches[d]`` is a (B, C, H, W) batch from domain ``d``.

    Gradients are left to the caller.
    """
    if i == j:
        raise ValueError("a pair step needs two distinct domains")
    return pair_losses(
        model, i, j, domain_features(model, patches[i], i), domain_features(model, patches[j], j), w
    )


def iteration_losses(
    model: StandardGAN, patches: Sequence[Tensor], w: L.LossWeights, held_out: Iterable[int] = ()
) -> tuple[list[tuple[int, int]], list[L.LossBundle], list[DomainFeatures]]:
    pairs = domain_pairs(model.n_domains, held_out)
    skip = set(held_out)
    feats = [
        None if d in skip else domain_features(model, patches[d], d) for d in range(model.n_domains)
    ]
    bundles = [pair_losses(model, i, j, feats[i], feats[j], w) for i, j in pairs]
    return pairs, bundles, feats


# -- training ---------------------------------------------------------------


def patch_tensor(images: Sequence[DomainImage | np.ndarray], patch_size: int, overlap: int) -> Tensor:
    """Tile every image of a domain and stack the patches as (N, C, p, p)."""
    crops = []
    for im in images:
        pixels = im.pixels if isinstance(im, DomainImage) else np.asarray(im)
        crops.extend(crop_patches(pixels, extract_patches(pixels, patch_size, overlap)))
    arr = np.stack(crops).astype(np.float32)
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()


@dataclass
class TrainState:
    model: StandardGAN
    ema: EMAState
    cfg: TrainConfig
    epoch: int
    opt_G: torch.optim.Optimizer
    opt_D: torch.optim.Optimizer
    rng: torch.Generator


def new_state(cfg: TrainConfig, n_domains: int) -> TrainState:
    rng = torch.Generator().manual_seed(cfg.seed)
    model = StandardGAN(cfg.arch(n_domains), generator=rng)
    opt_G = torch.optim.Adam(model.generator_parameters(), lr=cfg.init_lr, betas=cfg.betas)
    opt_D = torch.optim.Adam(model.discriminator_parameters(), lr=cfg.init_lr, betas=cfg.betas)
    ema = EMAState.zeros(n_domains, model.cfg.content_dim, cfg.held_out)
    return TrainState(model, ema, cfg, 0, opt_G, opt_D, rng)


def train_iteration(state: TrainState, data: Sequence[Tensor]) -> tuple[list[tuple[int, int]], list[L.LossBundle]]:
    """Sample one patch per domain, accumulate losses over all pairs, apply one update each for G and D."""
    model, cfg = state.model, state.cfg
    batch = []
    for d in range(model.n_domains):
        idx = int(torch.randint(len(data[d]), (1,), generator=state.rng))
        batch.append(data[d][idx : idx + 1])
    pairs, bundles, feats = iteration_losses(model, batch, cfg.weights, cfg.held_out)
    loss_g = sum(b.total_G for b in bundles)
    loss_d = sum(b.total_D for b in bundles)

    g_params = model.generator_parameters()
    d_params = model.discriminator_parameters()
    # both gradients taken at the same weights, then applied together
    grads_g = torch.autograd.grad(loss_g, g_params, retain_graph=True, allow_unused=True)
    grads_d = torch.autograd.grad(loss_d, d_params, allow_unused=True)
    for p, g in zip(g_params, grads_g):
        p.grad = g
    for p, g in zip(d_params, grads_d):
        p.grad = g
    state.opt_G.step()
    state.opt_D.step()

    ema = state.ema
    for d, f in enumerate(feats):
        if f is not None:
            ema = ema_update(ema, d, AdaINParams(f.style.gamma[0], f.style.beta[0]))
    state.ema = ema
    return pairs, [
        L.LossBundle(**{k: v.detach() for k, v in b.__dict__.items()}) for b in bundles
    ]


def iterations_per_epoch(data: Sequence[Tensor], cfg: TrainConfig) -> int:
    if cfg.iterations_per_epoch is not None:
        return cfg.iterations_per_epoch
    return max(len(x) for x in data)


def train(
    domains: Sequence[Sequence[DomainImage] | Tensor],
    cfg: TrainConfig,
    run_dir: Optional[str | os.PathLike] = None,
    resume: Optional[str | os.PathLike] = None,
    on_record: Optional[Callable[[dict], None]] = None,
) -> TrainState:
    """Train on ``domains`` (image lists or pre-tiled patch tensors).

    With ``run_dir`` set, a JSON-lines loss log and one checkpoint per epoch
    are written there. ``resume`` continues from a checkpoint, keeping its
    epoch counter, optimizer moments and sampler state; the stored config
    takes precedence over ``cfg``.
    """
    if len(domains) < 2:
        raise ConfigError("training needs at least two domains")
    data = []
    for d, dom in enumerate(domains):
        x = dom if isinstance(dom, Tensor) else (
            patch_tensor(dom, cfg.patch_size, cfg.overlap) if len(dom) else torch.empty(0)
        )
        if len(x) == 0:
            raise DataError(f"domain {d} has no patches")
        data.append(x)

    if resume is not None:
        state = load_checkpoint(resume)
        if state.model.n_domains != len(data):
            raise CheckpointError(
                f"checkpoint has {state.model.n_domains} domains, dataset has {len(data)}"
            )
    else:
        state = new_state(cfg, len(data))
    cfg = state.cfg
    if len(domain_pairs(len(data), cfg.held_out)) == 0:
        raise ConfigError("no domain pairs left to train")

    run_path = Path(run_dir) if run_dir is not None else None
    log_file = None
    if run_path is not None:
        run_path.mkdir(parents=True, exist_ok=True)
        log_file = open(run_path / "train_log.jsonl", "a" if resume else "w")

    n_iter = iterations_per_epoch(data, cfg)
    try:
        for epoch in range(state.epoch + 1, cfg.num_epochs + 1):
            lr = training_lr(epoch, cfg)
            for opt in (state.opt_G, state.opt_D):
                for group in opt.param_groups:
                    group["lr"] = lr
            for it in range(n_iter):
                pairs, bundles = train_iteration(state, data)
                for (i, j), b in zip(pairs, bundles):
                    rec = {"epoch": epoch, "iteration": it, "pair": [i, j], "lr": lr, **b.scalars()}
                    if log_file is not None:
                        log_file.write(json.dumps(rec) + "\n")
                    if on_record is not None:
                        on_record(rec)
            state.epoch = epoch
            log.info("epoch %d/%d done (lr %.3g)", epoch, cfg.num_epochs, lr)
            if run_path is not None:
                log_file.flush()
                ckpt = run_path / f"ckpt_epoch{epoch}.bin"
                save_checkpoint(ckpt, state)
                _atomic_write(run_path / "latest", ckpt.name.encode() + b"\n")
    finally:
        if log_file is not None:
            log_file.close()
    return state


# -- checkpoints ------------------------------------------------------------


def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def save_checkpoint(path: str | os.PathLike, state: TrainState) -> None:
    """Write magic, a JSON header (version, config, EMA, epoch) and the tensor payload."""
    header = {
        "version": CKPT_VERSION,
        "n_domains": state.model.n_domains,
        "arch": state.model.cfg.to_dict(),
        "train_config": state.cfg.to_dict(),
        "epoch": state.epoch,
        "ema": state.ema.to_dict(),
    }
    buf = io.BytesIO()
    torch.save(
        {
            "model": state.model.state_dict(),
            "opt_G": state.opt_G.state_dict(),
            "opt_D": state.opt_D.state_dict(),
            "rng": state.rng.get_state(),
        },
        buf,
    )
    head = json.dumps(header).encode()
    _atomic_write(Path(path), CKPT_MAGIC + struct.pack("<I", len(head)) + head + buf.getvalue())


def read_header(path: str | os.PathLike) -> tuple[dict, bytes]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not raw.startswith(CKPT_MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    try:
        (n,) = struct.unpack("<I", raw[len(CKPT_MAGIC) : len(CKPT_MAGIC) + 4])
        start = len(CKPT_MAGIC) + 4
        header = json.loads(raw[start : start + n])
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint header in {path}") from exc
    major = str(header.get("version", "")).split(".")[0]
    if major != CKPT_VERSION.split(".")[0]:
        raise CheckpointError(f"checkpoint version {header.get('version')} incompatible with {CKPT_VERSION}")
    return header, raw[start + n :]


def load_checkpoint(path: str | os.PathLike, n_domains: Optional[int] = None) -> TrainState:
    header, blob = read_header(path)
    if n_domains is not None and header["n_domains"] != n_domains:
        raise CheckpointError(f"checkpoint has {header['n_domains']} domains, expected {n_domains}")
    try:
        payload = torch.load(io.BytesIO(blob), weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"corrupt checkpoint payload in {path}") from exc
    cfg = TrainConfig.from_dict(header["train_config"])
    state = new_state(cfg, header["n_domains"])
    state.model.load_state_dict(payload["model"])
    state.opt_G.load_state_dict(payload["opt_G"])
    state.opt_D.load_state_dict(payload["opt_D"])
    state.rng.set_state(payload["rng"])
    state.ema = EMAState.from_dict(header["ema"])
    state.epoch = header["epoch"]
    return state
