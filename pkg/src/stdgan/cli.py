"""Command-line entry point: ``stdgan <command> [options]``.

Settings resolve in this order: explicit flag, ``--config`` file (flat
``key=value`` lines named after the long flags), ``--desk-scale`` preset,
built-in default.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import baselines, imaging
from .errors import ConfigError, DataError, StdGanError

log = logging.getLogger("stdgan")

GAN_DEFAULTS = {"epochs": 20, "decay_epoch": 10, "lr": 0.0002, "patch_size": 256, "overlap": 32, "width": 64}
GAN_DESK = {"epochs": 5, "decay_epoch": 2, "patch_size": 64, "overlap": 8, "width": 16}
SEG_DEFAULTS = {"epochs": 35, "lr": 0.0001, "batch_size": 32, "patch_size": 256, "overlap": 32, "width": 64}
SEG_DESK = {"patch_size": 64, "overlap": 8, "width": 16}


@dataclass
class RunConfig:
    command: str
    out: Path
    seed: int = 0
    manifest: Optional[Path] = None
    desk_scale: bool = False
    force: bool = False
    train: dict = field(default_factory=dict)
    seg: dict = field(default_factory=dict)


# -- argument parsing -------------------------------------------------------


def _common(p: argparse.ArgumentParser, manifest: bool = True) -> None:
    if manifest:
        p.add_argument("--manifest", type=Path, help="manifest listing domain directories in id order")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--seed", type=int, help="seed for every stochastic step")
    p.add_argument("--config", type=Path, help="key=value settings file")
    p.add_argument("--force", action="store_true", help="allow writing into a non-empty output directory")
    p.add_argument("--desk-scale", action="store_true", help="small widths and patches for CPU runs")


def _gan_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--decay-epoch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patch-size", type=int)
    p.add_argument("--overlap", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--iterations-per-epoch", type=int)
    p.add_argument("--held-out", type=str, help="comma-separated domain ids excluded from training")


def _seg_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patch-size", type=int)
    p.add_argument("--overlap", type=int)
    p.add_argument("--width", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stdgan", description="Multi-domain image standardization with a GAN.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synthetic", help="generate a multi-domain synthetic dataset")
    _common(p, manifest=False)
    p.add_argument("--domains", type=int, default=3)
    p.add_argument("--tiles", type=int, default=200)
    p.add_argument("--size", type=int, default=64)

    p = sub.add_parser("train-gan", help="train the standardization GAN")
    _common(p)
    _gan_options(p)
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")

    p = sub.add_parser("standardize", help="standardize every domain with the averaged style")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--bins", type=int, default=256)

    p = sub.add_parser("baseline", help="apply a classical standardization baseline")
    _common(p)
    p.add_argument("--method", choices=baselines.METHODS, required=True)
    p.add_argument("--per-image", action="store_true", help="per-image instead of per-domain statistics")
    p.add_argument("--bins", type=int, default=256)

    p = sub.add_parser("train-seg", help="train the segmenter on labeled source domains")
    _common(p)
    _seg_options(p)
    p.add_argument("--target", type=int, required=True, help="held-out target domain id")
    p.add_argument("--sources", type=str, help="comma-separated source ids (default: all but target)")

    p = sub.add_parser("eval", help="score a trained segmenter on the target domain")
    _common(p)
    p.add_argument("--weights", type=Path, required=True)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--method", default="U-net", help="row label in the results table")

    p = sub.add_parser("style-matrix", help="render every domain in every domain's style")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--tile", type=int, default=0, help="index of the sample image in each domain")
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, args: argparse.Namespace, argv: Sequence[str]) -> None:
    """Fill options the user did not pass from a key=value file, type-checked by the parser."""
    if getattr(args, "config", None) is None:
        return
    if not args.config.is_file():
        raise ConfigError(f"config file not found: {args.config}")
    sub = parser._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
    actions = {a.dest: a for a in sub._actions}  # noqa: SLF001
    given = {a.split("=")[0] for a in argv if a.startswith("--")}
    for lineno, line in enumerate(args.config.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{args.config}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        dest = key.replace("-", "_")
        if dest not in actions or dest in ("config", "help"):
            raise ConfigError(f"{args.config}:{lineno}: unknown setting {key!r} for {args.command}")
        action = actions[dest]
        if f"--{key.replace('_', '-')}" in given:
            continue
        if isinstance(action, argparse._StoreTrueAction):  # noqa: SLF001
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigError(f"{args.config}:{lineno}: {key} expects a boolean")
            setattr(args, dest, value.lower() in ("true", "1", "yes"))
            continue
        try:
            converted = action.type(value) if action.type else value
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{args.config}:{lineno}: bad value for {key}: {value!r}") from exc
        if action.choices is not None and converted not in action.choices:
            raise ConfigError(f"{args.config}:{lineno}: {key} must be one of {sorted(action.choices)}")
        setattr(args, dest, converted)


def _resolve(args, keys, defaults, desk) -> dict:
    out = {}
    for k in keys:
        v = getattr(args, k, None)
        if v is None:
            v = desk.get(k, defaults.get(k)) if args.desk_scale else defaults.get(k)
        out[k] = v
    return out


def _ids(text: Optional[str]) -> tuple[int, ...]:
    if not text:
        return ()
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from exc


def to_run_config(args: argparse.Namespace) -> RunConfig:
    if args.out is None:
        raise ConfigError("--out is required")
    cfg = RunConfig(
        command=args.command,
        out=args.out,
        seed=args.seed if args.seed is not None else 0,
        manifest=getattr(args, "manifest", None),
        desk_scale=args.desk_scale,
        force=args.force,
    )
    if args.command != "make-synthetic":
        if cfg.manifest is None:
            raise ConfigError("--manifest is required")
        if not cfg.manifest.is_file():
            raise DataError(f"manifest not found: {cfg.manifest}")
    if args.command == "train-gan":
        cfg.train = _resolve(args, GAN_DEFAULTS, GAN_DEFAULTS, GAN_DESK)
        cfg.train["iterations_per_epoch"] = args.iterations_per_epoch
        cfg.train["held_out"] = _ids(args.held_out)
    if args.command == "train-seg":
        cfg.seg = _resolve(args, SEG_DEFAULTS, SEG_DEFAULTS, SEG_DESK)
    for name in ("checkpoint", "weights", "resume"):
        path = getattr(args, name, None)
        if path is not None and not Path(path).is_file():
            raise DataError(f"{name} not found: {path}")
    return cfg


def _prepare_out(cfg: RunConfig, allow_existing: bool = False) -> Path:
    out = cfg.out
    if out.exists() and any(out.iterdir()) and not (cfg.force or allow_existing):
        raise ConfigError(f"output directory {out} is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands ---------------------------------------------------------------


def cmd_make_synthetic(cfg: RunConfig, args) -> None:
    from .synthetic import make_synthetic, write_synthetic

    if args.domains < 1 or args.tiles < 1 or args.size < 16:
        raise ConfigError("need domains >= 1, tiles >= 1, size >= 16")
    out = _prepare_out(cfg)
    manifest = write_synthetic(out, make_synthetic(args.domains, args.tiles, args.size, cfg.seed))
    print(manifest)


def cmd_train_gan(cfg: RunConfig, args) -> None:
    from .standardizer import average_params
    from .trainer import TrainConfig, train

    t = cfg.train
    train_cfg = TrainConfig(
        num_epochs=t["epochs"],
        decay_epoch=t["decay_epoch"],
        init_lr=t["lr"],
        patch_size=t["patch_size"],
        overlap=t["overlap"],
        width=t["width"],
        seed=cfg.seed,
        iterations_per_epoch=t["iterations_per_epoch"],
        held_out=t["held_out"],
    )
    domains = imaging.load_dataset(cfg.manifest)
    if len(domains) < 2:
        raise DataError("training needs at least two domains in the manifest")
    if any(d >= len(domains) for d in train_cfg.held_out):
        raise ConfigError("held-out id outside the manifest")
    out = _prepare_out(cfg, allow_existing=args.resume is not None)
    state = train([d.images for d in domains], train_cfg, run_dir=out, resume=args.resume)
    profile = average_params(state.ema, checkpoint=f"ckpt_epoch{state.epoch}.bin")
    (out / "profile.json").write_text(
        json.dumps(
            {
                "gamma_avg": profile.gamma_avg.tolist(),
                "beta_avg": profile.beta_avg.tolist(),
                "n_domains": profile.n_domains,
                "checkpoint": profile.checkpoint,
            }
        )
    )
    print(out / f"ckpt_epoch{state.epoch}.bin")


def _write_dataset(out: Path, domains, outputs) -> None:
    """Mirror the input layout: pixels re-encoded, label files copied byte-for-byte."""
    names = []
    for dom, images in zip(domains, outputs):
        dest = out / dom.name
        (dest / "images").mkdir(parents=True, exist_ok=True)
        for im in images:
            imaging.write_image(dest / "images" / f"{im.name}.png", im.pixels)
        src_labels = dom.root / "labels"
        if src_labels.is_dir():
            shutil.copytree(src_labels, dest / "labels", dirs_exist_ok=True)
        names.append(dom.name)
    imaging.write_manifest(out / "manifest.txt", names)


def histogram_report(out: Path, before: list, after: list, names: list[str], bins: int) -> None:
    """Per-domain before/after channel histograms as CSV, plus one plot per channel."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    report = out / "histograms"
    report.mkdir(exist_ok=True)
    h_before = [imaging.pooled_histogram(ims, bins) for ims in before]
    h_after = [imaging.pooled_histogram(ims, bins) for ims in after]
    with open(report / "histograms.csv", "w") as fh:
        fh.write("domain,stage,channel," + ",".join(f"bin{i}" for i in range(bins)) + "\n")
        for name, hb, ha in zip(names, h_before, h_after):
            for stage, h in (("before", hb), ("after", ha)):
                for c, row in enumerate(h.counts):
                    fh.write(f"{name},{stage},{'rgb'[c]}," + ",".join(repr(float(v)) for v in row) + "\n")
    summary = {
        "mean_pairwise_distance_before": imaging.mean_pairwise_distance(h_before) if len(names) > 1 else 0.0,
        "mean_pairwise_distance_after": imaging.mean_pairwise_distance(h_after) if len(names) > 1 else 0.0,
    }
    (report / "summary.json").write_text(json.dumps(summary, indent=2))
    centers = (np.arange(bins) + 0.5) / bins
    for c, band in enumerate(("red", "green", "blue")):
        fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
        for ax, hists, title in ((axes[0], h_before, "before"), (axes[1], h_after, "after")):
            for name, h in zip(names, hists):
                ax.plot(centers, h.counts[c], label=name)
            ax.set_title(f"{band} band, {title} standardization")
            ax.set_ylabel("frequency")
        axes[1].set_xlabel("value")
        axes[0].legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(report / f"hist_{band}.png", dpi=100)
        plt.close(fig)


def cmd_standardize(cfg: RunConfig, args) -> None:
    from .standardizer import average_params, standardize_image
    from .trainer import load_checkpoint

    domains = imaging.load_dataset(cfg.manifest)
    state = load_checkpoint(args.checkpoint, n_domains=len(domains))
    out = _prepare_out(cfg)
    profile = average_params(state.ema, checkpoint=str(args.checkpoint))
    p, o = state.cfg.patch_size, state.cfg.overlap
    outputs = [[standardize_image(im, profile, state.model, p, o) for im in d.images] for d in domains]
    _write_dataset(out, domains, outputs)
    histogram_report(out, [d.images for d in domains], outputs, [d.name for d in domains], args.bins)


def cmd_baseline(cfg: RunConfig, args) -> None:
    domains = imaging.load_dataset(cfg.manifest)
    out = _prepare_out(cfg)
    outputs = [baselines.apply_baseline(args.method, d.images, per_image=args.per_image) for d in domains]
    _write_dataset(out, domains, outputs)
    histogram_report(out, [d.images for d in domains], outputs, [d.name for d in domains], args.bins)


def cmd_train_seg(cfg: RunConfig, args) -> None:
    from .segmentation import SegConfig, save_segmenter, train_segmenter

    domains = imaging.load_dataset(cfg.manifest)
    n = len(domains)
    if not 0 <= args.target < n:
        raise ConfigError(f"target {args.target} outside the manifest's {n} domains")
    sources = _ids(args.sources) or tuple(d for d in range(n) if d != args.target)
    if any(not 0 <= s < n for s in sources):
        raise ConfigError("source id outside the manifest")
    images = [im for s in sources for im in domains[s].images]
    if any(im.labels is None for im in images):
        raise DataError("every source image needs a label file")
    seg_cfg = SegConfig(seed=cfg.seed, **cfg.seg)
    out = _prepare_out(cfg)
    seg = train_segmenter(images, seg_cfg)
    save_segmenter(out / "segmenter.pt", seg)
    (out / "history.json").write_text(json.dumps({"loss": seg.history, "sources": list(sources)}))
    print(out / "segmenter.pt")


def cmd_eval(cfg: RunConfig, args) -> None:
    from .segmentation import evaluate_domain, load_segmenter, read_results, result_row, write_prediction, write_results

    domains = imaging.load_dataset(cfg.manifest)
    if not 0 <= args.target < len(domains):
        raise ConfigError(f"target {args.target} outside the manifest")
    target = domains[args.target]
    if not target.labeled:
        raise DataError(f"target domain {target.name} lacks labels")
    seg = load_segmenter(args.weights)
    # several methods share one results table, so an existing directory is fine
    out = _prepare_out(cfg, allow_existing=True)
    result, preds = evaluate_domain(target.images, seg)
    pred_dir = out / "predictions" / args.method.replace("/", "_").replace(" ", "_")
    pred_dir.mkdir(parents=True, exist_ok=True)
    for im, pred in zip(target.images, preds):
        write_prediction(pred_dir / f"{im.name}.png", pred)
    table = out / "results.csv"
    rows = [r for r in read_results(table) if r[0] != args.method] if table.is_file() else []
    write_results(table, [*rows, result_row(args.method, result)])
    print(table)


def cmd_style_matrix(cfg: RunConfig, args) -> None:
    from PIL import Image

    from .standardizer import average_params, style_matrix
    from .trainer import load_checkpoint

    domains = imaging.load_dataset(cfg.manifest)
    state = load_checkpoint(args.checkpoint, n_domains=len(domains))
    samples = []
    for d in domains:
        if not 0 <= args.tile < len(d.images):
            raise ConfigError(f"tile index {args.tile} outside domain {d.name}")
        samples.append(d.images[args.tile])
    out = _prepare_out(cfg)
    p, o = state.cfg.patch_size, state.cfg.overlap
    rows = style_matrix(samples, state.ema, state.model, p, o, profile=average_params(state.ema))
    h, w = samples[0].shape
    gap = 4
    ncol = len(rows[0]) + 1
    canvas = np.ones((len(rows) * (h + gap) - gap, ncol * (w + gap) - gap, 3))
    for i, (src, row) in enumerate(zip(samples, rows)):
        for j, im in enumerate([src, *row]):
            if im.shape != (h, w):
                raise DataError("style matrix needs equally sized sample images")
            canvas[i * (h + gap) : i * (h + gap) + h, j * (w + gap) : j * (w + gap) + w] = im.pixels
    Image.fromarray(imaging.to_uint8(canvas)).save(out / "style_matrix.png")
    for i, row in enumerate(rows):
        for j, im in enumerate(row):
            tag = "std" if j == len(domains) else f"style{j}"
            imaging.write_image(out / f"domain{i}_{tag}.png", im.pixels)
    print(out / "style_matrix.png")


COMMANDS = {
    "make-synthetic": cmd_make_synthetic,
    "train-gan": cmd_train_gan,
    "standardize": cmd_standardize,
    "baseline": cmd_baseline,
    "train-seg": cmd_train_seg,
    "eval": cmd_eval,
    "style-matrix": cmd_style_matrix,
}


def _set_threads() -> None:
    value = os.environ.get("STDGAN_THREADS")
    if value:
        import torch

        try:
            torch.set_num_threads(max(1, int(value)))
        except ValueError as exc:
            raise ConfigError(f"STDGAN_THREADS must be an integer, got {value!r}") from exc


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        _apply_config_file(parser, args, argv)
        cfg = to_run_config(args)
        _set_threads()
        COMMANDS[args.command](cfg, args)
    except StdGanError as exc:
        print(f"stdgan {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, KeyError) as exc:
        print(f"stdgan {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"stdgan {args.command}: runtime error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
