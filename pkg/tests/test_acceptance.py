"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 8 to 10 share one seeded desk-scale experiment, run twice. Together
they take roughly half an hour on one CPU core.
"""

import math
import time
import warnings

import numpy as np
import pytest
import torch

from conftest import ACCEPTANCE, central_difference_check, tiny_model
from stdgan import losses as L
from stdgan.baselines import (
    channel_means,
    gray_world,
    hist_equalize,
    zscore_normalize,
    zscore_stats,
)
from stdgan.experiment import DeskSettings, desk_experiment
from stdgan.imaging import axis_origins, crop_patches, extract_patches, stitch
from stdgan.networks import AdaINParams, adain, instance_stats
from stdgan.segmentation import evaluate, overall_iou
from stdgan.trainer import EMAState, TrainConfig, ema_update, lr_at, pairwise_step
from test_imaging import enumerate_anchors
from test_segmentation import brute_force_iou


def record(k: int, checks: dict[str, bool], detail: str, seconds=None, budget=None):
    if budget is not None:
        checks = {**checks, f"runtime {seconds:.1f}s < {budget:g}s": seconds < budget}
    failed = [name for name, ok in checks.items() if not ok]
    ok = not failed
    line = detail + ("" if ok else f"  failed: {', '.join(failed)}")
    ACCEPTANCE[k] = (ok, line)
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {line}")
    assert ok, line


def test_criterion_01_loss_oracles():
    t = time.perf_counter()
    f = lambda v: torch.tensor([float(v)], dtype=torch.float64)  # noqa: E731
    w = L.LossWeights()
    checks = {
        "lsgan_d(1,0)=0": abs(L.lsgan_d_loss(f(1), f(0)).item()) <= 1e-9,
        "lsgan_d(0,1)=2": abs(L.lsgan_d_loss(f(0), f(1)).item() - 2) <= 1e-9,
        "lsgan_g(0)=1": abs(L.lsgan_g_loss(f(0)).item() - 1) <= 1e-9,
        "cls uniform = ln n": all(
            abs(fn(torch.zeros(n, dtype=torch.float64), 0).item() - math.log(n)) <= 1e-9
            for n in (2, 4, 5)
            for fn in (L.cls_d_loss, L.cls_g_loss)
        ),
        "total_G=22": abs(L.total_g(1, 1, 1, 1, w) - 22) <= 1e-9,
        "total_D=2": abs(L.total_d(1, 1, w) - 2) <= 1e-9,
    }
    record(1, checks, "LSGAN, classification and weighted totals exact", time.perf_counter() - t, 1)


def test_criterion_02_schedule_and_ema():
    t = time.perf_counter()
    cfg = TrainConfig()
    one = torch.ones(1, dtype=torch.float64)
    s = ema_update(EMAState.zeros(1, 1), 0, AdaINParams(one, one))
    worst = 0.0
    rng = np.random.default_rng(0)
    for _ in range(20):
        p0, c = rng.uniform(-3, 3, 2)
        state = EMAState(np.full((1, 1), p0), np.full((1, 1), p0))
        cur = AdaINParams(torch.tensor([c], dtype=torch.float64), torch.tensor([c], dtype=torch.float64))
        for step in range(1, 51):
            state = ema_update(state, 0, cur)
            worst = max(worst, abs(abs(state.gamma[0, 0] - c) - 0.95**step * abs(p0 - c)))
    checks = {
        "lr_at(10)": lr_at(10, cfg) == 0.0002,
        "lr_at(15)": abs(lr_at(15, cfg) - 0.0001) <= 1e-15,
        "lr_at(20)": lr_at(20, cfg) == 0,
        "first ema = 0.05": abs(s.gamma[0, 0] - 0.05) <= 1e-12,
        "geometric decay": worst <= 1e-12,
    }
    record(2, checks, f"schedule exact, EMA decay error {worst:.1e}", time.perf_counter() - t, 1)


def test_criterion_03_adain():
    t = time.perf_counter()
    g = torch.Generator().manual_seed(0)
    x = torch.randn(4, 16, 12, 12, generator=g) * 3 + 1.5
    mu, sigma = instance_stats(x)
    ident = (adain(x, AdaINParams(sigma, mu)) - x).abs().max().item()
    y = adain(x, AdaINParams(torch.ones(16), torch.zeros(16)))
    mean_err = y.mean(dim=(-2, -1)).abs().max().item()
    std_err = (y.std(dim=(-2, -1), unbiased=False) - 1).abs().max().item()
    checks = {"identity 1e-4": ident <= 1e-4, "mean 1e-6": mean_err < 1e-6, "std 1e-3": std_err <= 1e-3}
    record(3, checks, f"identity {ident:.1e}, mean {mean_err:.1e}, std {std_err:.1e}", time.perf_counter() - t, 1)


def test_criterion_04_gradients(patches16):
    t = time.perf_counter()
    worst = {}
    for which in ("total_G", "total_D"):
        model = tiny_model()
        params = model.generator_parameters() if which == "total_G" else model.discriminator_parameters()
        errs = central_difference_check(
            lambda: getattr(pairwise_step(model, 0, 1, patches16), which), params, n_samples=50, seed=1
        )
        worst[which] = max(errs)
    checks = {f"{k} <= 1e-3": v <= 1e-3 for k, v in worst.items()}
    detail = ", ".join(f"{k} max rel err {v:.1e}" for k, v in worst.items())
    record(4, checks, detail, time.perf_counter() - t, 60)


def test_criterion_05_tiling():
    t = time.perf_counter()
    rng = np.random.default_rng(5)
    exact = 0
    for _ in range(200):
        p = int(rng.integers(4, 40))
        o = int(rng.integers(0, p))
        h, w = (int(v) for v in rng.integers(p, 3 * p + 20, 2))
        pixels = rng.random((h, w, 3))
        grid = extract_patches(pixels, p, o)
        exact += np.array_equal(stitch(crop_patches(pixels, grid), grid), pixels)
    anchors_ok = all(
        axis_origins(d, 256, 32) == enumerate_anchors(d, 256, 32) == want
        for d, want in ((512, [0, 224, 256]), (288, [0, 32]))
    )
    checks = {"200 exact round trips": exact == 200, "anchor examples": anchors_ok}
    record(5, checks, f"{exact}/200 exact round trips", time.perf_counter() - t, 10)


def test_criterion_06_baselines():
    t = time.perf_counter()
    rng = np.random.default_rng(6)
    domain = [rng.gamma(2.0, 0.15, (32, 32, 3)) for _ in range(5)]
    stats = zscore_stats(domain)
    z = np.concatenate([zscore_normalize(im, stats).reshape(-1, 3) for im in domain])
    z_mean, z_std = np.abs(z.mean(0)).max(), np.abs(z.std(0) - 1).max()

    means = channel_means(domain)
    balanced = channel_means([gray_world(im, means, clip=False) for im in domain])
    gw_spread = balanced.max() - balanced.min()

    r = np.linspace(0, 1, 256)
    ramp = np.add.outer(r, r) / 2
    smooth = np.stack([ramp**2, np.sqrt(ramp), np.sin(ramp * np.pi / 2) ** 3], axis=-1)
    eq = hist_equalize(smooth)
    ratios = []
    order_ok = True
    idx = rng.integers(0, ramp.size, (2, 5000))
    for c in range(3):
        hist = np.histogram(eq[..., c], bins=16, range=(0, 1))[0]
        ratios.append(hist.max() / hist.min() if hist.min() > 0 else np.inf)
        a, b = smooth[..., c].ravel(), eq[..., c].ravel()
        lo = a[idx[0]] < a[idx[1]]
        order_ok &= bool(np.all(b[idx[0]][lo] <= b[idx[1]][lo]))
    checks = {
        "zscore mean": z_mean < 1e-6,
        "zscore std": z_std <= 1e-6,
        "gray-world means": gw_spread <= 1e-6,
        "histeq flatness": max(ratios) < 2,
        "histeq order": order_ok,
    }
    detail = f"z mean {z_mean:.1e}, z std {z_std:.1e}, gray-world spread {gw_spread:.1e}, flatness {max(ratios):.2f}"
    record(6, checks, detail, time.perf_counter() - t, 10)


def test_criterion_07_iou():
    t = time.perf_counter()
    rng = np.random.default_rng(7)
    mismatches = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for _ in range(1000):
            truth = rng.integers(0, 4, (16, 16))
            pred = rng.integers(1, 4, (16, 16))
            mismatches += evaluate(pred, truth).per_class_iou != brute_force_iou(pred, truth)
    table = round(overall_iou([45.36, 18.81, 82.43]), 2)
    checks = {"oracle": mismatches == 0, "table arithmetic": table == 48.87}
    record(7, checks, f"{mismatches} mismatches over 1000 maps, overall {table}", time.perf_counter() - t, 60)


# -- desk-scale experiment ----------------------------------------------------


@pytest.fixture(scope="module")
def desk_runs():
    runs = []
    for _ in range(2):
        t = time.perf_counter()
        res = desk_experiment(DeskSettings())
        runs.append((res, time.perf_counter() - t))
    return runs


def test_criterion_08_standardization(desk_runs):
    res, _ = desk_runs[0]
    s = res.standardization
    edges = s.edge_correlation
    checks = {
        "distance ratio <= 0.5": s.ratio <= 0.5,
        "edge correlation >= 0.5": bool(np.all(edges >= 0.5)),
        "twice below once": s.twice_distance < s.raw_to_std_distance,
    }
    detail = (
        f"distance raw {s.raw_distance:.4f} -> std {s.std_distance:.4f} (ratio {s.ratio:.3f}), "
        f"edge corr {np.round(edges, 3).tolist()}"
    )
    record(8, checks, detail, s.seconds, 20 * 60)


def test_criterion_09_segmentation(desk_runs):
    res, _ = desk_runs[0]
    seg = res.segmentation
    raw, std = seg.raw["overall"], seg.standardized["overall"]
    detail = f"overall IoU raw {raw:.4f} vs standardized {std:.4f}"
    record(9, {"standardized > raw": std > raw}, detail, seg.seconds, 15 * 60)


def test_criterion_10_determinism(desk_runs):
    (a, _), (b, _) = desk_runs
    pairs = {
        "raw distance": (a.standardization.raw_distance, b.standardization.raw_distance),
        "std distance": (a.standardization.std_distance, b.standardization.std_distance),
        "raw IoU": (a.segmentation.raw["overall"], b.segmentation.raw["overall"]),
        "std IoU": (a.segmentation.standardized["overall"], b.segmentation.standardized["overall"]),
    }
    for k in range(3):
        pairs[f"edge {k}"] = (a.standardization.edge_correlation[k], b.standardization.edge_correlation[k])
    worst = max(abs(x - y) for x, y in pairs.values())
    checks = {name: abs(x - y) <= 1e-6 for name, (x, y) in pairs.items()}
    record(10, checks, f"max rerun difference {worst:.1e}")
