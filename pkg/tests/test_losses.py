import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_difference_check, tiny_model
from stdgan import losses as L
from stdgan.trainer import pairwise_step

f64 = torch.float64


def const(v, shape=(1, 1, 4, 4)):
    return torch.full(shape, float(v), dtype=f64)


@pytest.mark.parametrize("real, fake, expected", [(1, 0, 0.0), (0, 1, 2.0), (0.5, 0.5, 0.5)])
def test_lsgan_d(real, fake, expected):
    assert L.lsgan_d_loss(const(real), const(fake)).item() == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("fake, expected", [(1, 0.0), (0, 1.0), (-1, 4.0)])
def test_lsgan_g(fake, expected):
    assert L.lsgan_g_loss(const(fake)).item() == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("n", [2, 4, 5])
def test_cls_uniform_logits(n):
    logits = torch.zeros(n, dtype=f64)
    assert L.cls_d_loss(logits, 0).item() == pytest.approx(math.log(n), abs=1e-12)
    assert L.cls_g_loss(logits, n - 1).item() == pytest.approx(math.log(n), abs=1e-12)


def test_cls_confident_and_extreme_logits():
    logits = torch.tensor([1e4, -1e4, 0.0], dtype=f64)
    assert L.cls_d_loss(logits, 0).item() == pytest.approx(0.0, abs=1e-12)
    assert math.isfinite(L.cls_d_loss(logits, 1).item())
    with pytest.raises(IndexError):
        L.cls_g_loss(logits, 3)


def test_cls_monotone_in_target_probability():
    values = [L.cls_g_loss(torch.tensor([z, 0.0, 0.0], dtype=f64), 0).item() for z in (-2, 0, 1, 3)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_recon_l1():
    a, b = const(0), const(1)
    assert L.recon_l1(a, a).item() == 0
    assert L.recon_l1(a, b).item() == 1
    x, y = torch.rand(2, 3, 4, 4, dtype=f64).unbind(0)
    assert L.recon_l1(x, y).item() == L.recon_l1(y, x).item()
    with pytest.raises(ValueError):
        L.recon_l1(x, y[:, :2])


def test_totals():
    w = L.LossWeights()
    assert (w.cross, w.self_recon, w.cls, w.adv) == (10, 10, 1, 1)
    assert L.total_g(0, 0, 0, 0, w) == 0
    assert L.total_g(1, 1, 1, 1, w) == 22
    assert L.total_d(1, 1, w) == 2
    w3 = w.scaled(3.0)
    assert L.total_g(1, 2, 3, 4, w3) == pytest.approx(3 * L.total_g(1, 2, 3, 4, w))
    assert L.total_d(5, 6, w3) == pytest.approx(3 * L.total_d(5, 6, w))
    with pytest.raises(ValueError):
        L.LossWeights(cross=-1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=6), st.data())
def test_losses_nonnegative(logits, data):
    t = torch.tensor(logits, dtype=f64)
    k = data.draw(st.integers(0, len(logits) - 1))
    assert L.cls_d_loss(t, k).item() >= 0
    assert L.lsgan_d_loss(t, t).item() >= 0
    assert L.lsgan_g_loss(t).item() >= 0


def test_pair_losses_symmetric(patches16):
    model = tiny_model(n_domains=3)
    a = pairwise_step(model, 0, 2, patches16).scalars()
    # swapping which patch plays A and B, with domain ids swapped along
    b = pairwise_step(model, 2, 0, patches16).scalars()
    for key in L.FIELDS:
        assert a[key] == pytest.approx(b[key], rel=1e-12)
    assert all(v >= 0 for v in a.values())


def test_bundle_invariants(patches16):
    model = tiny_model()
    w = L.LossWeights()
    b = pairwise_step(model, 0, 1, patches16, w)
    s = b.scalars()
    assert set(s) == set(L.FIELDS) and len(s) == 8
    assert s["total_G"] == pytest.approx(10 * s["cross"] + 10 * s["self"] + s["cls_G"] + s["adv_G"])
    assert s["total_D"] == pytest.approx(s["cls_D"] + s["adv_D"])
    with pytest.raises(ValueError):
        pairwise_step(model, 1, 1, patches16)


@pytest.mark.parametrize("which", ["total_G", "total_D"])
def test_total_gradients(patches16, which):
    model = tiny_model()
    params = model.generator_parameters() if which == "total_G" else model.discriminator_parameters()
    errors = central_difference_check(
        lambda: getattr(pairwise_step(model, 0, 1, patches16), which), params, n_samples=50, seed=1
    )
    assert max(errors) <= 1e-3
