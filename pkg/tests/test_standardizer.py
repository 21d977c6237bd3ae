import numpy as np
import pytest
import torch

from conftest import tiny_model
from stdgan.errors import ConsistencyError, DataError, RegistryError
from stdgan.imaging import DomainImage
from stdgan.standardizer import (
    StandardizationProfile,
    average_params,
    edge_correlation,
    render,
    standardize_image,
    style_matrix,
    style_transfer_image,
)
from stdgan.networks import AdaINParams
from stdgan.trainer import EMAState


def image(h=24, w=40, seed=0):
    rng = np.random.default_rng(seed)
    return DomainImage(rng.random((h, w, 3)), rng.integers(0, 4, (h, w)).astype(np.uint8), 1, "img")


def ema(n=3, k=8):
    g = np.arange(n * k, dtype=float).reshape(n, k)
    return EMAState(1 + g / 10, -g / 20)


def test_average_examples():
    s = EMAState(np.array([[1.0, 2.0], [3.0, 6.0]]), np.array([[0.0, -1.0], [2.0, 1.0]]))
    p = average_params(s)
    assert p.gamma_avg.tolist() == [2.0, 4.0] and p.beta_avg.tolist() == [1.0, 0.0]
    held = EMAState(s.gamma, s.beta, np.array([True, False]))
    assert average_params(held).gamma_avg.tolist() == [1.0, 2.0]
    with pytest.raises(DataError):
        average_params(EMAState(s.gamma, s.beta, np.array([False, False])))
    with pytest.raises(ValueError):
        StandardizationProfile(np.array([np.nan]), np.array([0.0]), 1)


def test_standardize_preserves_shape_and_labels():
    model = tiny_model(n_domains=3)
    im = image()
    out = standardize_image(im, average_params(ema()), model, 16, 4)
    assert out.pixels.shape == im.pixels.shape
    assert out.labels is im.labels
    assert out.pixels.min() >= 0 and out.pixels.max() <= 1
    again = standardize_image(im, average_params(ema()), model, 16, 4)
    assert np.array_equal(out.pixels, again.pixels)


def test_single_patch_matches_direct_translation():
    model = tiny_model(n_domains=3)
    im = image(16, 16)
    prof = average_params(ema())
    out = standardize_image(im, prof, model, 16, 0)
    x = torch.as_tensor(im.pixels).permute(2, 0, 1)[None]
    with torch.no_grad():
        direct = model.translate(x, AdaINParams(torch.as_tensor(prof.gamma_avg), torch.as_tensor(prof.beta_avg)))
    assert np.allclose(out.pixels, direct[0].permute(1, 2, 0).numpy(), atol=1e-12)


def test_style_transfer_uses_target_params():
    model = tiny_model(n_domains=3)
    s = ema()
    im = image()
    a = style_transfer_image(im, 2, s, model, 16, 4)
    gamma, beta = s.params(2)
    b = render(im, AdaINParams(torch.as_tensor(gamma), torch.as_tensor(beta)), model, 16, 4)
    assert np.array_equal(a.pixels, b.pixels)
    with pytest.raises(RegistryError):
        style_transfer_image(im, 3, s, model, 16, 4)
    with pytest.raises(ConsistencyError):
        standardize_image(im, average_params(ema(k=5)), model, 16, 4)


def test_style_matrix_shape():
    model = tiny_model(n_domains=3)
    rows = style_matrix([image(16, 16, s) for s in range(2)], ema(), model, 16, 0, average_params(ema()))
    assert len(rows) == 2 and all(len(r) == 4 for r in rows)


def test_edge_correlation():
    rng = np.random.default_rng(0)
    x = rng.random((32, 32, 3))
    assert np.allclose(edge_correlation(x, x), 1.0)
    assert np.allclose(edge_correlation(x, 0.3 * x + 0.2), 1.0)
    flat = np.full_like(x, 0.5)
    assert np.all(edge_correlation(x, flat) == 0)
    assert np.all(np.abs(edge_correlation(x, rng.random((32, 32, 3)))) < 0.3)
