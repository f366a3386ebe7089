"""Tests for the differentiable building blocks and the gradcheck harness."""

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from ctxredraw import imagemath as im
from ctxredraw import neuralcore as nc
from ctxredraw.validation import ValidationError

torch.set_num_threads(1)


# ---------------------------------------------------------------------------
# Partial convolution
# ---------------------------------------------------------------------------

def test_partial_conv_full_mask_equals_standard_conv():
    gen = torch.Generator().manual_seed(100)
    for draw in range(20):
        k = int(torch.randint(0, 3, (1,), generator=gen)) * 2 + 1  # 1, 3, 5
        stride = 1 + draw % 2
        cin, cout = 3, 4
        x = torch.rand(2, cin, 9, 11, generator=gen, dtype=torch.float64)
        kernel = torch.randn(cout, cin, k, k, generator=gen, dtype=torch.float64)
        bias = torch.randn(cout, generator=gen, dtype=torch.float64)
        mask = torch.ones(2, 1, 9, 11, dtype=torch.float64)
        out, out_mask = nc.partial_conv2d(x, mask, kernel, bias, stride=stride)
        ref = F.conv2d(x, kernel, bias, stride=stride, padding=k // 2)
        assert torch.abs(out - ref).max().item() < 1e-6
        assert torch.all(out_mask == 1.0)


def test_partial_conv_zero_mask():
    gen = torch.Generator().manual_seed(101)
    x = torch.rand(1, 2, 6, 6, generator=gen, dtype=torch.float64)
    kernel = torch.randn(3, 2, 3, 3, generator=gen, dtype=torch.float64)
    bias = torch.randn(3, generator=gen, dtype=torch.float64)
    out, out_mask = nc.partial_conv2d(x, torch.zeros(1, 1, 6, 6, dtype=torch.float64), kernel, bias)
    assert torch.all(out == 0.0)
    assert torch.all(out_mask == 0.0)


def test_partial_conv_hand_renormalization():
    # 3x3 ones kernel over a 3x3 input with one unmasked pixel of value v:
    # the center output renormalizes by window_area/support = 9/1.
    v = 0.7
    x = torch.full((1, 1, 3, 3), 5.0, dtype=torch.float64)
    x[0, 0, 1, 2] = v
    mask = torch.zeros(1, 1, 3, 3, dtype=torch.float64)
    mask[0, 0, 1, 2] = 1.0
    kernel = torch.ones(1, 1, 3, 3, dtype=torch.float64)
    bias = torch.tensor([0.25], dtype=torch.float64)
    out, out_mask = nc.partial_conv2d(x, mask, kernel, bias)
    assert abs(out[0, 0, 1, 1].item() - (v * 9.0 + 0.25)) < 1e-12
    # corner (0,0) has a 2x2 in-bounds window that misses the unmasked pixel
    assert out[0, 0, 0, 0].item() == 0.0
    assert out_mask[0, 0, 1, 1].item() == 1.0
    assert out_mask[0, 0, 0, 0].item() == 0.0


def test_partial_conv_coverage_never_decreases():
    gen = torch.Generator().manual_seed(102)
    x = torch.rand(1, 1, 8, 8, generator=gen, dtype=torch.float64)
    mask = torch.zeros(1, 1, 8, 8, dtype=torch.float64)
    mask[0, 0, 3:5, 3:5] = 1.0
    kernel = torch.randn(1, 1, 3, 3, generator=gen, dtype=torch.float64)
    bias = torch.zeros(1, dtype=torch.float64)
    _, m1 = nc.partial_conv2d(x, mask, kernel, bias)
    _, m2 = nc.partial_conv2d(x, m1, kernel, bias)
    assert torch.all(m2 >= m1)
    assert torch.all(m1 >= mask)


def test_partial_conv_shape_mismatch():
    x = torch.zeros(1, 2, 6, 6, dtype=torch.float64)
    mask = torch.zeros(1, 1, 5, 6, dtype=torch.float64)
    kernel = torch.zeros(3, 2, 3, 3, dtype=torch.float64)
    bias = torch.zeros(3, dtype=torch.float64)
    with pytest.raises(ValidationError):
        nc.partial_conv2d(x, mask, kernel, bias)
    with pytest.raises(ValidationError):
        nc.partial_conv2d(x, torch.zeros(1, 1, 6, 6, dtype=torch.float64),
                          torch.zeros(3, 2, 2, 2, dtype=torch.float64), bias)


def test_partial_conv_module_matches_function():
    gen = torch.Generator().manual_seed(103)
    layer = nc.PartialConv2d(2, 4, kernel_size=3, stride=2, generator=gen, dtype=torch.float64)
    x = torch.rand(1, 2, 8, 8, generator=gen, dtype=torch.float64)
    mask = (torch.rand(1, 1, 8, 8, generator=gen, dtype=torch.float64) > 0.5).double()
    out_a, mask_a = layer(x, mask)
    out_b, mask_b = nc.partial_conv2d(x, mask, layer.weight, layer.bias, stride=2)
    assert torch.equal(out_a, out_b)
    assert torch.equal(mask_a, mask_b)


# ---------------------------------------------------------------------------
# Adaptive instance normalization
# ---------------------------------------------------------------------------

def test_adain_identity_reinjection():
    # Variance must dominate the 1e-5 epsilon for re-injection to be an
    # identity at the stated tolerance, so use well-spread content.
    gen = torch.Generator().manual_seed(110)
    x = torch.rand(1, 3, 6, 6, generator=gen, dtype=torch.float64) * 8.0
    mean = x.mean(dim=(2, 3))
    std = x.std(dim=(2, 3), unbiased=False)
    out = nc.adain(x, mean, std)
    assert torch.abs(out - x).max().item() < 1e-5


def test_adain_zero_std_collapses():
    gen = torch.Generator().manual_seed(111)
    x = torch.rand(1, 2, 4, 4, generator=gen, dtype=torch.float64)
    mean = torch.tensor([[0.3, -1.2]], dtype=torch.float64)
    std = torch.zeros(1, 2, dtype=torch.float64)
    out = nc.adain(x, mean, std)
    assert torch.abs(out[0, 0] - 0.3).max().item() < 1e-12
    assert torch.abs(out[0, 1] + 1.2).max().item() < 1e-12


def test_adain_hand_value():
    # content {0,1,2,3}, mean 1.5, biased var 1.25, eps 1e-5, then 5 + 2*normed
    x = torch.arange(4, dtype=torch.float64).reshape(1, 1, 2, 2)
    out = nc.adain(x, torch.tensor([[5.0]], dtype=torch.float64), torch.tensor([[2.0]], dtype=torch.float64))
    expected = torch.tensor([2.31672916, 4.10557639, 5.89442361, 7.68327084], dtype=torch.float64)
    assert torch.abs(out.reshape(-1) - expected).max().item() < 1e-6


def test_adain_output_statistics():
    gen = torch.Generator().manual_seed(112)
    x = torch.randn(2, 4, 8, 8, generator=gen, dtype=torch.float64) * 3.0
    mean = torch.randn(2, 4, generator=gen, dtype=torch.float64)
    std = torch.rand(2, 4, generator=gen, dtype=torch.float64) + 0.5
    out = nc.adain(x, mean, std)
    got_mean = out.mean(dim=(2, 3))
    got_std = out.std(dim=(2, 3), unbiased=False)
    assert torch.abs(got_mean - mean).max().item() < 1e-4
    assert torch.abs(got_std - std).max().item() < 1e-4


def test_adain_channel_mismatch():
    x = torch.zeros(1, 3, 4, 4, dtype=torch.float64)
    with pytest.raises(ValidationError):
        nc.adain(x, torch.zeros(1, 2, dtype=torch.float64), torch.ones(1, 2, dtype=torch.float64))


# ---------------------------------------------------------------------------
# Gradcheck harness
# ---------------------------------------------------------------------------

def test_gradcheck_quadratic():
    gen = torch.Generator().manual_seed(120)
    x = torch.randn(5, generator=gen, dtype=torch.float64)
    err = nc.finite_diff_gradcheck(lambda t: (t ** 2).sum(), x)
    assert err < 1e-6


def test_gradcheck_catches_wrong_gradient():
    gen = torch.Generator().manual_seed(121)
    x = torch.rand(4, generator=gen, dtype=torch.float64) + 0.5

    def broken(t):
        # value depends on t quadratically but half the gradient is hidden
        return (t * t.detach()).sum()

    err = nc.finite_diff_gradcheck(broken, x)
    assert err > 1e-2


def test_gradcheck_triplet_away_from_kink():
    gen = torch.Generator().manual_seed(122)
    from ctxredraw.styleenc import triplet_margin_loss_torch

    e = torch.randn(3, 8, generator=gen, dtype=torch.float64)

    def fn(t):
        return triplet_margin_loss_torch(t[0], t[1], t[2])

    value = fn(e).item()
    assert value > 1e-2  # away from the hinge kink
    assert nc.finite_diff_gradcheck(fn, e) < 1e-4


def test_gradcheck_allows_inner_autograd():
    # fn computes an internal gradient norm (as R1 does); the harness must
    # leave grad mode enabled during its function evaluations.
    gen = torch.Generator().manual_seed(123)
    w = torch.randn(6, generator=gen, dtype=torch.float64)

    def fn(t):
        x = torch.linspace(-1.0, 1.0, 6, dtype=torch.float64).requires_grad_(True)
        y = (t * x ** 2).sum()
        (g,) = torch.autograd.grad(y, x, create_graph=True)
        return (g ** 2).sum()

    assert nc.finite_diff_gradcheck(fn, w) < 1e-4


# ---------------------------------------------------------------------------
# Differentiable twins of the numpy filters
# ---------------------------------------------------------------------------

def test_lightness_torch_matches_numpy():
    rng = np.random.default_rng(130)
    img = rng.uniform(0.0, 1.0, size=(2, 3, 8, 9))
    got = nc.lightness_torch(torch.from_numpy(img)).numpy()
    for b in range(2):
        expected = im.lightness(np.moveaxis(img[b], 0, -1))
        assert np.abs(got[b] - expected).max() < 1e-12


def test_lowpass_torch_matches_numpy():
    rng = np.random.default_rng(131)
    x = rng.uniform(size=(2, 12, 10))
    got = nc.lowpass_torch(torch.from_numpy(x), 0.17).numpy()
    for b in range(2):
        expected = im.lowpass_filter(x[b], 0.17)
        assert np.abs(got[b] - expected).max() < 1e-12


def test_lowpass_torch_is_differentiable():
    gen = torch.Generator().manual_seed(132)
    x = torch.rand(1, 8, 8, generator=gen, dtype=torch.float64)
    err = nc.finite_diff_gradcheck(lambda t: nc.lowpass_torch(t, 0.2).pow(2).sum(), x)
    assert err < 1e-4


# ---------------------------------------------------------------------------
# Seeded initialization
# ---------------------------------------------------------------------------

def test_init_deterministic():
    a = nc.init_uniform((4, 3, 3, 3), fan_in=27, generator=torch.Generator().manual_seed(9))
    b = nc.init_uniform((4, 3, 3, 3), fan_in=27, generator=torch.Generator().manual_seed(9))
    assert torch.equal(a, b)
    bound = 1.0 / np.sqrt(27)
    assert a.abs().max().item() <= bound
