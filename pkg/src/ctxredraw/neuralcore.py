"""Differentiable building blocks shared by the encoder, generator, and
discriminators: partial convolutions with coverage-mask propagation, adaptive
instance normalization, seeded parameter initialization, differentiable twins
of the lightness/low-pass filters, and a finite-difference gradient checker.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from . import imagemath
from .validation import ValidationError

__all__ = [
    "partial_conv2d",
    "PartialConv2d",
    "adain",
    "finite_diff_gradcheck",
    "lightness_torch",
    "lowpass_torch",
    "init_uniform",
    "seeded_conv2d",
    "seeded_linear",
]

INSTANCE_NORM_EPS = 1e-5
LEAKY_SLOPE = 0.2


def partial_conv2d(features, mask, kernel, bias, stride: int = 1):
    """Convolution over masked inputs, renormalized by coverage.

    At each output location the raw convolution of ``features * mask`` is
    scaled by (in-bounds window area) / (mask support in the window), so fully
    covered windows reproduce a standard convolution exactly. Locations with
    zero support output 0 (bias excluded) and coverage 0. Returns
    ``(features, coverage_mask)`` for the next layer.
    """
    if features.dim() != 4 or mask.dim() != 4 or mask.shape[1] != 1:
        raise ValidationError("partial_conv2d: features must be B×C×H×W and mask B×1×H×W")
    if mask.shape[0] != features.shape[0] or mask.shape[2:] != features.shape[2:]:
        raise ValidationError(
            f"partial_conv2d: mask shape {tuple(mask.shape)} does not match features "
            f"{tuple(features.shape)}"
        )
    if kernel.dim() != 4 or kernel.shape[2] != kernel.shape[3] or kernel.shape[2] % 2 != 1:
        raise ValidationError("partial_conv2d: kernel must be Cout×Cin×k×k with odd k")
    if kernel.shape[1] != features.shape[1]:
        raise ValidationError("partial_conv2d: kernel input channels do not match features")
    k = kernel.shape[2]
    pad = k // 2
    ones_kernel = torch.ones(1, 1, k, k, dtype=features.dtype, device=features.device)
    area = F.conv2d(torch.ones_like(mask), ones_kernel, stride=stride, padding=pad)
    support = F.conv2d(mask, ones_kernel, stride=stride, padding=pad)
    raw = F.conv2d(features * mask, kernel, bias=None, stride=stride, padding=pad)
    covered = support > 0
    ratio = torch.where(covered, area / support.clamp(min=1e-12), torch.zeros_like(support))
    out = raw * ratio + bias.view(1, -1, 1, 1)
    out = torch.where(covered, out, torch.zeros_like(out))
    return out, covered.to(features.dtype)


class PartialConv2d(nn.Module):
    """Module wrapper around :func:`partial_conv2d` with seeded init."""

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1,
                 generator=None, dtype=torch.float32):
        super().__init__()
        fan_in = in_channels * kernel_size * kernel_size
        self.stride = stride
        self.weight = nn.Parameter(init_uniform(
            (out_channels, in_channels, kernel_size, kernel_size), fan_in, generator, dtype))
        self.bias = nn.Parameter(init_uniform((out_channels,), fan_in, generator, dtype))

    def forward(self, features, mask):
        return partial_conv2d(features, mask, self.weight, self.bias, stride=self.stride)


def adain(content, style_mean, style_std):
    """Instance-normalize ``content`` per channel, then scale by ``style_std``
    and shift by ``style_mean``. Styles broadcast as (B, C) or (C,)."""
    if content.dim() != 4:
        raise ValidationError("adain: content must be B×C×H×W")
    c = content.shape[1]
    style_mean = torch.as_tensor(style_mean, dtype=content.dtype, device=content.device)
    style_std = torch.as_tensor(style_std, dtype=content.dtype, device=content.device)
    if style_mean.shape[-1] != c or style_std.shape[-1] != c:
        raise ValidationError(
            f"adain: style vectors have {style_mean.shape[-1]} channels, content has {c}"
        )
    if style_mean.dim() == 1:
        style_mean = style_mean.unsqueeze(0)
        style_std = style_std.unsqueeze(0)
    mean = content.mean(dim=(2, 3), keepdim=True)
    var = content.var(dim=(2, 3), unbiased=False, keepdim=True)
    normalized = (content - mean) / torch.sqrt(var + INSTANCE_NORM_EPS)
    return normalized * style_std.unsqueeze(-1).unsqueeze(-1) + style_mean.unsqueeze(-1).unsqueeze(-1)


def _as_float(value) -> float:
    if torch.is_tensor(value):
        return float(value.detach())
    return float(value)


def finite_diff_gradcheck(fn, input, step: float = 1e-3) -> float:
    """Max over coordinates of |analytic - central difference| relative error.

    ``fn`` maps a tensor to a scalar and may run autograd internally (e.g.
    gradient penalties), so evaluations are not wrapped in ``no_grad``.
    """
    x = input.detach().clone().requires_grad_(True)
    out = fn(x)
    analytic = torch.autograd.grad(out, x)[0].detach().reshape(-1)
    base = input.detach().clone().reshape(-1)
    shape = input.shape
    worst = 0.0
    for i in range(base.numel()):
        plus = base.clone()
        plus[i] += step
        minus = base.clone()
        minus[i] -= step
        f_plus = _as_float(fn(plus.reshape(shape)))
        f_minus = _as_float(fn(minus.reshape(shape)))
        central = (f_plus - f_minus) / (2.0 * step)
        a = float(analytic[i])
        err = abs(a - central) / max(1.0, abs(a), abs(central))
        worst = max(worst, err)
    return worst


# Differentiable twins of imagemath.lightness / imagemath.lowpass_filter,
# used by the reconstruction loss. Kept numerically identical to the numpy
# versions (same matrices, floor, and frequency rule).
_RGB_TO_LMS_T = torch.from_numpy(imagemath.RGB_TO_LMS.copy())
_L_WEIGHT = 1.0 / math.sqrt(3.0)


def lightness_torch(img):
    """Lab lightness of a B×3×H×W image in [0, 1]; returns B×H×W."""
    if img.dim() != 4 or img.shape[1] != 3:
        raise ValidationError("lightness_torch: expected a B×3×H×W tensor")
    m = _RGB_TO_LMS_T.to(dtype=img.dtype, device=img.device)
    lms = torch.einsum("bchw,dc->bdhw", img, m)
    loglms = torch.log10(lms.clamp(min=imagemath.LMS_LOG_FLOOR))
    return loglms.sum(dim=1) * _L_WEIGHT


def lowpass_torch(x, threshold: float):
    """Brick-wall low-pass over the last two dims of a (..., H, W) tensor."""
    if x.dim() < 2:
        raise ValidationError("lowpass_torch: expected at least 2 dims")
    h, w = x.shape[-2], x.shape[-1]
    fu = torch.fft.fftfreq(h, dtype=torch.float64, device=x.device)
    fv = torch.fft.fftfreq(w, dtype=torch.float64, device=x.device)
    radius = torch.sqrt(fu[:, None] ** 2 + fv[None, :] ** 2)
    keep = (radius <= threshold).to(x.dtype)
    return torch.fft.ifft2(torch.fft.fft2(x) * keep).real


def init_uniform(shape, fan_in: int, generator=None, dtype=torch.float32):
    """Fan-in-scaled uniform draw in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    out = torch.empty(shape, dtype=dtype)
    out.uniform_(-bound, bound, generator=generator)
    return out


def seeded_conv2d(in_channels, out_channels, kernel_size=3, stride=1, padding=None,
                  generator=None, dtype=torch.float32) -> nn.Conv2d:
    if padding is None:
        padding = kernel_size // 2
    conv = nn.Conv2d(in_channels, out_channels, kernel_size, stride=stride,
                     padding=padding, dtype=dtype)
    fan_in = in_channels * kernel_size * kernel_size
    with torch.no_grad():
        conv.weight.copy_(init_uniform(conv.weight.shape, fan_in, generator, dtype))
        conv.bias.copy_(init_uniform(conv.bias.shape, fan_in, generator, dtype))
    return conv


def seeded_linear(in_features, out_features, generator=None, dtype=torch.float32) -> nn.Linear:
    layer = nn.Linear(in_features, out_features, dtype=dtype)
    with torch.no_grad():
        layer.weight.copy_(init_uniform(layer.weight.shape, in_features, generator, dtype))
        layer.bias.copy_(init_uniform(layer.bias.shape, in_features, generator, dtype))
    return layer
