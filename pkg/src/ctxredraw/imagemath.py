"""Deterministic image numerics: color spaces, frequency filtering, color
transfer, Poisson blending, resampling, and 8-bit PNG round-tripping.

Everything here is a pure function of its inputs and safe to call from any
number of threads. Images are H×W×3 float arrays in [0, 1] (sRGB); masks are
H×W float arrays in [0, 1].
"""

from __future__ import annotations

import numpy as np
import scipy.sparse
import scipy.sparse.linalg
from PIL import Image

from .validation import (
    ValidationError,
    check_binary_mask,
    check_mask,
    check_raster,
    check_real,
    make_raster,
)

__all__ = [
    "rgb_to_lab",
    "lab_to_rgb",
    "lightness",
    "lowpass_filter",
    "color_transfer",
    "poisson_blend",
    "resample_bilinear",
    "read_png",
    "write_png",
    "RGB_TO_LMS",
    "LMS_LOG_FLOOR",
]

# Decorrelated lab space per Reinhard et al.'s color-transfer construction:
# sRGB -> LMS cone response, log10, then the scaled opponent-axis mix.
RGB_TO_LMS = np.array([
    [0.3811, 0.5783, 0.0402],
    [0.1967, 0.7244, 0.0782],
    [0.0241, 0.1288, 0.8444],
])
# Numerical inverse; the rounded matrix published alongside the forward one
# is not exact enough for a 1e-5 round trip.
LMS_TO_RGB = np.linalg.inv(RGB_TO_LMS)
_OPPONENT = np.diag([1.0 / np.sqrt(3.0), 1.0 / np.sqrt(6.0), 1.0 / np.sqrt(2.0)]) @ np.array([
    [1.0, 1.0, 1.0],
    [1.0, 1.0, -2.0],
    [1.0, -1.0, 0.0],
])
_OPPONENT_INV = np.linalg.inv(_OPPONENT)
# Floor on LMS values before the log, so black pixels stay finite.
LMS_LOG_FLOOR = 1.0 / 255.0


def _rgb_to_lab_flat(flat: np.ndarray) -> np.ndarray:
    lms = flat @ RGB_TO_LMS.T
    loglms = np.log10(np.maximum(lms, LMS_LOG_FLOOR))
    return loglms @ _OPPONENT.T


def _lab_to_rgb_flat(flat: np.ndarray) -> np.ndarray:
    loglms = flat @ _OPPONENT_INV.T
    lms = np.power(10.0, loglms)
    return lms @ LMS_TO_RGB.T


def rgb_to_lab(img) -> np.ndarray:
    """Convert an sRGB image to the decorrelated lab space (l, alpha, beta)."""
    arr = make_raster(img)
    return _rgb_to_lab_flat(arr.reshape(-1, 3)).reshape(arr.shape)


def lab_to_rgb(img) -> np.ndarray:
    """Inverse of :func:`rgb_to_lab`; output clamped to the [0, 1] image range."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValidationError(f"expected an H×W×3 lab array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("lab image contains non-finite values")
    rgb = _lab_to_rgb_flat(arr.reshape(-1, 3)).reshape(arr.shape)
    return np.clip(rgb, 0.0, 1.0)


def lightness(img) -> np.ndarray:
    """The l channel of the lab representation as a 2-D array."""
    return rgb_to_lab(img)[:, :, 0]


def lowpass_filter(arr, threshold: float = 0.06) -> np.ndarray:
    """Brick-wall low-pass: zero every DFT coefficient whose normalized radial
    frequency ||(u/H, v/W)||_2 exceeds ``threshold``; frequencies lie in [-0.5, 0.5).
    """
    x = np.asarray(arr, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError(f"lowpass_filter expects a 2-D array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("lowpass_filter input contains non-finite values")
    threshold = check_real(threshold, "threshold", 0.0, np.sqrt(0.5))
    h, w = x.shape
    fu = np.fft.fftfreq(h)
    fv = np.fft.fftfreq(w)
    keep = np.hypot(fu[:, None], fv[None, :]) <= threshold
    return np.fft.ifft2(np.fft.fft2(x) * keep).real


def _weighted_lab_stats(lab: np.ndarray, mask: np.ndarray):
    w = mask / mask.sum()
    mean = np.einsum("hw,hwc->c", w, lab)
    var = np.einsum("hw,hwc->c", w, (lab - mean) ** 2)
    return mean, np.sqrt(var)


def color_transfer(target, target_mask, reference, reference_mask) -> np.ndarray:
    """Shift/scale the masked region of ``target`` so its per-channel lab
    statistics match the masked statistics of ``reference``.

    Pixels outside ``target_mask`` support are returned bit-identical; the
    transferred region is clamped to [0, 1].
    """
    target = check_raster(target, "target")
    reference = check_raster(reference, "reference")
    target_mask = check_mask(target_mask, shape=target.shape[:2], name="target_mask")
    reference_mask = check_mask(reference_mask, shape=reference.shape[:2], name="reference_mask")
    if np.count_nonzero(target_mask) < 2 or np.count_nonzero(reference_mask) < 2:
        raise ValidationError("color_transfer: masks need at least 2 pixels of support")

    lab_t = rgb_to_lab(target)
    lab_r = rgb_to_lab(reference)
    mean_t, std_t = _weighted_lab_stats(lab_t, target_mask)
    mean_r, std_r = _weighted_lab_stats(lab_r, reference_mask)
    # Flat-art regions can have zero variance; the floor keeps scale finite.
    scale = std_r / np.maximum(std_t, 1e-6)

    support = target_mask > 0.0
    moved = (lab_t[support] - mean_t) * scale + mean_r
    out = target.copy()
    out[support] = np.clip(_lab_to_rgb_flat(moved), 0.0, 1.0)
    return out


def poisson_blend(source, destination, mask, offset=(0, 0)) -> np.ndarray:
    """Seamless cloning: solve the discrete Poisson equation on the masked
    region with source gradients as guidance and destination values as the
    Dirichlet boundary.

    ``mask`` lives in source coordinates; ``offset`` = (row, col) places the
    source origin inside the destination. Out-of-mask destination pixels are
    returned bit-identical. Interior values are the linear-system solution and
    are intentionally not clamped, so the Poisson stencil holds exactly.
    """
    source = check_raster(source, "source", min_side=4)
    destination = check_raster(destination, "destination", min_side=4)
    mask = check_binary_mask(mask, shape=source.shape[:2], name="mask")
    try:
        dy, dx = (int(v) for v in offset)
    except (TypeError, ValueError) as exc:
        raise ValidationError("offset: expected a pair of integers") from exc

    ys, xs = np.nonzero(mask)
    out = destination.copy()
    n = len(ys)
    if n == 0:
        return out
    hs, ws = mask.shape
    hd, wd = destination.shape[:2]
    if ys.min() < 1 or ys.max() > hs - 2 or xs.min() < 1 or xs.max() > ws - 2:
        raise ValidationError("poisson_blend: mask touches the source border")
    if (ys + dy).min() < 1 or (ys + dy).max() > hd - 2 or (xs + dx).min() < 1 or (xs + dx).max() > wd - 2:
        raise ValidationError("poisson_blend: mask touches the destination border after offset")

    index = np.full(mask.shape, -1, dtype=np.int64)
    index[ys, xs] = np.arange(n)

    rows = [np.arange(n)]
    cols = [np.arange(n)]
    vals = [np.full(n, 4.0)]
    b = np.zeros((n, 3))
    b += 4.0 * source[ys, xs] - (
        source[ys - 1, xs] + source[ys + 1, xs] + source[ys, xs - 1] + source[ys, xs + 1]
    )
    for sy, sx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nbr = index[ys + sy, xs + sx]
        inside = nbr >= 0
        rows.append(np.arange(n)[inside])
        cols.append(nbr[inside])
        vals.append(np.full(inside.sum(), -1.0))
        border = ~inside
        b[border] += destination[ys[border] + sy + dy, xs[border] + sx + dx]

    a = scipy.sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    x0 = destination[ys + dy, xs + dx]
    for ch in range(3):
        sol, _ = scipy.sparse.linalg.cg(
            a, b[:, ch], x0=x0[:, ch].copy(), rtol=1e-8, atol=0.0, maxiter=10 * n
        )
        out[ys + dy, xs + dx, ch] = sol
    return out


def _sample_grid(n_out: int, n_in: int) -> np.ndarray:
    if n_out == 1:
        return np.zeros(1)
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def resample_bilinear(img, new_height: int, new_width: int) -> np.ndarray:
    """Corner-aligned bilinear resampling; identity when dimensions match."""
    arr = check_raster(img, "image")
    new_height = int(new_height)
    new_width = int(new_width)
    if new_height < 1 or new_width < 1:
        raise ValidationError("resample_bilinear: output dimensions must be >= 1")
    h, w = arr.shape[:2]
    if (new_height, new_width) == (h, w):
        return arr.copy()

    ys = _sample_grid(new_height, h)
    xs = _sample_grid(new_width, w)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    top = arr[y0][:, x0] * (1 - fx) + arr[y0][:, x1] * fx
    bot = arr[y1][:, x0] * (1 - fx) + arr[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def write_png(path, img) -> None:
    """Encode as 8-bit PNG, rounding half-up and clamping to [0, 1]."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValidationError(f"write_png expects an H×W×3 array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("write_png: non-finite pixel values")
    quantized = np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5)
    data = np.clip(quantized, 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    """Decode an 8-bit PNG to a float image in [0, 1]."""
    with Image.open(path) as handle:
        data = np.asarray(handle.convert("RGB"), dtype=np.float64)
    return data / 255.0
