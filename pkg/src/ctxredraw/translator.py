"""Context-aware redrawer.

A generator redraws a boxed region of an eye crop to match a style exemplar
set while preserving the surrounding pixels.  It trains against two
multi-class partial-convolution discriminators that weight the crop through
complementary masks: a quality discriminator judging the redrawn interior and
a context discriminator judging the fit of the region into its surroundings.
Losses: a triple reconstruction loss over {t = G(l, style), l_hat = G(l, l),
h_hat = G(h, h)}, hinge losses with R1 regularization for the discriminators,
and an adversarial-plus-feature-matching loss for the generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator
from torch import nn
from torch.nn import functional as F

from . import datasetgen as dg
from . import imagemath as im
from . import neuralcore as nc
from . import styleenc as se
from .validation import (DatasetError, ValidationError, check_box, check_choice,
                         check_fraction, check_positive_int, check_real,
                         make_raster)

DEFAULT_GAMMA = 10.0
DEFAULT_LOWPASS_THRESHOLD = 0.06

_SOFTPLUS_SHIFT = math.log(math.e - 1.0)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MaskPair:
    """Complementary discriminator weighting masks over one crop."""

    quality_mask: np.ndarray
    context_mask: np.ndarray


@dataclass(frozen=True)
class GeneratedTriplet:
    """The three generator outputs judged jointly during training."""

    t: object      # G(content, style of the high-detail design)
    l_hat: object  # G(content, content's own style)
    h_hat: object  # G(high, high's own style)

    def __iter__(self):
        return iter((self.t, self.l_hat, self.h_hat))


def build_masks(crop_size, region_box, band_fraction: float = 0.125,
                border_fraction: float = 0.25) -> MaskPair:
    """Build the quality/context mask pair for a boxed region inside a crop.

    The quality mask is 1 exactly on the region box.  The context mask is 1
    everywhere except the box's deep interior, so the two supports overlap on
    an inner band whose per-axis width is ``max(1, round(band_fraction * box
    dimension))``.  ``border_fraction`` documents the surrounding context ring
    expected from crop standardization and is validated only.
    """
    try:
        crop_h, crop_w = (int(v) for v in crop_size)
    except (TypeError, ValueError) as exc:
        raise ValidationError("crop_size: expected an integer pair") from exc
    check_positive_int(crop_h, "crop height")
    check_positive_int(crop_w, "crop width")
    check_fraction(band_fraction, "band_fraction")
    check_fraction(border_fraction, "border_fraction")
    x, y, w, h = check_box(region_box, bounds=(crop_w, crop_h), name="region_box")

    quality = np.zeros((crop_h, crop_w))
    quality[y:y + h, x:x + w] = 1.0
    band_x = max(1, round(band_fraction * w))
    band_y = max(1, round(band_fraction * h))
    context = np.ones((crop_h, crop_w))
    if w > 2 * band_x and h > 2 * band_y:
        context[y + band_y:y + h - band_y, x + band_x:x + w - band_x] = 0.0
    return MaskPair(quality_mask=quality, context_mask=context)


# ---------------------------------------------------------------------------
# Tensor plumbing
# ---------------------------------------------------------------------------

def _as_bchw(image, name: str = "image") -> torch.Tensor:
    """Coerce an H×W×3 array or a (3,H,W)/(B,3,H,W) tensor to B×3×H×W."""
    if torch.is_tensor(image):
        if image.dim() == 3 and image.shape[0] == 3:
            return image.unsqueeze(0)
        if image.dim() == 4 and image.shape[1] == 3:
            return image
        raise ValidationError(f"{name}: expected a (3,H,W) or (B,3,H,W) tensor")
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValidationError(f"{name}: expected an H×W×3 array, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: contains non-finite values")
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)


def _mask_tensor(mask, like: torch.Tensor):
    """Convert an (H, W) mask to a B×1×H×W tensor matching ``like``."""
    if mask is None:
        return None
    if torch.is_tensor(mask):
        out = mask
    else:
        arr = np.asarray(mask, dtype=np.float64)
        if arr.ndim != 2:
            raise ValidationError("mask: expected a 2-D array")
        out = torch.from_numpy(arr)
    if out.dim() == 2:
        out = out.unsqueeze(0).unsqueeze(0)
    return out.to(like.dtype).expand(like.shape[0], 1, like.shape[2], like.shape[3])


def _call_scores(discriminator, images, mask):
    return discriminator(images, mask)


def _call_scores_features(discriminator, images, mask):
    return discriminator(images, mask, return_features=True)


def _image_of(obj):
    return obj.image if hasattr(obj, "image") else obj


def _triplet_images(triplet):
    if isinstance(triplet, GeneratedTriplet):
        return triplet.t, triplet.l_hat, triplet.h_hat
    try:
        t, l_hat, h_hat = triplet
    except (TypeError, ValueError) as exc:
        raise ValidationError("triplet: expected (t, l_hat, h_hat)") from exc
    return t, l_hat, h_hat


# ---------------------------------------------------------------------------
# Hinge losses
# ---------------------------------------------------------------------------

def _score_map(scores, class_id) -> torch.Tensor:
    """Extract the class's score map as a (B, h, w) tensor."""
    if torch.is_tensor(scores):
        maps = scores
    else:
        arr = np.asarray(scores, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValidationError("scores must be finite")
        maps = torch.from_numpy(arr)
    if maps.dim() == 3:
        maps = maps.unsqueeze(0)
    if maps.dim() != 4:
        raise ValidationError("scores: expected (classes, h, w) or (batch, classes, h, w)")
    n_classes = maps.shape[1]
    try:
        idx = int(class_id)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"unknown class {class_id!r}") from exc
    if idx != class_id or not 0 <= idx < n_classes:
        raise ValidationError(f"unknown class {class_id!r} among {n_classes} classes")
    return maps[:, idx]


def hinge_positive(scores, class_id, input_gradient_sq_norm,
                   gamma: float = DEFAULT_GAMMA):
    """Positive-example hinge with R1 penalty.

    Mean over the class's score map of max(0, 1 - score), plus gamma times
    the squared norm of the score's gradient with respect to the input image
    (supplied by the caller, computed by exact differentiation).
    """
    smap = _score_map(scores, class_id)
    gamma = check_real(gamma, "gamma", lo=0.0)
    tensor_in = torch.is_tensor(scores) or torch.is_tensor(input_gradient_sq_norm)
    if not torch.is_tensor(input_gradient_sq_norm):
        input_gradient_sq_norm = check_real(input_gradient_sq_norm,
                                            "input_gradient_sq_norm", lo=0.0)
    value = torch.clamp(1.0 - smap, min=0.0).mean() + gamma * input_gradient_sq_norm
    return value if tensor_in else float(value.detach())


def hinge_negative(scores, class_id):
    """Negative-example hinge: mean of max(0, 1 + score) over the class map."""
    smap = _score_map(scores, class_id)
    value = torch.clamp(1.0 + smap, min=0.0).mean()
    return value if torch.is_tensor(scores) else float(value.detach())


# ---------------------------------------------------------------------------
# Discriminator objectives
# ---------------------------------------------------------------------------

def _positive_with_r1(discriminator, image_t, mask_t, class_id, gamma):
    """Hinge-positive term scored on a real image, with the R1 penalty taken
    against that image."""
    x = image_t.detach().clone().requires_grad_(True)
    maps = _call_scores(discriminator, x, mask_t)
    smap = _score_map(maps, class_id)
    scalar = smap.mean(dim=(1, 2)).sum()
    if scalar.requires_grad:
        (grad,) = torch.autograd.grad(scalar, x, create_graph=True,
                                      allow_unused=True)
        if grad is None:
            penalty = torch.zeros((), dtype=smap.dtype)
        else:
            penalty = grad.pow(2).reshape(grad.shape[0], -1).sum(dim=1).mean()
    else:
        penalty = torch.zeros((), dtype=smap.dtype)
    return hinge_positive(maps, class_id, penalty, gamma=gamma)


def discriminator_objective(role, real_pair, triplet, classes, *,
                            discriminator, mask=None,
                            gamma: float = DEFAULT_GAMMA):
    """The training objective of one discriminator on one sample.

    role="quality": L_P(h, H) + (L_N(l, H) + L_N(t, H)) / 2.
    role="context": L_P(h, H) + L_N(t, H) + L_P(l, L) + L_N(l_hat, L).
    Real images carry the R1 penalty; the mask enters the discriminator as
    its initial coverage.
    """
    check_choice(role, ("quality", "context"), "role")
    class_l, class_h = classes
    if class_l == class_h:
        raise ValidationError("class ids must differ")
    l_img, h_img = real_pair
    t_img, l_hat_img, _ = _triplet_images(triplet)
    l_t = _as_bchw(_image_of(l_img), "l")
    h_t = _as_bchw(_image_of(h_img), "h")
    t_t = _as_bchw(_image_of(t_img), "t")
    mask_t = _mask_tensor(mask, l_t)

    def negative(image_t, class_id):
        maps = _call_scores(discriminator, image_t, mask_t)
        return hinge_negative(maps, class_id)

    pos_h = _positive_with_r1(discriminator, h_t, mask_t, class_h, gamma)
    if role == "quality":
        value = pos_h + (negative(l_t, class_h) + negative(t_t, class_h)) / 2.0
    else:
        l_hat_t = _as_bchw(_image_of(l_hat_img), "l_hat")
        pos_l = _positive_with_r1(discriminator, l_t, mask_t, class_l, gamma)
        value = pos_h + negative(t_t, class_h) + pos_l + negative(l_hat_t, class_l)
    tensor_in = any(torch.is_tensor(v) for v in
                    (_image_of(l_img), _image_of(h_img), _image_of(t_img)))
    return value if tensor_in else float(value.detach())


# ---------------------------------------------------------------------------
# Generator-side losses
# ---------------------------------------------------------------------------

def adversarial_generator_loss(discriminator, x, class_id, reference, *,
                               mask=None, hinge: bool = False):
    """Adversarial term plus feature matching against a same-class real image.

    mean|1 - D(x)_class| over the class score map (or its hinged variant
    max(0, 1 - score) when ``hinge``), plus the mean absolute difference of
    the discriminator's penultimate-block features between ``x`` and the real
    ``reference``.
    """
    x_t = _as_bchw(_image_of(x), "x")
    ref_t = _as_bchw(_image_of(reference), "reference")
    mask_t = _mask_tensor(mask, x_t)
    maps_x, feats_x = _call_scores_features(discriminator, x_t, mask_t)
    _, feats_ref = _call_scores_features(discriminator, ref_t, mask_t)
    smap = _score_map(maps_x, class_id)
    if hinge:
        score_term = torch.clamp(1.0 - smap, min=0.0).mean()
    else:
        score_term = (1.0 - smap).abs().mean()
    if feats_x.shape != feats_ref.shape:
        raise ValidationError("feature maps of x and reference must match")
    value = score_term + (feats_x - feats_ref).abs().mean()
    tensor_in = torch.is_tensor(_image_of(x)) or torch.is_tensor(_image_of(reference))
    return value if tensor_in else float(value.detach())


def reconstruction_loss(triplet, l, h,
                        threshold: float = DEFAULT_LOWPASS_THRESHOLD):
    """Triple reconstruction loss.

    mean|h - h_hat| plus the mean absolute low-pass lightness residuals of t
    and l_hat against l; the low-detail terms compare only structure below
    the filter threshold, leaving high-frequency detail free.
    """
    t_img, l_hat_img, h_hat_img = _triplet_images(triplet)
    inputs = [_image_of(v) for v in (t_img, l_hat_img, h_hat_img, l, h)]
    tensor_in = any(torch.is_tensor(v) for v in inputs)
    t_t, l_hat_t, h_hat_t, l_t, h_t = (_as_bchw(v) for v in inputs)
    shapes = {v.shape for v in (t_t, l_hat_t, h_hat_t, l_t, h_t)}
    if len(shapes) != 1:
        raise ValidationError(f"reconstruction inputs must share a shape, got {shapes}")
    high_term = (h_t - h_hat_t).abs().mean()
    low_l = nc.lowpass_torch(nc.lightness_torch(l_t), threshold)
    low_t = nc.lowpass_torch(nc.lightness_torch(t_t), threshold)
    low_l_hat = nc.lowpass_torch(nc.lightness_torch(l_hat_t), threshold)
    value = high_term + (low_l - low_t).abs().mean() + (low_l - low_l_hat).abs().mean()
    return value if tensor_in else float(value.detach())


def generator_objective(triplet, sample, Q, C, *, classes, masks: MaskPair = None,
                        threshold: float = DEFAULT_LOWPASS_THRESHOLD,
                        hinge_adversarial: bool = False):
    """Full generator loss: reconstruction plus four adversarial terms.

    L_R + L_Q(t, H) + L_Q(l_hat, L) + L_C(t, L) + L_C(h_hat, H), where each
    adversarial term uses the matching real image from the sample as its
    feature reference and the role's mask.
    """
    class_l, class_h = classes
    if class_l == class_h:
        raise ValidationError("class ids must differ")
    l = _image_of(sample.content)
    h = _image_of(sample.high)
    t_img, l_hat_img, h_hat_img = _triplet_images(triplet)
    q_mask = masks.quality_mask if masks is not None else None
    c_mask = masks.context_mask if masks is not None else None
    return (reconstruction_loss(triplet, l, h, threshold)
            + adversarial_generator_loss(Q, t_img, class_h, h, mask=q_mask,
                                         hinge=hinge_adversarial)
            + adversarial_generator_loss(Q, l_hat_img, class_l, l, mask=q_mask,
                                         hinge=hinge_adversarial)
            + adversarial_generator_loss(C, t_img, class_l, l, mask=c_mask,
                                         hinge=hinge_adversarial)
            + adversarial_generator_loss(C, h_hat_img, class_h, h, mask=c_mask,
                                         hinge=hinge_adversarial))


def highfreq_energy(image, box=None,
                    threshold: float = DEFAULT_LOWPASS_THRESHOLD) -> float:
    """Mean squared lightness residual above the low-pass threshold.

    Measures how much fine detail a crop (optionally restricted to a box)
    carries; redrawing a low-detail region should raise it.
    """
    raster = make_raster(image)
    light = im.lightness(raster)
    residual = light - im.lowpass_filter(light, threshold)
    if box is not None:
        x, y, w, h = check_box(box, bounds=(light.shape[1], light.shape[0]))
        residual = residual[y:y + h, x:x + w]
    return float(np.mean(residual ** 2))


# ---------------------------------------------------------------------------
# Networks
# ---------------------------------------------------------------------------

class DiscriminatorNet(nn.Module):
    """Multi-class score maps over masked crops via partial convolutions.

    Stride-2 partial-conv blocks propagate the weighting mask as coverage;
    the penultimate block's activations serve as the feature-matching
    representation and a 1×1 partial conv maps them to one score map per
    design class.
    """

    def __init__(self, n_classes: int, base_width: int = 32, depth: int = 4,
                 seed: int = 0):
        super().__init__()
        check_positive_int(n_classes, "n_classes")
        check_positive_int(base_width, "base_width")
        check_positive_int(depth, "depth")
        self.n_classes = n_classes
        self.base_width = base_width
        self.depth = depth
        self.seed = seed
        generator = torch.Generator().manual_seed(seed)
        blocks = []
        cin = 3
        for i in range(depth):
            cout = base_width * (2 ** i)
            blocks.append(nc.PartialConv2d(cin, cout, 3, stride=2,
                                           generator=generator))
            cin = cout
        self.blocks = nn.ModuleList(blocks)
        self.head = nc.PartialConv2d(cin, n_classes, 1, stride=1,
                                     generator=generator)

    def forward(self, images: torch.Tensor, mask=None, return_features=False):
        if images.dim() != 4:
            raise ValidationError("discriminator input must be B×C×H×W")
        if mask is None:
            coverage = torch.ones(images.shape[0], 1, images.shape[2],
                                  images.shape[3], dtype=images.dtype)
        else:
            coverage = _mask_tensor(mask, images).contiguous()
        h = images
        for block in self.blocks:
            h, coverage = block(h, coverage)
            h = F.leaky_relu(h, nc.LEAKY_SLOPE)
        features = h
        maps, _ = self.head(h, coverage)
        if return_features:
            return maps, features
        return maps


class _ResidualBlock(nn.Module):
    def __init__(self, channels: int, generator: torch.Generator):
        super().__init__()
        self.conv1 = nc.seeded_conv2d(channels, channels, 3, generator=generator)
        self.conv2 = nc.seeded_conv2d(channels, channels, 3, generator=generator)

    def forward(self, x):
        return F.relu(x + self.conv2(F.relu(self.conv1(x))))


class GeneratorNet(nn.Module):
    """Encoder-decoder redrawer with a style-driven AdaIN decoder.

    The style path reuses the design encoder up to (but excluding) its final
    embedding layer: each style image is encoded conditioned on the style
    set's own pooled lightness statistics, the penultimate features are
    averaged over the set, and a trainable linear layer turns them into the
    decoder's per-block AdaIN means and scales.  The design encoder itself
    stays frozen.
    """

    def __init__(self, style_encoder: se.DesignEncoderNet, base_width: int = 32,
                 res_blocks: int = 2, seed: int = 0):
        super().__init__()
        check_positive_int(base_width, "base_width")
        check_positive_int(res_blocks, "res_blocks")
        self.base_width = base_width
        self.res_blocks = res_blocks
        self.seed = seed
        generator = torch.Generator().manual_seed(seed)

        down_widths = [base_width, base_width * 2, base_width * 4]
        downs = []
        cin = 3
        for cout in down_widths:
            downs.append(nc.seeded_conv2d(cin, cout, 3, stride=2,
                                          generator=generator))
            cin = cout
        self.down = nn.ModuleList(downs)
        self.res = nn.ModuleList(_ResidualBlock(cin, generator)
                                 for _ in range(res_blocks))
        self.up_widths = [base_width * 2, base_width, base_width]
        ups = []
        for cout in self.up_widths:
            ups.append(nc.seeded_conv2d(cin, cout, 3, stride=1,
                                        generator=generator))
            cin = cout
        self.up = nn.ModuleList(ups)
        self.to_rgb = nc.seeded_conv2d(cin, 3, 3, stride=1, generator=generator)
        self.adain_head = nc.seeded_linear(style_encoder.content_width,
                                           2 * sum(self.up_widths),
                                           generator=generator)
        self.style_encoder = style_encoder
        self.style_encoder.requires_grad_(False)

    def style_vector(self, style_images: torch.Tensor) -> torch.Tensor:
        """(N, 3, H, W) style set -> pooled penultimate encoder features."""
        if style_images.dim() != 4 or style_images.shape[0] == 0:
            raise ValidationError("style set must be a nonempty N×3×H×W tensor")
        light = nc.lightness_torch(style_images).unsqueeze(1)
        context = self.style_encoder.style_features(light).mean(dim=0, keepdim=True)
        features = self.style_encoder.penultimate(
            style_images, context.expand(style_images.shape[0], -1))
        return features.mean(dim=0)

    def forward(self, content: torch.Tensor,
                style_vectors: torch.Tensor) -> torch.Tensor:
        if content.dim() != 4 or content.shape[1] != 3:
            raise ValidationError("content must be B×3×H×W")
        factor = 2 ** len(self.down)
        if content.shape[2] % factor or content.shape[3] % factor:
            raise ValidationError(
                f"content sides must be divisible by {factor}, got "
                f"{content.shape[2]}×{content.shape[3]}")
        params = self.adain_head(style_vectors)
        h = content
        for conv in self.down:
            h = F.relu(conv(h))
        for block in self.res:
            h = block(h)
        offset = 0
        for conv, width in zip(self.up, self.up_widths):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = conv(h)
            mean = params[..., offset:offset + width]
            std = F.softplus(params[..., offset + width:offset + 2 * width]
                             + _SOFTPLUS_SHIFT)
            h = F.relu(nc.adain(h, mean, std))
            offset += 2 * width
        return torch.sigmoid(self.to_rgb(h))


def _resolve_generator(weights) -> GeneratorNet:
    if isinstance(weights, GeneratorNet):
        return weights
    if isinstance(weights, TranslatorTrainResult):
        weights = weights.weights_g
    if not (isinstance(weights, tuple) and len(weights) == 2):
        raise ValidationError("weights_G must be a GeneratorNet or (state, meta)")
    state, meta = weights
    encoder = se.DesignEncoderNet(se.EncoderConfig(**meta["encoder"]))
    net = GeneratorNet(encoder, base_width=meta["base_width"],
                       res_blocks=meta["res_blocks"], seed=meta["seed"])
    from .weights import load_state_into
    load_state_into(net, state)
    return net


def generate(weights_G, content, style_set: Sequence) -> np.ndarray:
    """Redraw ``content`` to match the pooled style of ``style_set``."""
    net = _resolve_generator(weights_G)
    if len(style_set) == 0:
        raise ValidationError("style_set must be nonempty")
    raster = make_raster(content)
    dtype = next(net.parameters()).dtype
    with torch.no_grad():
        content_t = _as_bchw(raster).to(dtype)
        styles = torch.stack([
            _as_bchw(make_raster(_image_of(s))).squeeze(0) for s in style_set
        ]).to(dtype)
        vector = net.style_vector(styles).unsqueeze(0)
        out = net(content_t, vector)
    return out.squeeze(0).permute(1, 2, 0).numpy().astype(np.float64)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TranslatorConfig:
    """Architecture and training settings for the redrawer."""

    in_size: int = 64
    g_base: int = 32
    g_res_blocks: int = 2
    d_base: int = 32
    d_depth: int = 4
    steps: int = 2000
    batch: int = 8
    lr_g: float = 1e-4
    lr_d: float = 2e-4
    style_k: int = 3
    band_fraction: float = 0.125
    border_fraction: float = 0.25
    lowpass_threshold: float = DEFAULT_LOWPASS_THRESHOLD
    gamma: float = DEFAULT_GAMMA
    hinge_adversarial: bool = False
    seed: int = 0
    log_every: int = 1

    def __post_init__(self):
        for name in ("in_size", "g_base", "g_res_blocks", "d_base", "d_depth",
                     "steps", "batch", "style_k", "log_every"):
            check_positive_int(getattr(self, name), name)
        for name in ("lr_g", "lr_d"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        check_fraction(self.band_fraction, "band_fraction")
        check_fraction(self.border_fraction, "border_fraction")
        check_real(self.gamma, "gamma", lo=0.0)
        check_real(self.lowpass_threshold, "lowpass_threshold", lo=0.0)
        if self.in_size % 8:
            raise ValidationError("in_size must be divisible by 8")


@dataclass
class TranslatorTrainResult:
    weights_g: tuple
    weights_q: tuple
    weights_c: tuple
    log: list
    classes: list

    def __iter__(self):
        return iter((self.weights_g, self.weights_q, self.weights_c))


def _stack_images(patches, dtype=torch.float32) -> torch.Tensor:
    arrays = [np.asarray(_image_of(p), dtype=np.float64) for p in patches]
    return torch.from_numpy(np.stack(arrays)).permute(0, 3, 1, 2).to(dtype)


def _gather_class(maps: torch.Tensor, ids: torch.Tensor) -> torch.Tensor:
    idx = ids.view(-1, 1, 1, 1).expand(-1, 1, maps.shape[2], maps.shape[3])
    return maps.gather(1, idx).squeeze(1)


def _self_style_vectors(encoder: se.DesignEncoderNet,
                        images: torch.Tensor) -> torch.Tensor:
    """Each image treated as its own one-element style set; batched."""
    light = nc.lightness_torch(images).unsqueeze(1)
    context = encoder.style_features(light)
    return encoder.penultimate(images, context)


def _set_style_vectors(net: GeneratorNet, batch) -> torch.Tensor:
    sets = [_stack_images(s.style_set) for s in batch]
    sizes = {s.shape[0] for s in sets}
    if len(sizes) == 1:
        k = sizes.pop()
        stacked = torch.cat(sets)
        light = nc.lightness_torch(stacked).unsqueeze(1)
        style_feats = net.style_encoder.style_features(light)
        context = style_feats.view(len(sets), k, -1).mean(dim=1)
        features = net.style_encoder.penultimate(
            stacked, context.repeat_interleave(k, dim=0))
        return features.view(len(sets), k, -1).mean(dim=1)
    return torch.stack([net.style_vector(s) for s in sets])


def _batch_masks(batch, config, cache) -> tuple[torch.Tensor, torch.Tensor]:
    quality, context = [], []
    for sample in batch:
        box = tuple(sample.content.box)
        size = sample.content.image.shape[:2]
        key = (size, box)
        if key not in cache:
            cache[key] = build_masks(size, box, config.band_fraction,
                                     config.border_fraction)
        pair = cache[key]
        quality.append(pair.quality_mask)
        context.append(pair.context_mask)
    to_tensor = lambda masks: torch.from_numpy(np.stack(masks)).unsqueeze(1).to(torch.float32)
    return to_tensor(quality), to_tensor(context)


def _adv_batch(dnet, x, ids, reference, mask, hinge):
    maps, feats = dnet(x, mask, return_features=True)
    smap = _gather_class(maps, ids)
    if hinge:
        score_term = torch.clamp(1.0 - smap, min=0.0).mean()
    else:
        score_term = (1.0 - smap).abs().mean()
    with torch.no_grad():
        _, feats_ref = dnet(reference, mask, return_features=True)
    return score_term + (feats - feats_ref).abs().mean()


def _positive_batch(dnet, images, ids, mask, gamma):
    x = images.detach().clone().requires_grad_(True)
    maps = dnet(x, mask)
    smap = _gather_class(maps, ids)
    hinge = torch.clamp(1.0 - smap, min=0.0).mean()
    (grad,) = torch.autograd.grad(smap.mean(dim=(1, 2)).sum(), x,
                                  create_graph=True)
    penalty = grad.pow(2).reshape(grad.shape[0], -1).sum(dim=1).mean()
    return hinge + gamma * penalty


def _negative_batch(dnet, images, ids, mask):
    maps = dnet(images, mask)
    return torch.clamp(1.0 + _gather_class(maps, ids), min=0.0).mean()


def translation_classes(corpus: dg.Corpus) -> list[str]:
    """Design ids usable as translation classes (both detail levels present)."""
    return [d for d in corpus.all_designs()
            if corpus.pool(design_id=d, detail="low")
            and corpus.pool(design_id=d, detail="high")]


def train_redrawer(dataset, frozen_E, config: TranslatorConfig | None = None
                   ) -> TranslatorTrainResult:
    """Adversarial training: one Q and C update, then one G update, per batch.

    The design encoder stays frozen throughout; its parameters ride along
    inside the generator weights so that inference is self-contained.
    """
    config = config or TranslatorConfig()
    corpus = dataset if isinstance(dataset, dg.Corpus) else dg.Corpus(list(dataset))
    classes = translation_classes(corpus)
    if len(classes) < 2:
        raise DatasetError("training needs >= 2 designs with both detail levels")
    class_index = {d: i for i, d in enumerate(classes)}
    n_classes = len(classes)

    encoder = frozen_E if isinstance(frozen_E, se.DesignEncoderNet) \
        else se._resolve_net(frozen_E)
    encoder.requires_grad_(False)

    torch.manual_seed(config.seed)
    g_net = GeneratorNet(encoder, base_width=config.g_base,
                         res_blocks=config.g_res_blocks, seed=config.seed)
    q_net = DiscriminatorNet(n_classes, config.d_base, config.d_depth,
                             seed=config.seed + 1)
    c_net = DiscriminatorNet(n_classes, config.d_base, config.d_depth,
                             seed=config.seed + 2)
    opt_g = torch.optim.Adam((p for p in g_net.parameters() if p.requires_grad),
                             lr=config.lr_g)
    opt_q = torch.optim.Adam(q_net.parameters(), lr=config.lr_d)
    opt_c = torch.optim.Adam(c_net.parameters(), lr=config.lr_d)

    rng = np.random.default_rng([config.seed, 17])
    mask_cache = {}
    log = []
    for step in range(1, config.steps + 1):
        batch = dg.sample_translation_batch(corpus, config.batch, rng,
                                            style_k=config.style_k)
        size = config.batch
        l_imgs = _stack_images([s.content for s in batch])
        h_imgs = _stack_images([s.high for s in batch])
        ids_l = torch.tensor([class_index[s.design_low] for s in batch])
        ids_h = torch.tensor([class_index[s.design_high] for s in batch])
        q_mask, c_mask = _batch_masks(batch, config, mask_cache)

        with torch.no_grad():
            style_h = _set_style_vectors(g_net, batch)
            style_l = _self_style_vectors(encoder, l_imgs)
            style_hh = _self_style_vectors(encoder, h_imgs)

        contents = torch.cat([l_imgs, l_imgs, h_imgs])
        styles = torch.cat([style_h, style_l, style_hh])
        outputs = g_net(contents, styles)
        t = outputs[:size]
        l_hat = outputs[size:2 * size]
        h_hat = outputs[2 * size:]

        # Discriminator step (Eq. 4 for both roles).
        opt_q.zero_grad()
        q_obj = (_positive_batch(q_net, h_imgs, ids_h, q_mask, config.gamma)
                 + (_negative_batch(q_net, l_imgs, ids_h, q_mask)
                    + _negative_batch(q_net, t.detach(), ids_h, q_mask)) / 2.0)
        q_obj.backward()
        opt_q.step()

        opt_c.zero_grad()
        c_obj = (_positive_batch(c_net, h_imgs, ids_h, c_mask, config.gamma)
                 + _negative_batch(c_net, t.detach(), ids_h, c_mask)
                 + _positive_batch(c_net, l_imgs, ids_l, c_mask, config.gamma)
                 + _negative_batch(c_net, l_hat.detach(), ids_l, c_mask))
        c_obj.backward()
        opt_c.step()

        # Generator step (Eq. 6) against the just-updated discriminators.
        opt_g.zero_grad()
        recon = reconstruction_loss(GeneratedTriplet(t, l_hat, h_hat),
                                    l_imgs, h_imgs, config.lowpass_threshold)
        lq_t = _adv_batch(q_net, t, ids_h, h_imgs, q_mask, config.hinge_adversarial)
        lq_l_hat = _adv_batch(q_net, l_hat, ids_l, l_imgs, q_mask,
                              config.hinge_adversarial)
        lc_t = _adv_batch(c_net, t, ids_l, l_imgs, c_mask, config.hinge_adversarial)
        lc_h_hat = _adv_batch(c_net, h_hat, ids_h, h_imgs, c_mask,
                              config.hinge_adversarial)
        g_obj = recon + lq_t + lq_l_hat + lc_t + lc_h_hat
        g_obj.backward()
        opt_g.step()

        if step % config.log_every == 0:
            log.append((step,) + tuple(
                float(v.detach()) for v in
                (recon, lq_t, lq_l_hat, lc_t, lc_h_hat, q_obj, c_obj)))

    encoder_meta = {"base_width": encoder.config.base_width,
                    "style_width": encoder.config.style_width,
                    "depth": encoder.config.depth,
                    "embed_dim": encoder.config.embed_dim,
                    "seed": encoder.config.seed}
    g_meta = {"arch": "redrawer-generator", "base_width": config.g_base,
              "res_blocks": config.g_res_blocks, "seed": config.seed,
              "in_size": config.in_size, "encoder": encoder_meta,
              "classes": classes}
    d_meta_common = {"base_width": config.d_base, "depth": config.d_depth,
                     "n_classes": n_classes, "classes": classes}

    def snapshot(net):
        return {name: value.detach().numpy().copy()
                for name, value in net.state_dict().items()}

    return TranslatorTrainResult(
        weights_g=(snapshot(g_net), g_meta),
        weights_q=(snapshot(q_net), {"arch": "redrawer-discriminator",
                                     "role": "quality",
                                     "seed": config.seed + 1, **d_meta_common}),
        weights_c=(snapshot(c_net), {"arch": "redrawer-discriminator",
                                     "role": "context",
                                     "seed": config.seed + 2, **d_meta_common}),
        log=log,
        classes=classes,
    )


def resolve_discriminator(weights) -> DiscriminatorNet:
    """Rebuild a discriminator from a (state, meta) pair."""
    state, meta = weights
    net = DiscriminatorNet(meta["n_classes"], meta["base_width"], meta["depth"],
                           seed=meta["seed"])
    from .weights import load_state_into
    load_state_into(net, state)
    return net


# ---------------------------------------------------------------------------
# Estimator wrapper
# ---------------------------------------------------------------------------

class ContextTranslator(BaseEstimator):
    """Estimator facade over the redrawer.

    ``fit`` trains on a patch corpus (training a design encoder first unless
    one is supplied); ``predict`` maps (content, style_set) pairs to redrawn
    images.
    """

    def __init__(self, in_size=64, g_base=32, g_res_blocks=2, d_base=32,
                 d_depth=4, steps=2000, batch=8, lr_g=1e-4, lr_d=2e-4,
                 style_k=3, band_fraction=0.125, border_fraction=0.25,
                 lowpass_threshold=DEFAULT_LOWPASS_THRESHOLD,
                 gamma=DEFAULT_GAMMA, hinge_adversarial=False, seed=0):
        self.in_size = in_size
        self.g_base = g_base
        self.g_res_blocks = g_res_blocks
        self.d_base = d_base
        self.d_depth = d_depth
        self.steps = steps
        self.batch = batch
        self.lr_g = lr_g
        self.lr_d = lr_d
        self.style_k = style_k
        self.band_fraction = band_fraction
        self.border_fraction = border_fraction
        self.lowpass_threshold = lowpass_threshold
        self.gamma = gamma
        self.hinge_adversarial = hinge_adversarial
        self.seed = seed

    def _config(self) -> TranslatorConfig:
        return TranslatorConfig(
            in_size=self.in_size, g_base=self.g_base,
            g_res_blocks=self.g_res_blocks, d_base=self.d_base,
            d_depth=self.d_depth, steps=self.steps, batch=self.batch,
            lr_g=self.lr_g, lr_d=self.lr_d, style_k=self.style_k,
            band_fraction=self.band_fraction,
            border_fraction=self.border_fraction,
            lowpass_threshold=self.lowpass_threshold, gamma=self.gamma,
            hinge_adversarial=self.hinge_adversarial, seed=self.seed)

    def fit(self, X, y=None, encoder=None):
        corpus = X if isinstance(X, dg.Corpus) else dg.Corpus(list(X))
        if encoder is None:
            encoder = se.train_style_encoder(corpus,
                                             se.EncoderConfig(seed=self.seed))
        result = train_redrawer(corpus, encoder, self._config())
        self.result_ = result
        self.net_ = _resolve_generator(result.weights_g)
        self.classes_ = result.classes
        self.log_ = result.log
        return self

    def predict(self, X):
        if not hasattr(self, "net_"):
            raise ValidationError("ContextTranslator must be fit before predict")
        return [generate(self.net_, content, list(style_set))
                for content, style_set in X]

    def transform(self, X):
        return self.predict(X)
