"""Input validation helpers shared by every module.

All public entry points funnel user-supplied arrays and scalars through
these checks so that error behaviour is uniform: bad values raise
:class:`ValidationError` (exit code 1 at the CLI), unreadable or missing
files raise ``OSError`` subclasses (exit code 2 at the CLI).
"""

from __future__ import annotations

import numbers

import numpy as np

__all__ = [
    "ValidationError",
    "FormatError",
    "DatasetError",
    "make_raster",
    "check_raster",
    "check_mask",
    "check_binary_mask",
    "check_box",
    "check_positive_int",
    "check_fraction",
    "check_real",
    "check_choice",
]


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


class FormatError(ValidationError):
    """Raised when a text artifact (manifest, config, embeddings) fails to parse."""


class DatasetError(ValidationError):
    """Raised when a corpus cannot support the requested sampling or training."""


def make_raster(data) -> np.ndarray:
    """Coerce ``data`` to a float64 H×W×3 image, clamping values into [0, 1]."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValidationError(f"expected an H×W×3 array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("image contains non-finite values")
    return np.clip(arr, 0.0, 1.0)


def check_raster(img, name: str = "image", min_side: int = 1) -> np.ndarray:
    """Validate an H×W×3 float image with values in [0, 1]; returns float64."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValidationError(f"{name}: expected an H×W×3 array, got shape {arr.shape}")
    if arr.shape[0] < min_side or arr.shape[1] < min_side:
        raise ValidationError(
            f"{name}: needs height and width >= {min_side}, got {arr.shape[0]}×{arr.shape[1]}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: contains non-finite values")
    if arr.min() < -1e-9 or arr.max() > 1.0 + 1e-9:
        raise ValidationError(f"{name}: values outside [0, 1]")
    return arr


def check_mask(mask, shape=None, name: str = "mask") -> np.ndarray:
    """Validate an H×W real mask with weights in [0, 1]; returns float64."""
    arr = np.asarray(mask, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"{name}: expected a 2-D array, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise ValidationError(f"{name}: shape {arr.shape} does not match expected {tuple(shape)}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValidationError(f"{name}: weights outside [0, 1]")
    return arr


def check_binary_mask(mask, shape=None, name: str = "mask") -> np.ndarray:
    """Validate a mask whose values are exactly 0 or 1."""
    arr = check_mask(mask, shape=shape, name=name)
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise ValidationError(f"{name}: must be binary (values exactly 0 or 1)")
    return arr


def check_box(box, bounds, name: str = "box") -> tuple[int, int, int, int]:
    """Validate an (x, y, w, h) integer box lying fully inside ``bounds`` = (W, H)."""
    try:
        x, y, w, h = (int(v) for v in box)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name}: expected four integers (x, y, w, h)") from exc
    width, height = bounds
    if w <= 0 or h <= 0:
        raise ValidationError(f"{name}: degenerate size {w}×{h}")
    if x < 0 or y < 0 or x + w > width or y + h > height:
        raise ValidationError(
            f"{name}: ({x},{y},{w},{h}) exceeds bounds {width}×{height}"
        )
    return x, y, w, h


def check_positive_int(value, name: str) -> int:
    if not isinstance(value, numbers.Integral):
        raise ValidationError(f"{name}: expected an integer, got {type(value).__name__}")
    value = int(value)
    if value <= 0:
        raise ValidationError(f"{name}: must be positive, got {value}")
    return value


def check_real(value, name: str, lo: float = -np.inf, hi: float = np.inf) -> float:
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise ValidationError(f"{name}: expected a real number, got {type(value).__name__}")
    value = float(value)
    if not np.isfinite(value) or value < lo or value > hi:
        raise ValidationError(f"{name}: must lie in [{lo}, {hi}], got {value}")
    return value


def check_fraction(value, name: str, lo: float = 0.0, hi: float = 0.5) -> float:
    """Validate an open-interval fraction (lo, hi), as used by mask geometry."""
    value = check_real(value, name)
    if not (lo < value < hi):
        raise ValidationError(f"{name}: must lie strictly between {lo} and {hi}, got {value}")
    return value


def check_choice(value, choices, name: str):
    if value not in choices:
        raise ValidationError(f"{name}: expected one of {sorted(choices)}, got {value!r}")
    return value
