"""Dataset construction: manifest ingestion of annotated regions,
level-of-detail splitting, crop standardization, a procedural synthetic
corpus with known production/design/detail labels, and balanced samplers.

The synthetic corpus renders parametric eye glyphs: an ellipse sclera, an
iris in a design-specific palette color and shape, a pupil, N highlights,
and line art whose width/colors vary per production. High-detail renders
strictly more features at crisper edges than low-detail ones.
"""

from __future__ import annotations

import colorsys
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import imagemath
from .validation import (
    DatasetError,
    FormatError,
    ValidationError,
    check_positive_int,
    check_raster,
    check_real,
)

__all__ = [
    "AnnotatedRegion",
    "ingest_manifest",
    "lod_split",
    "standardize_crop",
    "SyntheticStyleSpec",
    "default_specs",
    "synth_generate",
    "Patch",
    "Corpus",
    "TripletSample",
    "TranslationSample",
    "sample_triplet_batch",
    "sample_translation_batch",
    "synth_frame_set",
    "synth_guide_sheet",
    "LOD_LOW_THRESHOLD",
    "LOD_HIGH_THRESHOLD",
]

logger = logging.getLogger(__name__)

# Region area as a fraction of frame area: below the first threshold a region
# is low-detail training material, above the second it is an art-direction
# example, and the middle band is discarded.
LOD_LOW_THRESHOLD = 0.0031
LOD_HIGH_THRESHOLD = 0.0048


@dataclass(frozen=True)
class AnnotatedRegion:
    """A bounding box within a frame plus its labels."""

    frame_ref: str
    box: tuple[int, int, int, int]  # (x, y, w, h)
    kind: str  # "face" | "eye"
    production_id: str
    design_id: str | None = None


def ingest_manifest(path, rejections: list[str] | None = None) -> list[AnnotatedRegion]:
    """Parse a region manifest: one row per region,
    ``frame_path,x,y,w,h,kind,production_id[,design_id]``.

    Structurally malformed rows raise :class:`FormatError` with the line
    number; rows referencing missing frames or out-of-bounds boxes are
    skipped with a line-numbered diagnostic (appended to ``rejections`` when
    given, and logged).
    """
    path = Path(path)
    base = path.parent
    regions: list[AnnotatedRegion] = []
    sizes: dict[str, tuple[int, int]] = {}

    def reject(message: str) -> None:
        logger.warning("%s: %s", path, message)
        if rejections is not None:
            rejections.append(message)

    with open(path, newline="") as handle:
        for lineno, row in enumerate(csv.reader(handle), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if row[0].lstrip().startswith("#"):
                continue
            if len(row) not in (7, 8):
                raise FormatError(f"{path}: line {lineno}: expected 7 or 8 fields, got {len(row)}")
            frame_ref = row[0].strip()
            try:
                x, y, w, h = (int(v) for v in row[1:5])
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: non-integer box field") from exc
            kind = row[5].strip()
            if kind not in ("face", "eye"):
                raise FormatError(f"{path}: line {lineno}: unknown region kind {kind!r}")
            production_id = row[6].strip()
            if not production_id:
                raise FormatError(f"{path}: line {lineno}: empty production id")
            design_id = row[7].strip() if len(row) == 8 and row[7].strip() else None

            frame_path = Path(frame_ref)
            if not frame_path.is_absolute():
                frame_path = base / frame_path
            key = str(frame_path)
            if key not in sizes:
                try:
                    with Image.open(frame_path) as img:
                        sizes[key] = img.size  # (W, H)
                except OSError:
                    sizes[key] = (-1, -1)
            width, height = sizes[key]
            if width < 0:
                reject(f"line {lineno}: missing frame {frame_ref}")
                continue
            if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > width or y + h > height:
                reject(f"line {lineno}: box ({x},{y},{w},{h}) outside frame {width}×{height}")
                continue
            regions.append(AnnotatedRegion(key, (x, y, w, h), kind, production_id, design_id))
    return regions


def lod_split(region: AnnotatedRegion, frame_area: int,
              low_threshold: float = LOD_LOW_THRESHOLD,
              high_threshold: float = LOD_HIGH_THRESHOLD) -> str:
    """Classify a region by its area fraction: ``low``, ``high``, or ``discarded``."""
    if frame_area <= 0:
        raise ValidationError("lod_split: frame_area must be positive")
    if low_threshold > high_threshold:
        raise ValidationError("lod_split: low_threshold exceeds high_threshold")
    _, _, w, h = region.box
    ratio = (w * h) / float(frame_area)
    if ratio < low_threshold:
        return "low"
    if ratio > high_threshold:
        return "high"
    return "discarded"


def standardize_crop(frame, region: AnnotatedRegion, out_size=(64, 64),
                     context_margin: float = 0.25):
    """Crop the region box expanded by ``context_margin`` per side (clipped to
    the frame), resample to ``out_size``, and return ``(patch, inner_box)``
    where ``inner_box`` is the region's geometry in patch coordinates."""
    frame = check_raster(frame, "frame")
    x, y, w, h = region.box
    if w <= 0 or h <= 0:
        raise ValidationError(f"standardize_crop: degenerate box {region.box}")
    context_margin = check_real(context_margin, "context_margin", 0.0, 2.0)
    fh, fw = frame.shape[:2]
    if x < 0 or y < 0 or x + w > fw or y + h > fh:
        raise ValidationError(f"standardize_crop: box {region.box} outside frame {fw}×{fh}")
    mx = int(round(context_margin * w))
    my = int(round(context_margin * h))
    x0, x1 = max(0, x - mx), min(fw, x + w + mx)
    y0, y1 = max(0, y - my), min(fh, y + h + my)
    crop = frame[y0:y1, x0:x1]
    out_h, out_w = (int(v) for v in out_size)
    patch = imagemath.resample_bilinear(crop, out_h, out_w)
    sx = out_w / (x1 - x0)
    sy = out_h / (y1 - y0)
    bx = int(round((x - x0) * sx))
    by = int(round((y - y0) * sy))
    bw = max(1, int(round(w * sx)))
    bh = max(1, int(round(h * sy)))
    bx = min(bx, out_w - 1)
    by = min(by, out_h - 1)
    bw = min(bw, out_w - bx)
    bh = min(bh, out_h - by)
    return patch, (bx, by, bw, bh)


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticStyleSpec:
    """Per-production rendering style for the synthetic corpus."""

    production_id: str
    palette: tuple  # one iris color per design
    line_width: float
    iris_shape: tuple  # (aspect_base, size_base)
    highlight_count_low: int
    highlight_count_high: int
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "palette", tuple(tuple(float(c) for c in col) for col in self.palette))
        object.__setattr__(self, "iris_shape", tuple(float(v) for v in self.iris_shape))
        if not self.palette:
            raise ValidationError("SyntheticStyleSpec: palette must be non-empty")
        if self.highlight_count_high <= self.highlight_count_low:
            raise ValidationError(
                "SyntheticStyleSpec: highlight_count_high must exceed highlight_count_low"
            )
        if self.highlight_count_low < 0:
            raise ValidationError("SyntheticStyleSpec: highlight counts must be non-negative")
        if self.line_width <= 0:
            raise ValidationError("SyntheticStyleSpec: line_width must be positive")
        if len(self.iris_shape) != 2:
            raise ValidationError("SyntheticStyleSpec: iris_shape needs (aspect, size)")


def default_specs(n_productions: int, designs_per_production: int, seed: int = 0):
    """Deterministic varied production styles with hue-separated palettes."""
    check_positive_int(n_productions, "n_productions")
    check_positive_int(designs_per_production, "designs_per_production")
    specs = []
    for p in range(n_productions):
        rng = np.random.default_rng([int(seed), 11, p])
        base_hue = rng.uniform()
        palette = []
        for j in range(designs_per_production):
            hue = (base_hue + j / designs_per_production) % 1.0
            sat = rng.uniform(0.55, 0.85)
            val = rng.uniform(0.45, 0.8)
            palette.append(colorsys.hsv_to_rgb(hue, sat, val))
        specs.append(SyntheticStyleSpec(
            production_id=f"prod{p:02d}",
            palette=tuple(palette),
            line_width=float(rng.uniform(0.8, 2.2)),
            iris_shape=(float(rng.uniform(0.72, 1.05)), float(rng.uniform(0.5, 0.62))),
            highlight_count_low=1,
            highlight_count_high=int(rng.integers(3, 6)),
            seed=int(seed) * 1000 + p,
        ))
    return specs


def _production_style(spec: SyntheticStyleSpec) -> dict:
    rng = np.random.default_rng([spec.seed, 101])
    bg_hue = rng.uniform()
    background = np.array(colorsys.hsv_to_rgb(bg_hue, rng.uniform(0.05, 0.16), rng.uniform(0.86, 0.97)))
    line_color = np.array(colorsys.hsv_to_rgb(rng.uniform(), rng.uniform(0.2, 0.5), rng.uniform(0.1, 0.24)))
    sclera = np.array([0.93, 0.91, 0.88]) + rng.uniform(-0.015, 0.015, size=3)
    return {"background": background, "line_color": line_color, "sclera": sclera}


def _design_parameters(spec: SyntheticStyleSpec, design_index: int) -> dict:
    if design_index >= len(spec.palette):
        raise ValidationError(
            f"{spec.production_id}: palette has {len(spec.palette)} colors, "
            f"design index {design_index} requested"
        )
    rng = np.random.default_rng([spec.seed, 202, design_index])
    aspect_base, size_base = spec.iris_shape
    return {
        "design_id": f"{spec.production_id}-d{design_index}",
        "iris_color": np.array(spec.palette[design_index]),
        "iris_aspect": aspect_base * rng.uniform(0.92, 1.08),
        "iris_size": size_base * rng.uniform(0.94, 1.06),
        "pupil_frac": rng.uniform(0.34, 0.46),
    }


def _paint(img, cov, color):
    img *= (1.0 - cov)[:, :, None]
    img += cov[:, :, None] * np.asarray(color)[None, None, :]


def _ellipse_cov(xx, yy, cx, cy, rx, ry, aa):
    d = np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2)
    r_eff = np.sqrt(rx * ry)
    return np.clip(0.5 - (d - 1.0) * (r_eff / aa), 0.0, 1.0)


def _ring_cov(xx, yy, cx, cy, rx, ry, width, aa):
    d = np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2)
    r_eff = np.sqrt(rx * ry)
    dist = np.abs(d - 1.0) * r_eff
    return np.clip(0.5 + (width / 2.0 - dist) / aa, 0.0, 1.0)


def _stroke_cov(xx, yy, p0, p1, width, aa):
    px, py = p1[0] - p0[0], p1[1] - p0[1]
    norm = max(px * px + py * py, 1e-9)
    t = np.clip(((xx - p0[0]) * px + (yy - p0[1]) * py) / norm, 0.0, 1.0)
    dist = np.hypot(xx - (p0[0] + t * px), yy - (p0[1] + t * py))
    return np.clip(0.5 + (width / 2.0 - dist) / aa, 0.0, 1.0)


def _render_eye(view: np.ndarray, spec: SyntheticStyleSpec, style: dict, design: dict,
                detail: str, rng: np.random.Generator) -> None:
    """Draw one eye glyph into ``view`` (an H×W×3 slice), in place."""
    h, w = view.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    scale = min(w, h) / 32.0
    aa = (0.55 if detail == "high" else 1.7) * max(scale, 0.35)
    lw = spec.line_width * scale

    cx = w / 2.0 + rng.uniform(-1.0, 1.0) * scale
    cy = h / 2.0 + rng.uniform(-1.0, 1.0) * scale
    sx = w * 0.44 * rng.uniform(0.95, 1.05)
    sy = h * 0.36 * rng.uniform(0.95, 1.05)
    _paint(view, _ellipse_cov(xx, yy, cx, cy, sx, sy, aa), style["sclera"])

    r_i = design["iris_size"] * min(w, h) * 0.5 * rng.uniform(0.95, 1.05)
    rix = r_i
    riy = r_i / max(design["iris_aspect"], 1e-3)
    icx = cx + rng.uniform(-0.8, 0.8) * scale
    icy = cy + rng.uniform(-0.5, 0.5) * scale
    _paint(view, _ellipse_cov(xx, yy, icx, icy, rix, riy, aa), design["iris_color"])

    if detail == "high":
        # inner iris ring, a high-frequency feature absent at low detail
        ring = _ring_cov(xx, yy, icx, icy, rix * 0.62, riy * 0.62, max(lw * 0.5, 0.7), aa)
        _paint(view, ring, design["iris_color"] * 0.55)

    r_p = design["pupil_frac"] * r_i
    _paint(view, _ellipse_cov(xx, yy, icx, icy, r_p, r_p / max(design["iris_aspect"], 1e-3), aa),
           np.array([0.06, 0.05, 0.08]))

    count = spec.highlight_count_high if detail == "high" else spec.highlight_count_low
    r_h = max(0.9, 0.115 * min(w, h) * 0.5)
    for i in range(count):
        angle = 2.399963 * i + rng.uniform(-0.25, 0.25)
        radius = (0.3 + 0.55 * ((i * 0.41) % 1.0)) * r_i * 0.8
        hx = icx + radius * np.cos(angle)
        hy = icy + radius * np.sin(angle) * 0.8
        _paint(view, _ellipse_cov(xx, yy, hx, hy, r_h, r_h, aa * 0.8),
               np.array([0.985, 0.98, 0.99]))

    outline = _ring_cov(xx, yy, cx, cy, sx, sy, lw, aa)
    _paint(view, outline, style["line_color"])
    # upper lid: thicker arc hugging the top of the sclera
    lid = _ring_cov(xx, yy, cx, cy + 0.08 * sy, sx * 1.04, sy * 1.1, lw * 1.6, aa)
    lid = lid * (yy < cy - 0.25 * sy)
    _paint(view, lid, style["line_color"])


def _render_context(img: np.ndarray, style: dict, spec: SyntheticStyleSpec,
                    rng: np.random.Generator, avoid_box=None, n_strokes=3) -> None:
    """Production-style background strokes (hair strands etc.) on the canvas."""
    h, w = img.shape[:2]
    scale = min(w, h) / 32.0
    aa = 0.8 * max(scale, 0.35)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    for _ in range(n_strokes):
        edge = rng.integers(0, 4)
        if edge == 0:
            p0 = (rng.uniform(0, w), 0.0)
        elif edge == 1:
            p0 = (rng.uniform(0, w), float(h))
        elif edge == 2:
            p0 = (0.0, rng.uniform(0, h))
        else:
            p0 = (float(w), rng.uniform(0, h))
        p1 = (p0[0] + rng.uniform(-0.6, 0.6) * w, p0[1] + rng.uniform(-0.6, 0.6) * h)
        cov = _stroke_cov(xx, yy, p0, p1, spec.line_width * scale * rng.uniform(0.8, 1.4), aa)
        if avoid_box is not None:
            x, y, bw, bh = avoid_box
            inside = np.zeros((h, w), dtype=bool)
            inside[y:y + bh, x:x + bw] = True
            cov = cov * (~inside)
        _paint(img, cov, style["line_color"] * rng.uniform(0.9, 1.3))


@dataclass
class Patch:
    """One standardized corpus entry with its labels and region geometry."""

    image: np.ndarray
    production_id: str
    design_id: str
    detail: str  # "low" | "high"
    box: tuple[int, int, int, int]  # inner region box in patch coordinates
    patch_id: str


class Corpus:
    """An immutable, ordered collection of labeled patches."""

    def __init__(self, patches, patch_size=None):
        self._patches = list(patches)
        if self._patches:
            shape = self._patches[0].image.shape
            for p in self._patches:
                if p.image.shape != shape:
                    raise ValidationError("Corpus: patches must share one size")
            self.patch_size = (shape[0], shape[1])
        else:
            self.patch_size = tuple(patch_size) if patch_size else (0, 0)
        ids = [p.patch_id for p in self._patches]
        if len(set(ids)) != len(ids):
            raise ValidationError("Corpus: duplicate patch ids")

    def __len__(self):
        return len(self._patches)

    def __iter__(self):
        return iter(self._patches)

    def __getitem__(self, idx):
        return self._patches[idx]

    def productions(self) -> list[str]:
        return sorted({p.production_id for p in self._patches})

    def designs(self, production_id: str) -> list[str]:
        return sorted({p.design_id for p in self._patches if p.production_id == production_id})

    def all_designs(self) -> list[str]:
        return sorted({p.design_id for p in self._patches})

    def pool(self, production_id=None, design_id=None, detail=None) -> list[Patch]:
        out = []
        for p in self._patches:
            if production_id is not None and p.production_id != production_id:
                continue
            if design_id is not None and p.design_id != design_id:
                continue
            if detail is not None and p.detail != detail:
                continue
            out.append(p)
        return out

    def subset(self, production_ids) -> "Corpus":
        keep = set(production_ids)
        return Corpus([p for p in self._patches if p.production_id in keep],
                      patch_size=self.patch_size)

    def save(self, root) -> None:
        root = Path(root)
        (root / "patches").mkdir(parents=True, exist_ok=True)
        with open(root / "index.csv", "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["patch_id", "path", "production_id", "design_id",
                             "detail", "x", "y", "w", "h"])
            for p in self._patches:
                rel = f"patches/{p.patch_id}.png"
                imagemath.write_png(root / rel, p.image)
                writer.writerow([p.patch_id, rel, p.production_id, p.design_id,
                                 p.detail, *p.box])

    @classmethod
    def load(cls, root) -> "Corpus":
        root = Path(root)
        index = root / "index.csv"
        patches = []
        with open(index, newline="") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if header != ["patch_id", "path", "production_id", "design_id",
                          "detail", "x", "y", "w", "h"]:
                raise FormatError(f"{index}: unrecognized index header {header!r}")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 9:
                    raise FormatError(f"{index}: line {lineno}: expected 9 fields")
                patch_id, rel, production_id, design_id, detail = row[:5]
                if detail not in ("low", "high"):
                    raise FormatError(f"{index}: line {lineno}: bad detail {detail!r}")
                try:
                    box = tuple(int(v) for v in row[5:9])
                except ValueError as exc:
                    raise FormatError(f"{index}: line {lineno}: non-integer box") from exc
                image = imagemath.read_png(root / rel)
                patches.append(Patch(image, production_id, design_id, detail, box, patch_id))
        return cls(patches)


def _inner_box(patch_size) -> tuple[int, int, int, int]:
    h, w = patch_size
    bw = int(round(w * 0.62))
    bh = int(round(h * 0.62))
    return ((w - bw) // 2, (h - bh) // 2, bw, bh)


def _render_patch(spec: SyntheticStyleSpec, style: dict, design: dict, detail: str,
                  patch_size, rng: np.random.Generator):
    h, w = patch_size
    img = np.tile(style["background"], (h, w, 1)).astype(np.float64)
    box = _inner_box(patch_size)
    _render_context(img, style, spec, rng, avoid_box=box)
    x, y, bw, bh = box
    _render_eye(img[y:y + bh, x:x + bw], spec, style, design, detail, rng)
    return np.clip(img, 0.0, 1.0), box


def synth_generate(specs, designs_per_production: int, patches_per_design: int,
                   patch_size=(64, 64), _allow_single_production: bool = False) -> Corpus:
    """Render the labeled synthetic corpus. ``patches_per_design`` counts both
    detail levels together and must be even (half low, half high)."""
    specs = list(specs)
    if len(specs) < (1 if _allow_single_production else 2):
        raise ValidationError("synth_generate: need at least 2 productions")
    designs_per_production = check_positive_int(designs_per_production, "designs_per_production")
    if designs_per_production < 2:
        raise ValidationError("synth_generate: need at least 2 designs per production")
    patches_per_design = check_positive_int(patches_per_design, "patches_per_design")
    if patches_per_design % 2 != 0:
        raise ValidationError("synth_generate: patches_per_design must be even "
                              "(split equally across detail levels)")
    h, w = (int(v) for v in patch_size)
    if h < 16 or w < 16:
        raise ValidationError("synth_generate: patch_size must be at least 16×16")
    seen = set()
    for spec in specs:
        if spec.production_id in seen:
            raise ValidationError(f"synth_generate: duplicate production {spec.production_id}")
        seen.add(spec.production_id)

    per_level = patches_per_design // 2
    patches = []
    for spec in specs:
        style = _production_style(spec)
        for j in range(designs_per_production):
            design = _design_parameters(spec, j)
            for level_idx, detail in enumerate(("low", "high")):
                for i in range(per_level):
                    rng = np.random.default_rng([spec.seed, 3, j, level_idx, i])
                    image, box = _render_patch(spec, style, design, detail, (h, w), rng)
                    patch_id = f"{design['design_id']}-{detail}-{i:03d}"
                    patches.append(Patch(image, spec.production_id, design["design_id"],
                                         detail, box, patch_id))
    return Corpus(patches)


# ---------------------------------------------------------------------------
# Balanced samplers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TripletSample:
    p1: Patch
    p2: Patch
    p3: Patch
    production_id: str

    def __iter__(self):
        return iter((self.p1, self.p2, self.p3, self.production_id))


@dataclass(frozen=True)
class TranslationSample:
    content: Patch  # l, low detail, design_low
    style_set: tuple  # high-detail patches of design_high
    high: Patch  # h, high detail, design_high
    design_low: str
    design_high: str


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _check_triplet_support(corpus: Corpus) -> None:
    if len(corpus) == 0:
        raise DatasetError("sampler: empty corpus")
    for production in corpus.productions():
        designs = corpus.designs(production)
        if len(designs) < 2:
            raise DatasetError(f"sampler: production {production} has fewer than 2 designs")
        for design in designs:
            if len(corpus.pool(design_id=design)) < 2:
                raise DatasetError(f"sampler: design {design} has fewer than 2 portraits")


def sample_triplet_batch(corpus: Corpus, batch: int, seed) -> list[TripletSample]:
    """Balanced triplets: production uniform, anchor design uniform within the
    production; P1, P2 share the anchor design, P3 is a different design from
    the same production."""
    _check_triplet_support(corpus)
    batch = check_positive_int(batch, "batch")
    rng = _as_rng(seed)
    productions = corpus.productions()
    out = []
    for _ in range(batch):
        production = productions[rng.integers(len(productions))]
        designs = corpus.designs(production)
        anchor = designs[rng.integers(len(designs))]
        pool = corpus.pool(design_id=anchor)
        i1, i2 = rng.choice(len(pool), size=2, replace=False)
        others = [d for d in designs if d != anchor]
        negative_design = others[rng.integers(len(others))]
        negative_pool = corpus.pool(design_id=negative_design)
        p3 = negative_pool[rng.integers(len(negative_pool))]
        out.append(TripletSample(pool[i1], pool[i2], p3, production))
    return out


def _check_translation_support(corpus: Corpus) -> None:
    if len(corpus) == 0:
        raise DatasetError("sampler: empty corpus")
    for production in corpus.productions():
        complete = [d for d in corpus.designs(production)
                    if corpus.pool(design_id=d, detail="low")
                    and corpus.pool(design_id=d, detail="high")]
        if len(complete) < 2:
            raise DatasetError(
                f"sampler: production {production} needs >= 2 designs with both detail levels"
            )


def sample_translation_batch(corpus: Corpus, batch: int, seed,
                             style_k: int = 3) -> list[TranslationSample]:
    """Balanced translation pairs: l low-detail from design L, h plus a style
    set high-detail from a different design H of the same production."""
    _check_translation_support(corpus)
    batch = check_positive_int(batch, "batch")
    style_k = check_positive_int(style_k, "style_k")
    rng = _as_rng(seed)
    productions = corpus.productions()
    out = []
    for _ in range(batch):
        production = productions[rng.integers(len(productions))]
        designs = [d for d in corpus.designs(production)
                   if corpus.pool(design_id=d, detail="low")
                   and corpus.pool(design_id=d, detail="high")]
        design_low = designs[rng.integers(len(designs))]
        others = [d for d in designs if d != design_low]
        design_high = others[rng.integers(len(others))]
        low_pool = corpus.pool(design_id=design_low, detail="low")
        content = low_pool[rng.integers(len(low_pool))]
        high_pool = corpus.pool(design_id=design_high, detail="high")
        high = high_pool[rng.integers(len(high_pool))]
        style_pool = [p for p in high_pool if p.patch_id != high.patch_id]
        if not style_pool:
            style_pool = [high]
        k = min(style_k, len(style_pool))
        chosen = rng.choice(len(style_pool), size=k, replace=False)
        style_set = tuple(style_pool[int(i)] for i in chosen)
        out.append(TranslationSample(content, style_set, high, design_low, design_high))
    return out


# ---------------------------------------------------------------------------
# Synthetic frames and guide sheets for the inference pipeline
# ---------------------------------------------------------------------------

def synth_frame_set(spec: SyntheticStyleSpec, design_indices, n_frames: int,
                    frame_size=(160, 240), seed: int = 0):
    """Frames with small (low-detail) eyes plus their regions, for redraw runs."""
    n_frames = check_positive_int(n_frames, "n_frames")
    h, w = (int(v) for v in frame_size)
    if h < 64 or w < 64:
        raise ValidationError("synth_frame_set: frame must be at least 64×64")
    design_indices = list(design_indices)
    if not design_indices:
        raise ValidationError("synth_frame_set: need at least one design index")
    style = _production_style(spec)
    # eye area fraction targeted well below the low-detail threshold
    side = max(8, int(np.sqrt(0.0022 * h * w)))
    frames = []
    for f in range(n_frames):
        rng = np.random.default_rng([spec.seed, 777, seed, f])
        img = np.tile(style["background"], (h, w, 1)).astype(np.float64)
        _render_context(img, style, spec, rng, n_strokes=6)
        regions = []
        # two eyes side by side, as on a face
        cx = w // 2 + int(rng.integers(-w // 8, w // 8 + 1))
        cy = h // 2 + int(rng.integers(-h // 8, h // 8 + 1))
        gap = int(side * 1.6)
        for which, design_index in enumerate(design_indices[:2]):
            design = _design_parameters(spec, design_index)
            x = cx - gap + which * 2 * gap - side // 2
            y = cy - side // 2
            x = int(np.clip(x, 2, w - side - 2))
            y = int(np.clip(y, 2, h - side - 2))
            _render_eye(img[y:y + side, x:x + side], spec, style, design, "low", rng)
            regions.append(AnnotatedRegion("", (x, y, side, side), "eye",
                                           spec.production_id, design["design_id"]))
        frames.append((np.clip(img, 0.0, 1.0), regions))
    return frames


def synth_guide_sheet(spec: SyntheticStyleSpec, design_indices, cell_size: int = 64,
                      seed: int = 0):
    """A color-guide sheet: one large high-detail eye per design, side by side."""
    cell_size = check_positive_int(cell_size, "cell_size")
    design_indices = list(design_indices)
    if not design_indices:
        raise ValidationError("synth_guide_sheet: need at least one design index")
    style = _production_style(spec)
    sheet = np.tile(style["background"], (cell_size, cell_size * len(design_indices), 1))
    sheet = sheet.astype(np.float64)
    regions = []
    box = _inner_box((cell_size, cell_size))
    for i, design_index in enumerate(design_indices):
        design = _design_parameters(spec, design_index)
        rng = np.random.default_rng([spec.seed, 888, seed, design_index])
        x0 = i * cell_size
        x, y, bw, bh = box
        _render_eye(sheet[y:y + bh, x0 + x:x0 + x + bw], spec, style, design, "high", rng)
        regions.append(AnnotatedRegion("", (x0 + x, y, bw, bh), "eye",
                                       spec.production_id, design["design_id"]))
    return np.clip(sheet, 0.0, 1.0), regions
