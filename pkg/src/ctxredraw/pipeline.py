"""Command-line pipeline: corpus synthesis, the two training stages,
embedding clustering, region redrawing with classical post-processing, and
metric reports.

One JSON file documents every knob of a run; each command is deterministic
given (config, seed), validates its inputs before writing any output file,
and emits PNG images plus tab-separated logs and reports.  Exit codes:
0 success, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import errno
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import datasetgen as dg
from . import imagemath as im
from . import styleenc as se
from . import translator as tr
from .validation import (
    FormatError,
    ValidationError,
    check_choice,
    check_positive_int,
)
from .weights import load_weights, save_weights

__all__ = [
    "RunConfig",
    "cmd_synth",
    "cmd_train",
    "cmd_cluster",
    "cmd_redraw",
    "cmd_eval",
    "cluster_purity",
    "load_generator",
    "main",
]

logger = logging.getLogger(__name__)

ENCODER_WEIGHTS = "encoder.weights"
ENCODER_LOG = "encoder_train_log.tsv"
EMBEDDINGS = "embeddings.tsv"
REDRAWER_WEIGHTS = {"g": "redrawer_g.weights", "q": "redrawer_q.weights",
                    "c": "redrawer_c.weights"}
REDRAWER_LOG = "redrawer_train_log.tsv"
REDRAWER_LOG_COLUMNS = ("step", "recon", "adv_q_t", "adv_q_lhat",
                        "adv_c_t", "adv_c_hhat", "q_objective", "c_objective")


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorpusSection:
    """Synthetic corpus and demo-input sizing."""

    productions: int = 3
    designs_per_production: int = 3
    patches_per_design_per_level: int = 10
    patch_size: int = 32
    demo_frames: int = 2
    frame_height: int = 120
    frame_width: int = 160
    guide_cell: int = 64


@dataclass(frozen=True)
class RegionSection:
    """Region ingestion: level-of-detail split and crop standardization."""

    lod_low_threshold: float = dg.LOD_LOW_THRESHOLD
    lod_high_threshold: float = dg.LOD_HIGH_THRESHOLD
    context_margin: float = 0.25


@dataclass(frozen=True)
class EncoderSection:
    """Design-encoder architecture and training settings."""

    base_width: int = 8
    style_width: int = 8
    depth: int = 3
    embed_dim: int = 32
    steps: int = 400
    batch: int = 8
    lr: float = 1e-4
    context_size: int = 3


@dataclass(frozen=True)
class RedrawerSection:
    """Redrawer architecture and adversarial training settings."""

    g_base: int = 16
    g_res_blocks: int = 2
    d_base: int = 16
    d_depth: int = 3
    steps: int = 500
    batch: int = 8
    lr_g: float = 1e-4
    lr_d: float = 2e-4
    style_k: int = 3
    band_fraction: float = 0.125
    border_fraction: float = 0.25
    lowpass_threshold: float = 0.06
    gamma: float = 10.0
    hinge_adversarial: bool = False


@dataclass(frozen=True)
class ClusterSection:
    """Dendrogram cut policy: a fixed height, a cluster count, or automatic."""

    cut_distance: float | None = None
    n_clusters: int | None = None


@dataclass(frozen=True)
class RedrawSection:
    """Inference-time design matching."""

    force_design: str | None = None


@dataclass(frozen=True)
class EvalSection:
    """Validation batch size for the translation metrics."""

    samples: int = 16


_SECTIONS = {
    "corpus": CorpusSection,
    "regions": RegionSection,
    "encoder": EncoderSection,
    "redrawer": RedrawerSection,
    "cluster": ClusterSection,
    "redraw": RedrawSection,
    "eval": EvalSection,
}
_SCALARS = ("seed", "out_dir", "corpus_root", "num_threads")


def _parse_section(cls, data, name: str):
    if not isinstance(data, dict):
        raise ValidationError(f"config: {name!r} must be a JSON object")
    allowed = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in allowed:
            raise ValidationError(f"config: unknown key {key!r} in section {name!r}")
    return cls(**data)


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs; serializable, and deterministic with the seed."""

    seed: int = 0
    out_dir: str = "run"
    corpus_root: str | None = None
    num_threads: int = 1
    corpus: CorpusSection = field(default_factory=CorpusSection)
    regions: RegionSection = field(default_factory=RegionSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    redrawer: RedrawerSection = field(default_factory=RedrawerSection)
    cluster: ClusterSection = field(default_factory=ClusterSection)
    redraw: RedrawSection = field(default_factory=RedrawSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ValidationError("config: seed must be an integer")
        check_positive_int(self.num_threads, "num_threads")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ValidationError("config: top level must be a JSON object")
        kwargs = {}
        for key, value in data.items():
            if key in _SECTIONS:
                kwargs[key] = _parse_section(_SECTIONS[key], value, key)
            elif key in _SCALARS:
                kwargs[key] = value
            else:
                raise ValidationError(f"config: unknown key {key!r}")
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        text = Path(path).read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise FormatError(f"{path}: expected a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def out_path(self) -> Path:
        return Path(self.out_dir)

    @property
    def corpus_path(self) -> Path:
        if self.corpus_root:
            return Path(self.corpus_root)
        return self.out_path / "corpus"

    def artifact(self, name: str) -> Path:
        return self.out_path / name


def _persist_config(config: RunConfig) -> None:
    config.out_path.mkdir(parents=True, exist_ok=True)
    text = json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"
    config.artifact("run_config.json").write_text(text)


# ---------------------------------------------------------------------------
# Delimited-text helpers
# ---------------------------------------------------------------------------

def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_table(path, header, rows) -> None:
    lines = ["\t".join(header)]
    lines.extend("\t".join(_cell(v) for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def _require_file(path: Path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(errno.ENOENT, f"{what} not found", str(path))
    return path


def _load_corpus(config: RunConfig) -> dg.Corpus:
    _require_file(config.corpus_path / "index.csv",
                  "corpus index (run synth first)")
    return dg.Corpus.load(config.corpus_path)


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(config: RunConfig) -> dict:
    """Render the labeled synthetic corpus, plus demo frames and a color
    guide for the redraw command; nothing is written until rendering
    succeeded."""
    c = config.corpus
    specs = dg.default_specs(c.productions, c.designs_per_production,
                             seed=config.seed)
    per_level = check_positive_int(c.patches_per_design_per_level,
                                   "patches_per_design_per_level")
    corpus = dg.synth_generate(specs, c.designs_per_production, 2 * per_level,
                               (c.patch_size, c.patch_size))
    demo = _render_demo(config, specs) if c.demo_frames else None

    _persist_config(config)
    corpus.save(config.corpus_path)
    if demo is not None:
        _write_demo(config.out_path / "demo", *demo)

    summary = {
        "productions": c.productions,
        "designs_per_production": c.designs_per_production,
        "patches": len(corpus),
        "demo_frames": c.demo_frames,
        "corpus": str(config.corpus_path),
    }
    print(f"synth: productions={c.productions} "
          f"designs_per_production={c.designs_per_production} "
          f"patches={len(corpus)}")
    print(f"synth: corpus written to {config.corpus_path}")
    return summary


def _render_demo(config: RunConfig, specs):
    c = config.corpus
    spec = specs[0]
    frames = dg.synth_frame_set(spec, [0, 1], c.demo_frames,
                                (c.frame_height, c.frame_width),
                                seed=config.seed)
    guide, guide_regions = dg.synth_guide_sheet(
        spec, range(c.designs_per_production), c.guide_cell, seed=config.seed)
    return frames, guide, guide_regions


def _write_demo(demo_dir: Path, frames, guide, guide_regions) -> None:
    (demo_dir / "frames").mkdir(parents=True, exist_ok=True)
    manifest = []
    for idx, (image, regions) in enumerate(frames):
        name = f"frame{idx:03d}.png"
        im.write_png(demo_dir / "frames" / name, image)
        for region in regions:
            x, y, w, h = region.box
            manifest.append(f"frames/{name},{x},{y},{w},{h},eye,"
                            f"{region.production_id},{region.design_id}")
    (demo_dir / "manifest.csv").write_text("\n".join(manifest) + "\n")
    im.write_png(demo_dir / "guide.png", guide)
    rows = []
    for region in guide_regions:
        x, y, w, h = region.box
        rows.append(f"guide.png,{x},{y},{w},{h},eye,"
                    f"{region.production_id},{region.design_id}")
    (demo_dir / "guide_manifest.csv").write_text("\n".join(rows) + "\n")


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(config: RunConfig, stage: str) -> dict:
    """Train one stage; the design encoder must be trained (and is then
    frozen) before the redrawer."""
    check_choice(stage, ("encoder", "redrawer"), "stage")
    corpus = _load_corpus(config)
    if stage == "encoder":
        return _train_encoder(config, corpus)
    return _train_redrawer(config, corpus)


def _train_encoder(config: RunConfig, corpus: dg.Corpus) -> dict:
    e = config.encoder
    enc_config = se.EncoderConfig(
        base_width=e.base_width, style_width=e.style_width, depth=e.depth,
        embed_dim=e.embed_dim, steps=e.steps, batch=e.batch, lr=e.lr,
        context_size=e.context_size, seed=config.seed)
    result = se.train_style_encoder(corpus, enc_config)

    _persist_config(config)
    save_weights(config.artifact(ENCODER_WEIGHTS), result.state, result.meta)
    _write_table(config.artifact(ENCODER_LOG), ("step", "loss"), result.log)
    embeddings = se.embed_corpus(result, corpus)
    header = ["patch_id", "production_id",
              *(f"e{i:03d}" for i in range(embeddings.shape[1]))]
    rows = [[p.patch_id, p.production_id, *map(float, vec)]
            for p, vec in zip(corpus, embeddings)]
    _write_table(config.artifact(EMBEDDINGS), header, rows)

    final = result.log[-1][1] if result.log else float("nan")
    print(f"train-encoder: steps={e.steps} final_loss={final:.6f}")
    print(f"train-encoder: weights written to {config.artifact(ENCODER_WEIGHTS)}")
    return {"steps": e.steps, "final_loss": final,
            "weights": str(config.artifact(ENCODER_WEIGHTS)),
            "embeddings": str(config.artifact(EMBEDDINGS))}


def _train_redrawer(config: RunConfig, corpus: dg.Corpus) -> dict:
    frozen = load_weights(_require_file(
        config.artifact(ENCODER_WEIGHTS),
        "encoder weights (run train-encoder first)"))
    r = config.redrawer
    tr_config = tr.TranslatorConfig(
        in_size=config.corpus.patch_size, g_base=r.g_base,
        g_res_blocks=r.g_res_blocks, d_base=r.d_base, d_depth=r.d_depth,
        steps=r.steps, batch=r.batch, lr_g=r.lr_g, lr_d=r.lr_d,
        style_k=r.style_k, band_fraction=r.band_fraction,
        border_fraction=r.border_fraction,
        lowpass_threshold=r.lowpass_threshold, gamma=r.gamma,
        hinge_adversarial=r.hinge_adversarial, seed=config.seed)
    result = tr.train_redrawer(corpus, frozen, tr_config)

    _persist_config(config)
    for key, weights in (("g", result.weights_g), ("q", result.weights_q),
                         ("c", result.weights_c)):
        save_weights(config.artifact(REDRAWER_WEIGHTS[key]), *weights)
    _write_table(config.artifact(REDRAWER_LOG), REDRAWER_LOG_COLUMNS, result.log)

    final = result.log[-1][1] if result.log else float("nan")
    print(f"train-redrawer: steps={r.steps} classes={len(result.classes)} "
          f"final_recon={final:.6f}")
    print(f"train-redrawer: weights written to "
          f"{config.artifact(REDRAWER_WEIGHTS['g'])}")
    return {"steps": r.steps, "classes": list(result.classes),
            "weights": str(config.artifact(REDRAWER_WEIGHTS["g"]))}


def load_generator(path):
    """Load saved redrawer generator weights and rebuild the network."""
    state, meta = load_weights(path)
    _check_generator_meta(path, meta)
    return tr._resolve_generator((state, meta))


def _check_generator_meta(path, meta: dict) -> None:
    if meta.get("arch") != "redrawer-generator":
        raise ValidationError(
            f"{path}: not redrawer generator weights (arch={meta.get('arch')!r})")


# ---------------------------------------------------------------------------
# cluster
# ---------------------------------------------------------------------------

def cluster_purity(labels, truth) -> float:
    """Fraction of items whose cluster's majority ground-truth label is
    their own."""
    labels = list(labels)
    truth = list(truth)
    if len(labels) != len(truth) or not labels:
        raise ValidationError("cluster_purity: labels and truth must be "
                              "non-empty and equal-length")
    counts: dict = {}
    for label, design in zip(labels, truth):
        bucket = counts.setdefault(label, {})
        bucket[design] = bucket.get(design, 0) + 1
    return sum(max(bucket.values()) for bucket in counts.values()) / len(labels)


def _read_embeddings(path):
    ids, productions, vectors = [], [], []
    dim = None
    with open(path) as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cells = line.split("\t")
            if lineno == 1 and cells[:2] == ["patch_id", "production_id"]:
                continue
            if len(cells) < 3:
                raise FormatError(f"{path}: line {lineno}: expected patch id, "
                                  "production id, and embedding values")
            try:
                vec = [float(v) for v in cells[2:]]
            except ValueError as exc:
                raise FormatError(
                    f"{path}: line {lineno}: non-numeric embedding value") from exc
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise FormatError(f"{path}: line {lineno}: expected {dim} "
                                  f"values, got {len(vec)}")
            ids.append(cells[0])
            productions.append(cells[1])
            vectors.append(vec)
    if not vectors:
        raise FormatError(f"{path}: no embedding rows")
    return ids, productions, np.asarray(vectors, dtype=np.float64)


def _ground_truth_designs(config: RunConfig, ids):
    """Design labels from the corpus index, or None when not all ids match."""
    index = config.corpus_path / "index.csv"
    if not index.exists():
        return None
    mapping = {}
    with open(index, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header or header[:4] != ["patch_id", "path", "production_id",
                                        "design_id"]:
            return None
        for row in reader:
            if len(row) >= 4:
                mapping[row[0]] = row[3]
    designs = [mapping.get(i) for i in ids]
    if any(d is None for d in designs):
        return None
    return designs


def cmd_cluster(config: RunConfig, embeddings_path=None) -> dict:
    """Cluster an embeddings table and report separation ratio and purity
    against the corpus ground truth when available."""
    path = _require_file(
        Path(embeddings_path) if embeddings_path else config.artifact(EMBEDDINGS),
        "embeddings table")
    ids, productions, points = _read_embeddings(path)
    cl = config.cluster
    labels = se.upgma_cluster(points, cut_distance=cl.cut_distance,
                              n_clusters=cl.n_clusters)
    n_clusters = len(set(labels.tolist()))

    truth = _ground_truth_designs(config, ids)
    ratio = purity = None
    if truth is not None:
        purity = cluster_purity(labels, truth)
        try:
            ratio = se.separation_ratio(points, truth)
        except ValidationError:
            ratio = None

    _persist_config(config)
    _write_table(config.artifact("clusters.tsv"),
                 ("patch_id", "production_id", "cluster"),
                 zip(ids, productions, (int(v) for v in labels)))
    report = [
        ("embeddings", len(ids)),
        ("clusters", n_clusters),
        ("cut_distance",
         cl.cut_distance if cl.cut_distance is not None else "auto"),
        ("separation_ratio", "unavailable" if ratio is None else ratio),
        ("purity", "unavailable" if purity is None else purity),
    ]
    _write_table(config.artifact("cluster_report.tsv"), ("metric", "value"),
                 report)
    for key, value in report:
        print(f"cluster: {key}={_cell(value)}")
    return dict(report)


# ---------------------------------------------------------------------------
# redraw
# ---------------------------------------------------------------------------

def _blend_mask(box_hw, offset, frame_shape):
    """Blend support inside the region box: the Poisson stencil needs a
    one-pixel rim in both the patch and the frame."""
    h, w = box_hw
    dy, dx = offset
    fh, fw = frame_shape[:2]
    if h < 4 or w < 4:
        return None
    r0, r1 = max(1, 1 - dy), min(h - 2, fh - 2 - dy)
    c0, c1 = max(1, 1 - dx), min(w - 2, fw - 2 - dx)
    if r0 > r1 or c0 > c1:
        return None
    mask = np.zeros((h, w))
    mask[r0:r1 + 1, c0:c1 + 1] = 1.0
    return mask


def _guide_groups(net, guide_regions, in_size: int, margin: float):
    """Crop, embed, and group the color-guide regions by design.

    Groups use the manifest's design ids when every row has one, otherwise an
    automatic dendrogram cut.  Returns (style sets, centroids, color
    references) keyed by design.
    """
    cache: dict = {}
    crops = []
    for region in guide_regions:
        if region.frame_ref not in cache:
            cache[region.frame_ref] = im.read_png(region.frame_ref)
        crop, inner = dg.standardize_crop(cache[region.frame_ref], region,
                                          (in_size, in_size), margin)
        crops.append((region, crop, inner))
    if not crops:
        return {}, {}, {}

    context = [crop for _, crop, _ in crops]
    encoder = net.style_encoder
    embeds = np.stack([se.encode_design(encoder, crop, context)
                       for _, crop, _ in crops])
    if all(region.design_id for region, _, _ in crops):
        keys = [region.design_id for region, _, _ in crops]
    else:
        labels = se.upgma_cluster(embeds)
        keys = [f"cluster{int(label):02d}" for label in labels]

    style_sets: dict = {}
    members: dict = {}
    references: dict = {}
    for key, (region, crop, inner), embed in zip(keys, crops, embeds):
        style_sets.setdefault(key, []).append(crop)
        members.setdefault(key, []).append(embed)
        bx, by, bw, bh = inner
        patch = im.resample_bilinear(crop[by:by + bh, bx:bx + bw],
                                     in_size, in_size)
        references.setdefault(key, []).append(patch)
    centroids = {key: np.mean(vecs, axis=0) for key, vecs in members.items()}
    references = {key: np.hstack(patches)
                  for key, patches in references.items()}
    return style_sets, centroids, references


def _match_design(embed, centroids, force: str | None):
    if force is not None:
        return force
    return min(centroids,
               key=lambda key: (float(np.sum((centroids[key] - embed) ** 2)),
                                key))


def cmd_redraw(config: RunConfig, frames_dir=None, manifest_path=None,
               guide_path=None, weights_path=None) -> dict:
    """Redraw each annotated region in a frame sequence: standardize the
    crop, generate with the matched guide design's style set, resample back
    to the box, color-match against the guide, and Poisson-blend into the
    frame.

    Pixels outside the blend masks stay bit-identical; regions without a
    usable guide crop are skipped with a warning.
    """
    out = config.out_path
    frames_dir = Path(frames_dir) if frames_dir else out / "demo" / "frames"
    manifest_path = Path(manifest_path) if manifest_path \
        else out / "demo" / "manifest.csv"
    guide_path = Path(guide_path) if guide_path \
        else out / "demo" / "guide_manifest.csv"
    weights_path = Path(weights_path) if weights_path \
        else config.artifact(REDRAWER_WEIGHTS["g"])
    _require_file(frames_dir, "frames directory")
    _require_file(manifest_path, "region manifest")
    _require_file(guide_path, "color-guide manifest")
    _require_file(weights_path, "generator weights")

    state, meta = load_weights(weights_path)
    _check_generator_meta(weights_path, meta)
    net = tr._resolve_generator((state, meta))
    in_size = int(meta["in_size"])
    margin = config.regions.context_margin

    regions = dg.ingest_manifest(manifest_path)
    guide_regions = dg.ingest_manifest(guide_path)
    frames = sorted(p for p in frames_dir.iterdir()
                    if p.suffix.lower() == ".png")
    if not frames:
        raise ValidationError(f"{frames_dir}: no PNG frames to redraw")

    style_sets, centroids, references = _guide_groups(
        net, guide_regions, in_size, margin)
    force = config.redraw.force_design
    if force is not None and force not in style_sets:
        raise ValidationError(
            f"force_design {force!r} is not a guide design; "
            f"available: {sorted(style_sets)}")

    started = time.perf_counter()
    known = {str(p) for p in frames}
    cache: dict = {}
    records = []
    skipped = 0
    for region in regions:
        if region.frame_ref not in known:
            logger.warning("skipping region %s in %s: frame not in %s",
                           region.box, region.frame_ref, frames_dir)
            skipped += 1
            continue
        if region.frame_ref not in cache:
            cache[region.frame_ref] = im.read_png(region.frame_ref)
        crop, inner = dg.standardize_crop(cache[region.frame_ref], region,
                                          (in_size, in_size), margin)
        records.append((region, crop, inner))
    contexts: dict = {}
    for region, crop, _ in records:
        contexts.setdefault(region.production_id, []).append(crop)

    _persist_config(config)
    redrawn_dir = out / "redrawn"
    redrawn_dir.mkdir(parents=True, exist_ok=True)

    outputs = {str(p): cache.get(str(p), im.read_png(p)).copy()
               for p in frames}
    redrawn = 0
    for region, crop, inner in records:
        x, y, w, h = region.box
        if not style_sets:
            logger.warning("skipping region %s in %s: no usable "
                           "color-guide crop", region.box, region.frame_ref)
            skipped += 1
            continue
        mask = _blend_mask((h, w), (y, x), outputs[region.frame_ref].shape)
        if mask is None:
            logger.warning("skipping region %s in %s: too small to blend",
                           region.box, region.frame_ref)
            skipped += 1
            continue
        if force is None:
            embed = se.encode_design(net.style_encoder, crop,
                                     contexts[region.production_id])
        else:
            embed = None
        key = _match_design(embed, centroids, force)
        generated = tr.generate(net, crop, style_sets[key])
        bx, by, bw, bh = inner
        patch = im.resample_bilinear(generated[by:by + bh, bx:bx + bw], h, w)
        patch = im.color_transfer(patch, np.ones((h, w)), references[key],
                                  np.ones(references[key].shape[:2]))
        blended = im.poisson_blend(patch, outputs[region.frame_ref], mask,
                                   offset=(y, x))
        # the Poisson solution is unclamped; later blends on the same frame
        # need a displayable destination (out-of-mask pixels are untouched)
        outputs[region.frame_ref] = np.clip(blended, 0.0, 1.0)
        redrawn += 1

    grid_rows = []
    for frame_path in frames:
        before = cache.get(str(frame_path))
        if before is None:
            before = im.read_png(frame_path)
        after = outputs[str(frame_path)]
        im.write_png(redrawn_dir / frame_path.name, after)
        grid_rows.append(np.hstack([before, after]))
    width = max(row.shape[1] for row in grid_rows)
    grid_rows = [np.pad(row, ((0, 0), (0, width - row.shape[1]), (0, 0)))
                 for row in grid_rows]
    im.write_png(out / "grid.png", np.vstack(grid_rows))

    elapsed = time.perf_counter() - started
    print(f"redraw: frames={len(frames)} regions={redrawn} skipped={skipped}")
    print(f"redraw: outputs written to {redrawn_dir} "
          f"({elapsed:.2f}s, not gated)")
    return {"frames": len(frames), "regions": redrawn, "skipped": skipped,
            "out": str(redrawn_dir)}


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _translation_metrics(config: RunConfig, corpus: dg.Corpus, weights_path):
    state, meta = load_weights(weights_path)
    _check_generator_meta(weights_path, meta)
    net = tr._resolve_generator((state, meta))
    threshold = config.redrawer.lowpass_threshold
    rng = np.random.default_rng([config.seed, 99])
    batch = dg.sample_translation_batch(corpus, config.eval.samples, rng,
                                        style_k=config.redrawer.style_k)
    losses, wins = [], []
    for sample in batch:
        style = [p.image for p in sample.style_set]
        low, high = sample.content.image, sample.high.image
        t = tr.generate(net, low, style)
        l_hat = tr.generate(net, low, [low])
        h_hat = tr.generate(net, high, [high])
        losses.append(tr.reconstruction_loss((t, l_hat, h_hat), low, high,
                                             threshold))
        box = sample.content.box
        wins.append(tr.highfreq_energy(t, box, threshold=threshold) >
                    tr.highfreq_energy(low, box, threshold=threshold))
    return float(np.mean(losses)), float(np.mean(wins))


def cmd_eval(config: RunConfig) -> dict:
    """Report embedding separation and cluster purity on the corpus, plus
    validation translation metrics when redrawer weights exist."""
    corpus = _load_corpus(config)
    encoder = load_weights(_require_file(
        config.artifact(ENCODER_WEIGHTS),
        "encoder weights (run train-encoder first)"))
    embeddings = se.embed_corpus(encoder, corpus)
    designs = [p.design_id for p in corpus]
    labels = se.upgma_cluster(embeddings,
                              cut_distance=config.cluster.cut_distance,
                              n_clusters=config.cluster.n_clusters)
    try:
        ratio = se.separation_ratio(embeddings, designs)
    except ValidationError:
        ratio = None

    report = [
        ("embeddings", len(corpus)),
        ("clusters", len(set(labels.tolist()))),
        ("separation_ratio", "unavailable" if ratio is None else ratio),
        ("purity", cluster_purity(labels, designs)),
    ]
    g_path = config.artifact(REDRAWER_WEIGHTS["g"])
    if g_path.exists():
        reconstruction, win_rate = _translation_metrics(config, corpus, g_path)
        report += [("val_samples", config.eval.samples),
                   ("val_reconstruction", reconstruction),
                   ("highfreq_win_rate", win_rate)]
    else:
        report += [("val_samples", 0),
                   ("val_reconstruction", "unavailable"),
                   ("highfreq_win_rate", "unavailable")]

    _persist_config(config)
    _write_table(config.artifact("eval_report.tsv"), ("metric", "value"),
                 report)
    for key, value in report:
        print(f"eval: {key}={_cell(value)}")
    return dict(report)


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; 2 means I/O error here
    def error(self, message):
        raise ValidationError(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ctxredraw",
                     description="Context-aware redrawing pipeline: corpus "
                                 "synthesis, training, clustering, redrawing, "
                                 "and evaluation.")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name: str, text: str):
        command = sub.add_parser(name, help=text, description=text)
        command.add_argument("--config", metavar="PATH",
                             help="JSON run configuration file")
        command.add_argument("--seed", type=int, metavar="N",
                             help="override the configured seed")
        command.add_argument("--out", metavar="DIR",
                             help="override the configured output directory")
        return command

    add("synth", "render the synthetic labeled corpus and demo inputs")
    for stage in ("encoder", "redrawer"):
        command = add(f"train-{stage}", f"train the {stage} stage")
        command.add_argument("--steps", type=int, metavar="N",
                             help="override the configured step count")
    command = add("cluster", "cluster an embeddings table and report quality")
    command.add_argument("--embeddings", metavar="PATH",
                         help="embeddings table (default: <out>/embeddings.tsv)")
    command = add("redraw", "redraw annotated regions in a frame sequence")
    command.add_argument("--frames", metavar="DIR",
                         help="input frame directory (PNG sequence)")
    command.add_argument("--manifest", metavar="PATH",
                         help="region manifest for the frames")
    command.add_argument("--guide", metavar="PATH",
                         help="color-guide region manifest")
    command.add_argument("--weights", metavar="PATH",
                         help="generator weights file")
    add("eval", "report embedding and translation metrics")
    return parser


def _effective_config(args) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.out is not None:
        config = dataclasses.replace(config, out_dir=args.out)
    return config


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise ValidationError("a subcommand is required")
        config = _effective_config(args)
        torch.set_num_threads(config.num_threads)
        if args.command == "synth":
            cmd_synth(config)
        elif args.command in ("train-encoder", "train-redrawer"):
            stage = args.command.split("-", 1)[1]
            if args.steps is not None:
                section = dataclasses.replace(getattr(config, stage),
                                              steps=args.steps)
                config = dataclasses.replace(config, **{stage: section})
            cmd_train(config, stage)
        elif args.command == "cluster":
            cmd_cluster(config, args.embeddings)
        elif args.command == "redraw":
            cmd_redraw(config, args.frames, args.manifest, args.guide,
                       args.weights)
        else:
            cmd_eval(config)
        return 0
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
