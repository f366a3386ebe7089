"""Tests for manifest ingestion, detail splitting, crop standardization,
the synthetic corpus generator, and the balanced samplers."""

import numpy as np
import pytest
import scipy.ndimage
import scipy.stats

from ctxredraw import datasetgen as dg
from ctxredraw import imagemath as im
from ctxredraw.validation import DatasetError, FormatError, ValidationError


# ---------------------------------------------------------------------------
# Manifest ingestion
# ---------------------------------------------------------------------------

def _write_frame(path, h=32, w=48):
    im.write_png(path, np.full((h, w, 3), 0.5))


def test_ingest_empty_manifest(tmp_path):
    manifest = tmp_path / "m.csv"
    manifest.write_text("")
    assert dg.ingest_manifest(manifest) == []


def test_ingest_three_row_fixture(tmp_path):
    _write_frame(tmp_path / "a.png")
    _write_frame(tmp_path / "b.png")
    manifest = tmp_path / "m.csv"
    manifest.write_text(
        "a.png,1,2,10,8,eye,prodA,prodA-d0\n"
        "a.png,20,4,12,12,eye,prodA\n"
        "b.png,0,0,48,32,face,prodB,prodB-d1\n"
    )
    regions = dg.ingest_manifest(manifest)
    assert len(regions) == 3
    assert regions[0].frame_ref == str(tmp_path / "a.png")
    assert regions[0].box == (1, 2, 10, 8)
    assert regions[0].kind == "eye"
    assert regions[0].production_id == "prodA"
    assert regions[0].design_id == "prodA-d0"
    assert regions[1].design_id is None
    assert regions[2].kind == "face"


def test_ingest_rejects_out_of_bounds_box(tmp_path):
    _write_frame(tmp_path / "a.png")
    manifest = tmp_path / "m.csv"
    manifest.write_text(
        "a.png,1,2,10,8,eye,prodA\n"
        "a.png,40,2,20,8,eye,prodA\n"
    )
    rejections = []
    regions = dg.ingest_manifest(manifest, rejections=rejections)
    assert len(regions) == 1
    assert len(rejections) == 1
    assert "line 2" in rejections[0]


def test_ingest_rejects_missing_frame(tmp_path):
    _write_frame(tmp_path / "a.png")
    manifest = tmp_path / "m.csv"
    manifest.write_text(
        "a.png,1,2,10,8,eye,prodA\n"
        "ghost.png,1,2,10,8,eye,prodA\n"
    )
    rejections = []
    regions = dg.ingest_manifest(manifest, rejections=rejections)
    assert len(regions) == 1
    assert "line 2" in rejections[0] and "ghost.png" in rejections[0]


def test_ingest_malformed_row_is_format_error(tmp_path):
    _write_frame(tmp_path / "a.png")
    manifest = tmp_path / "m.csv"
    manifest.write_text("a.png,1,2,ten,8,eye,prodA\n")
    with pytest.raises(FormatError, match="line 1"):
        dg.ingest_manifest(manifest)
    manifest.write_text("a.png,1,2,8\n")
    with pytest.raises(FormatError, match="line 1"):
        dg.ingest_manifest(manifest)


def test_ingest_missing_file_is_oserror(tmp_path):
    with pytest.raises(OSError):
        dg.ingest_manifest(tmp_path / "nope.csv")


# ---------------------------------------------------------------------------
# Level-of-detail split
# ---------------------------------------------------------------------------

def _region(w, h):
    return dg.AnnotatedRegion("f.png", (0, 0, w, h), "eye", "p")


def test_lod_split_paper_thresholds():
    frame_area = 1920 * 1080
    assert dg.lod_split(_region(80, 80), frame_area) == "low"
    assert dg.lod_split(_region(100, 100), frame_area) == "high"


def test_lod_split_middle_band_discarded():
    # 0.0031 <= ratio <= 0.0048 has no role
    assert dg.lod_split(_region(62, 62), 1000 * 1000) == "discarded"


def test_lod_split_monotone():
    frame_area = 500 * 500
    order = {"low": 0, "discarded": 1, "high": 2}
    last = 0
    for side in range(2, 60):
        label = order[dg.lod_split(_region(side, side), frame_area)]
        assert label >= last
        last = label


def test_lod_split_requires_positive_area():
    with pytest.raises(ValidationError):
        dg.lod_split(_region(10, 10), 0)


# ---------------------------------------------------------------------------
# Crop standardization
# ---------------------------------------------------------------------------

def test_standardize_crop_identity():
    rng = np.random.default_rng(61)
    frame = rng.uniform(size=(40, 40, 3))
    region = dg.AnnotatedRegion("f.png", (8, 4, 16, 16), "eye", "p")
    patch, box = dg.standardize_crop(frame, region, out_size=(16, 16), context_margin=0.0)
    assert np.array_equal(patch, frame[4:20, 8:24])
    assert box == (0, 0, 16, 16)


def test_standardize_crop_constant_frame():
    frame = np.full((40, 40, 3), 0.3)
    region = dg.AnnotatedRegion("f.png", (10, 10, 8, 8), "eye", "p")
    patch, _ = dg.standardize_crop(frame, region, out_size=(32, 32))
    assert patch.shape == (32, 32, 3)
    assert np.abs(patch - 0.3).max() < 1e-12


def test_standardize_crop_matches_resample_oracle():
    frame = np.zeros((2, 2, 3))
    frame[0, 1] = 1.0
    frame[1, 0] = 1.0
    region = dg.AnnotatedRegion("f.png", (0, 0, 2, 2), "eye", "p")
    patch, _ = dg.standardize_crop(frame, region, out_size=(3, 3), context_margin=0.0)
    assert np.allclose(patch, im.resample_bilinear(frame, 3, 3))


def test_standardize_crop_margin_geometry():
    frame = np.zeros((100, 100, 3))
    region = dg.AnnotatedRegion("f.png", (40, 40, 20, 20), "eye", "p")
    # margin 0.25 of a 20px box = 5px per side -> 30px crop -> x2 scale
    patch, box = dg.standardize_crop(frame, region, out_size=(60, 60), context_margin=0.25)
    assert patch.shape == (60, 60, 3)
    assert box == (10, 10, 40, 40)


def test_standardize_crop_degenerate_box():
    frame = np.zeros((10, 10, 3))
    region = dg.AnnotatedRegion("f.png", (2, 2, 0, 4), "eye", "p")
    with pytest.raises(ValidationError):
        dg.standardize_crop(frame, region, out_size=(8, 8))


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

def _small_specs(n=2):
    return dg.default_specs(n_productions=n, designs_per_production=3, seed=17)


def test_synth_deterministic():
    specs = _small_specs()
    a = dg.synth_generate(specs, designs_per_production=3, patches_per_design=4,
                          patch_size=(32, 32))
    b = dg.synth_generate(specs, designs_per_production=3, patches_per_design=4,
                          patch_size=(32, 32))
    assert len(a) == len(b)
    for pa, pb in zip(a, b):
        assert pa.patch_id == pb.patch_id
        assert np.array_equal(pa.image, pb.image)


def test_synth_counts_and_balance():
    corpus = dg.synth_generate(_small_specs(), designs_per_production=3,
                               patches_per_design=20, patch_size=(32, 32))
    assert len(corpus) == 2 * 3 * 20
    for production in corpus.productions():
        designs = corpus.designs(production)
        assert len(designs) == 3
        for design in designs:
            assert len(corpus.pool(design_id=design, detail="low")) == 10
            assert len(corpus.pool(design_id=design, detail="high")) == 10


def test_synth_high_detail_has_more_highlights():
    corpus = dg.synth_generate(_small_specs(), designs_per_production=3,
                               patches_per_design=4, patch_size=(48, 48))
    production = corpus.productions()[0]
    design = corpus.designs(production)[0]
    low = corpus.pool(design_id=design, detail="low")[0]
    high = corpus.pool(design_id=design, detail="high")[0]

    def blob_count(patch):
        x, y, w, h = patch.box
        region = patch.image[y:y + h, x:x + w]
        bright = region.min(axis=2) > 0.9
        _, count = scipy.ndimage.label(bright)
        return count

    assert blob_count(high) > blob_count(low)


def test_synth_validates_inputs():
    specs = _small_specs()
    with pytest.raises(ValidationError):
        dg.synth_generate(specs[:1], designs_per_production=3, patches_per_design=4)
    with pytest.raises(ValidationError):
        dg.synth_generate(specs, designs_per_production=1, patches_per_design=4)
    with pytest.raises(ValidationError):
        dg.synth_generate(specs, designs_per_production=3, patches_per_design=5)


def test_spec_validates_highlight_counts():
    with pytest.raises(ValidationError):
        dg.SyntheticStyleSpec(
            production_id="p", palette=[(1.0, 0.0, 0.0), (0.0, 1.0, 0.0)],
            line_width=1.0, iris_shape=(0.9, 0.55), highlight_count_low=3,
            highlight_count_high=2, seed=0,
        )


def test_corpus_save_load_round_trip(tmp_path):
    corpus = dg.synth_generate(_small_specs(), designs_per_production=3,
                               patches_per_design=2, patch_size=(32, 32))
    root = tmp_path / "corpus"
    corpus.save(root)
    loaded = dg.Corpus.load(root)
    assert len(loaded) == len(corpus)
    for pa, pb in zip(corpus, loaded):
        assert pa.patch_id == pb.patch_id
        assert pa.production_id == pb.production_id
        assert pa.design_id == pb.design_id
        assert pa.detail == pb.detail
        assert pa.box == pb.box
        # images round-trip through 8-bit PNG quantization
        quantized = np.floor(np.clip(pa.image, 0, 1) * 255.0 + 0.5) / 255.0
        assert np.abs(pb.image - quantized).max() < 1e-12


def test_corpus_load_rejects_bad_index(tmp_path):
    root = tmp_path / "corpus"
    root.mkdir()
    (root / "index.csv").write_text("patch_id,path\nbroken\n")
    with pytest.raises(FormatError):
        dg.Corpus.load(root)


def test_corpus_load_missing_root(tmp_path):
    with pytest.raises(OSError):
        dg.Corpus.load(tmp_path / "nowhere")


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------

def _corpus(n_prod=2, designs=3, patches=4, size=(32, 32)):
    return dg.synth_generate(dg.default_specs(n_prod, designs, seed=5),
                             designs_per_production=designs,
                             patches_per_design=patches, patch_size=size)


def test_triplet_structure_exhaustive_small_case():
    corpus = _corpus(n_prod=2, designs=2, patches=2)
    batch = dg.sample_triplet_batch(corpus, batch=64, seed=3)
    assert len(batch) == 64
    for p1, p2, p3, production in batch:
        assert p1.design_id == p2.design_id
        assert p1.patch_id != p2.patch_id
        assert p3.design_id != p1.design_id
        assert p1.production_id == p2.production_id == p3.production_id == production


def test_triplet_deterministic():
    corpus = _corpus()
    a = dg.sample_triplet_batch(corpus, batch=16, seed=9)
    b = dg.sample_triplet_batch(corpus, batch=16, seed=9)
    assert [(x.patch_id, y.patch_id, z.patch_id) for x, y, z, _ in a] == \
           [(x.patch_id, y.patch_id, z.patch_id) for x, y, z, _ in b]


def test_triplet_generator_stream():
    corpus = _corpus()
    rng = np.random.default_rng(9)
    a = dg.sample_triplet_batch(corpus, batch=8, seed=rng)
    b = dg.sample_triplet_batch(corpus, batch=8, seed=rng)
    assert [p.patch_id for p, _, _, _ in a] != [p.patch_id for p, _, _, _ in b]


def test_triplet_balance_chi_squared():
    # 2 productions with 2 and 8 designs; production mass must stay uniform.
    specs = dg.default_specs(2, 8, seed=21)
    corpus_a = dg.synth_generate(specs[:1], designs_per_production=2,
                                 patches_per_design=4, patch_size=(32, 32),
                                 _allow_single_production=True)
    corpus_b = dg.synth_generate(specs[1:], designs_per_production=8,
                                 patches_per_design=4, patch_size=(32, 32),
                                 _allow_single_production=True)
    corpus = dg.Corpus(list(corpus_a) + list(corpus_b))
    draws = dg.sample_triplet_batch(corpus, batch=10_000, seed=2)
    productions = [s.production_id for s in draws]
    counts = [productions.count(p) for p in corpus.productions()]
    assert scipy.stats.chisquare(counts).pvalue > 0.01
    # designs within the 8-design production must also stay uniform
    rich = corpus.productions()[1]
    d_counts = {}
    for p1, _, _, production in draws:
        if production == rich:
            d_counts[p1.design_id] = d_counts.get(p1.design_id, 0) + 1
    assert len(d_counts) == 8
    assert scipy.stats.chisquare(list(d_counts.values())).pvalue > 0.01


def test_triplet_preconditions():
    specs = dg.default_specs(2, 2, seed=4)
    single_design = dg.synth_generate(specs, designs_per_production=2,
                                      patches_per_design=2, patch_size=(32, 32))
    only_one = dg.Corpus([p for p in single_design
                          if p.design_id == single_design.designs(single_design.productions()[0])[0]
                          or p.production_id != single_design.productions()[0]])
    # first production now has a single design
    with pytest.raises(DatasetError):
        dg.sample_triplet_batch(only_one, batch=4, seed=1)


def test_translation_batch_structure():
    corpus = _corpus()
    batch = dg.sample_translation_batch(corpus, batch=200, seed=11)
    for sample in batch:
        assert sample.design_low != sample.design_high
        assert sample.content.detail == "low"
        assert sample.high.detail == "high"
        assert sample.content.design_id == sample.design_low
        assert sample.high.design_id == sample.design_high
        assert all(s.detail == "high" and s.design_id == sample.design_high
                   for s in sample.style_set)
        assert all(s.patch_id != sample.high.patch_id for s in sample.style_set)


def test_translation_style_set_size():
    corpus = _corpus(patches=8)  # 4 high patches per design
    batch = dg.sample_translation_batch(corpus, batch=50, seed=12, style_k=3)
    assert all(len(s.style_set) == 3 for s in batch)
    tiny = _corpus(patches=4)  # 2 high patches per design; pool minus h leaves 1
    batch = dg.sample_translation_batch(tiny, batch=50, seed=12, style_k=3)
    assert all(len(s.style_set) == 1 for s in batch)


def test_translation_deterministic():
    corpus = _corpus()
    a = dg.sample_translation_batch(corpus, batch=16, seed=13)
    b = dg.sample_translation_batch(corpus, batch=16, seed=13)
    assert [s.content.patch_id for s in a] == [s.content.patch_id for s in b]
    assert [s.high.patch_id for s in a] == [s.high.patch_id for s in b]


# ---------------------------------------------------------------------------
# Synthetic frames and guide sheets (plumbing for the inference pipeline)
# ---------------------------------------------------------------------------

def test_synth_frames_boxes_are_low_detail():
    spec = dg.default_specs(1, 2, seed=30)[0]
    frames = dg.synth_frame_set(spec, design_indices=[0, 1], n_frames=2,
                                frame_size=(160, 240), seed=31)
    assert len(frames) == 2
    for frame, regions in frames:
        assert frame.shape == (160, 240, 3)
        for region in regions:
            assert dg.lod_split(region, 160 * 240) == "low"
            x, y, w, h = region.box
            assert 0 <= x and x + w <= 240 and 0 <= y and y + h <= 160


def test_synth_guide_sheet():
    spec = dg.default_specs(1, 3, seed=32)[0]
    sheet, regions = dg.synth_guide_sheet(spec, design_indices=[0, 1, 2],
                                          cell_size=64, seed=33)
    assert sheet.shape[0] == 64 and sheet.shape[1] == 3 * 64
    assert len(regions) == 3
    designs = {r.design_id for r in regions}
    assert len(designs) == 3
