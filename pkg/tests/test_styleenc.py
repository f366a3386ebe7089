"""Tests for the design encoder, triplet loss, UPGMA clustering, and the
separation-ratio metric."""

import numpy as np
import pytest
import torch

from ctxredraw import datasetgen as dg
from ctxredraw import styleenc as se
from ctxredraw.validation import DatasetError, ValidationError

torch.set_num_threads(1)


# ---------------------------------------------------------------------------
# Independent oracle: brute-force UPGMA that recomputes every inter-cluster
# average distance from the original point matrix at every step.
# ---------------------------------------------------------------------------

def brute_force_upgma(points):
    n = len(points)
    dist = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=2)
    members = {i: [i] for i in range(n)}
    merges = []
    next_id = n
    while len(members) > 1:
        best = None
        for i in sorted(members):
            for j in sorted(members):
                if i >= j:
                    continue
                pairs = [dist[a, b] for a in members[i] for b in members[j]]
                avg = sum(pairs) / len(pairs)
                key = (avg, i, j)
                if best is None or key < best:
                    best = key
        avg, i, j = best
        merges.append((i, j, avg, len(members[i]) + len(members[j])))
        members[next_id] = members.pop(i) + members.pop(j)
        next_id += 1
    return merges


# ---------------------------------------------------------------------------
# Triplet loss
# ---------------------------------------------------------------------------

def test_triplet_satisfied_margin():
    e1 = np.zeros(32)
    e2 = np.zeros(32)
    e3 = np.zeros(32)
    e3[0] = np.sqrt(2.0)
    assert se.triplet_margin_loss(e1, e2, e3) == 0.0


def test_triplet_collapsed_embedding():
    e = np.ones(32)
    assert se.triplet_margin_loss(e, e, e) == 1.0


def test_triplet_hand_arithmetic():
    e1 = np.zeros(32)
    e2 = np.zeros(32)
    e2[0] = 1.0
    e3 = e2.copy()
    assert se.triplet_margin_loss(e1, e2, e3) == 1.0


def test_triplet_nonnegative_and_rotation_invariant():
    rng = np.random.default_rng(71)
    for _ in range(10):
        e = rng.normal(size=(3, 32))
        value = se.triplet_margin_loss(e[0], e[1], e[2])
        assert value >= 0.0
        q, _ = np.linalg.qr(rng.normal(size=(32, 32)))
        rotated = e @ q.T
        rotated_value = se.triplet_margin_loss(rotated[0], rotated[1], rotated[2])
        assert abs(value - rotated_value) < 1e-9


def test_triplet_torch_matches_numpy():
    rng = np.random.default_rng(72)
    e = rng.normal(size=(3, 32))
    expected = se.triplet_margin_loss(e[0], e[1], e[2])
    t = torch.from_numpy(e)
    got = se.triplet_margin_loss_torch(t[0], t[1], t[2]).item()
    assert abs(got - expected) < 1e-9


# ---------------------------------------------------------------------------
# UPGMA clustering
# ---------------------------------------------------------------------------

def _pad32(points_1d):
    out = np.zeros((len(points_1d), 32))
    out[:, 0] = points_1d
    return out


def test_upgma_obvious_separation():
    labels = se.upgma_cluster(_pad32([0.0, 1.0, 10.0]), cut_distance=5.0)
    assert labels[0] == labels[1]
    assert labels[2] != labels[0]


def test_upgma_identical_points_one_cluster():
    labels = se.upgma_cluster(np.ones((5, 32)), cut_distance=0.5)
    assert len(set(labels)) == 1


def test_upgma_merge_sequence_matches_brute_force():
    rng = np.random.default_rng(73)
    for _ in range(10):
        points = rng.normal(size=(8, 4))
        expected = brute_force_upgma(points)
        got = se.upgma_linkage(points)
        assert [(i, j) for i, j, _, _ in got] == [(i, j) for i, j, _, _ in expected]
        for (_, _, ha, sa), (_, _, hb, sb) in zip(got, expected):
            assert abs(ha - hb) < 1e-9
            assert sa == sb


def test_upgma_permutation_invariant_up_to_renaming():
    rng = np.random.default_rng(74)
    points = rng.normal(size=(9, 3))
    labels = se.upgma_cluster(points, cut_distance=2.0)
    perm = rng.permutation(9)
    permuted_labels = se.upgma_cluster(points[perm], cut_distance=2.0)
    # same partition: equivalence classes must coincide
    def partition(ls, order):
        groups = {}
        for idx, lab in zip(order, ls):
            groups.setdefault(lab, set()).add(int(idx))
        return {frozenset(g) for g in groups.values()}
    assert partition(labels, range(9)) == partition(permuted_labels, perm)


def test_upgma_single_point():
    labels = se.upgma_cluster(np.zeros((1, 32)), cut_distance=1.0)
    assert list(labels) == [0]


def test_upgma_cluster_count_cut():
    points = _pad32([0.0, 1.0, 10.0])
    assert list(se.upgma_cluster(points, n_clusters=3)) == [0, 1, 2]
    assert list(se.upgma_cluster(points, n_clusters=2)) == [0, 0, 1]
    assert len(set(se.upgma_cluster(points, n_clusters=1))) == 1


def test_upgma_cluster_count_validation():
    points = _pad32([0.0, 1.0, 10.0])
    with pytest.raises(ValidationError):
        se.upgma_cluster(points, n_clusters=4)  # more clusters than points
    with pytest.raises(ValidationError):
        se.upgma_cluster(points, n_clusters=0)
    with pytest.raises(ValidationError):
        se.upgma_cluster(points, cut_distance=1.0, n_clusters=2)


def test_upgma_auto_cut_by_silhouette():
    rng = np.random.default_rng(75)
    blob_a = rng.normal(size=(10, 8)) * 0.05
    blob_b = rng.normal(size=(10, 8)) * 0.05 + 4.0
    points = np.vstack([blob_a, blob_b])
    labels = se.upgma_cluster(points, cut_distance=None)
    assert len(set(labels)) == 2
    assert len(set(labels[:10])) == 1
    assert len(set(labels[10:])) == 1


# ---------------------------------------------------------------------------
# Separation ratio
# ---------------------------------------------------------------------------

def test_separation_ratio_zero_spread():
    points = np.array([[0.0], [0.0], [5.0], [5.0]])
    labels = ["a", "a", "b", "b"]
    assert se.separation_ratio(_pad(points), labels) == 0.0


def _pad(points):
    out = np.zeros((len(points), 32))
    out[:, :points.shape[1]] = points
    return out


def test_separation_ratio_hand_example():
    points = np.array([[0.0], [2.0], [10.0], [12.0]])
    labels = ["a", "a", "b", "b"]
    assert abs(se.separation_ratio(_pad(points), labels) - 0.04) < 1e-12


def test_separation_ratio_invariances():
    rng = np.random.default_rng(76)
    points = rng.normal(size=(12, 32))
    labels = ["a", "b", "c"] * 4
    base = se.separation_ratio(points, labels)
    q, _ = np.linalg.qr(rng.normal(size=(32, 32)))
    rotated = points @ q.T + rng.normal(size=32)
    assert abs(se.separation_ratio(rotated, labels) - base) < 1e-9
    assert abs(se.separation_ratio(points * 3.7, labels) - base) < 1e-9


def test_separation_ratio_errors():
    points = np.zeros((3, 32))
    with pytest.raises(ValidationError):
        se.separation_ratio(points, ["a", "a", "b"])  # design b has 1 point
    points = np.zeros((4, 32))
    with pytest.raises(ValidationError):
        se.separation_ratio(points, ["a", "a", "b", "b"])  # coincident centroids
    with pytest.raises(ValidationError):
        se.separation_ratio(np.zeros((2, 32)), ["a", "a"])  # single design


# ---------------------------------------------------------------------------
# Design encoder forward pass
# ---------------------------------------------------------------------------

def _tiny_corpus():
    return dg.synth_generate(dg.default_specs(2, 2, seed=42), designs_per_production=2,
                             patches_per_design=4, patch_size=(32, 32))


def _tiny_config(**overrides):
    kwargs = dict(base_width=8, style_width=8, depth=3, steps=8, batch=4,
                  context_size=2, seed=0)
    kwargs.update(overrides)
    return se.EncoderConfig(**kwargs)


def test_encode_design_deterministic():
    corpus = _tiny_corpus()
    net = se.DesignEncoderNet(se.EncoderConfig(base_width=8, style_width=8, depth=3, seed=1))
    portrait = corpus[0].image
    context = [p.image for p in corpus.pool(production_id=corpus[0].production_id)[:3]]
    a = se.encode_design(net, portrait, context)
    b = se.encode_design(net, portrait, context)
    assert a.shape == (32,)
    assert np.array_equal(a, b)


def test_encode_design_context_permutation_invariant():
    corpus = _tiny_corpus()
    net = se.DesignEncoderNet(se.EncoderConfig(base_width=8, style_width=8, depth=3, seed=2))
    portrait = corpus[0].image
    context = [p.image for p in corpus.pool(production_id=corpus[0].production_id)[:4]]
    a = se.encode_design(net, portrait, context)
    b = se.encode_design(net, portrait, list(reversed(context)))
    assert np.abs(a - b).max() < 1e-6


def test_encode_design_empty_context_rejected():
    net = se.DesignEncoderNet(se.EncoderConfig(base_width=8, style_width=8, depth=3, seed=3))
    with pytest.raises(ValidationError):
        se.encode_design(net, np.zeros((32, 32, 3)), [])


def test_encode_design_regression_fixture():
    # Frozen from the seeded forward pass at the initial (untrained) weights;
    # guards against silent drift in the architecture or initialization.
    net = se.DesignEncoderNet(se.EncoderConfig(base_width=8, style_width=8, depth=3, seed=7))
    portrait = np.tile(np.linspace(0.1, 0.9, 32)[None, :, None], (32, 1, 3))
    context = [np.full((32, 32, 3), 0.25), np.full((32, 32, 3), 0.75)]
    got = se.encode_design(net, portrait, context)
    assert np.abs(got[:4] - EXPECTED_FIXTURE_HEAD).max() < 1e-6
    assert abs(float(np.linalg.norm(got)) - EXPECTED_FIXTURE_NORM) < 1e-5


# Captured once from the seeded run above.
EXPECTED_FIXTURE_HEAD = np.array([-0.18579651415348053, 0.10671025514602661,
                                  -0.0221744179725647, -0.04390249401330948])
EXPECTED_FIXTURE_NORM = 0.7768453269131679


# ---------------------------------------------------------------------------
# Encoder training
# ---------------------------------------------------------------------------

def test_train_reduces_triplet_loss():
    corpus = _tiny_corpus()
    result = se.train_style_encoder(corpus, _tiny_config(steps=60))
    losses = [loss for _, loss in result.log]
    first = np.mean(losses[:10])
    last = np.mean(losses[-10:])
    assert last < first


def test_train_deterministic():
    corpus = _tiny_corpus()
    a = se.train_style_encoder(corpus, _tiny_config(steps=6))
    b = se.train_style_encoder(corpus, _tiny_config(steps=6))
    assert a.log == b.log
    for name in a.state:
        assert np.array_equal(a.state[name], b.state[name])


def test_train_single_design_rejected():
    corpus = _tiny_corpus()
    first_design = corpus.all_designs()[0]
    crippled = dg.Corpus([p for p in corpus if p.design_id == first_design])
    with pytest.raises(DatasetError):
        se.train_style_encoder(crippled, _tiny_config())


# ---------------------------------------------------------------------------
# Estimator wrappers
# ---------------------------------------------------------------------------

def test_style_encoder_estimator_roundtrip():
    est = se.StyleEncoder(base_width=8, style_width=8, depth=3, steps=4, batch=4,
                          context_size=2, seed=0)
    params = est.get_params()
    assert params["base_width"] == 8
    clone = se.StyleEncoder(**params)
    assert clone.get_params() == params


def test_style_encoder_fit_transform():
    corpus = _tiny_corpus()
    est = se.StyleEncoder(base_width=8, style_width=8, depth=3, steps=4, batch=4,
                          context_size=2, seed=0)
    embeddings = est.fit(corpus).transform(corpus)
    assert embeddings.shape == (len(corpus), 32)
    assert np.all(np.isfinite(embeddings))
    again = est.transform(corpus)
    assert np.array_equal(embeddings, again)


def test_upgma_estimator():
    rng = np.random.default_rng(77)
    points = np.vstack([rng.normal(size=(6, 5)) * 0.1,
                        rng.normal(size=(6, 5)) * 0.1 + 3.0])
    est = se.UpgmaClusterer()
    labels = est.fit_predict(points)
    assert est.n_clusters_ == 2
    assert len(set(labels[:6])) == 1 and len(set(labels[6:])) == 1
    assert est.cut_distance_ > 0
    fixed = se.UpgmaClusterer(cut_distance=100.0).fit(points)
    assert fixed.n_clusters_ == 1
