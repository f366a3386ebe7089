"""Design embedding encoder.

A small convolutional network maps an eye portrait, together with a handful of
other portraits from the same production, to a 32-component embedding.  The
extra portraits describe the production's rendering style; conditioning on
them pushes style-specific appearance out of the embedding so that distances
measure character design rather than studio look.  Training minimizes a
squared-distance triplet margin loss over (same design, same design, other
design) portrait triplets.

Also provides average-linkage (UPGMA) clustering over embeddings and the
intra/inter separation ratio used to evaluate embedding quality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.metrics import silhouette_score
from torch import nn
from torch.nn import functional as F

from . import datasetgen as dg
from . import neuralcore as nc
from .validation import DatasetError, ValidationError, check_positive_int, make_raster

TRIPLET_MARGIN = 1.0
EMBED_DIM = 32

# softplus(x + _SOFTPLUS_SHIFT) equals 1 at x = 0, so predicted AdaIN scales
# start at identity.
_SOFTPLUS_SHIFT = math.log(math.e - 1.0)


# ---------------------------------------------------------------------------
# Triplet loss
# ---------------------------------------------------------------------------

def triplet_margin_loss_torch(e1: torch.Tensor, e2: torch.Tensor,
                              e3: torch.Tensor) -> torch.Tensor:
    """Squared-distance triplet margin loss; supports (..., D) batches."""
    if e1.shape != e2.shape or e1.shape != e3.shape:
        raise ValidationError("triplet embeddings must share a shape")
    positive = ((e1 - e2) ** 2).sum(dim=-1)
    negative = ((e1 - e3) ** 2).sum(dim=-1)
    return torch.clamp(positive - negative + TRIPLET_MARGIN, min=0.0)


def triplet_margin_loss(e1: np.ndarray, e2: np.ndarray, e3: np.ndarray) -> float:
    """Triplet margin loss on numpy embedding vectors."""
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    e3 = np.asarray(e3, dtype=np.float64)
    if e1.ndim != 1 or e1.shape != e2.shape or e1.shape != e3.shape:
        raise ValidationError("triplet embeddings must be equal-length vectors")
    value = triplet_margin_loss_torch(torch.from_numpy(e1), torch.from_numpy(e2),
                                      torch.from_numpy(e3))
    return float(value)


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------

@dataclass
class EncoderConfig:
    """Architecture and training settings for the design encoder."""

    base_width: int = 32
    style_width: int = 16
    depth: int = 4
    embed_dim: int = EMBED_DIM
    steps: int = 2000
    batch: int = 8
    lr: float = 1e-4
    context_size: int = 4
    seed: int = 0
    log_every: int = 1

    def __post_init__(self):
        check_positive_int(self.base_width, "base_width")
        check_positive_int(self.style_width, "style_width")
        check_positive_int(self.depth, "depth")
        check_positive_int(self.embed_dim, "embed_dim")
        check_positive_int(self.steps, "steps")
        check_positive_int(self.batch, "batch")
        check_positive_int(self.context_size, "context_size")
        check_positive_int(self.log_every, "log_every")
        if not self.lr > 0:
            raise ValidationError("lr must be positive")


class _ResidualDown(nn.Module):
    """Stride-2 residual block: two 3x3 convolutions plus a 1x1 skip."""

    def __init__(self, cin: int, cout: int, generator: torch.Generator):
        super().__init__()
        self.conv1 = nc.seeded_conv2d(cin, cout, 3, stride=2, generator=generator)
        self.conv2 = nc.seeded_conv2d(cout, cout, 3, stride=1, generator=generator)
        self.skip = nc.seeded_conv2d(cin, cout, 1, stride=2, generator=generator)

    def forward(self, x):
        h = F.relu(self.conv1(x))
        h = self.conv2(h)
        return F.relu(h + self.skip(x))


class DesignEncoderNet(nn.Module):
    """Portrait-plus-context encoder producing design embeddings.

    Content path: ``depth`` residual downsampling blocks over the RGB
    portrait.  Style path: ``depth`` plain downsampling convolutions over the
    lightness channel of each context portrait, globally pooled and averaged
    over the context set.  The pooled style vector predicts per-channel AdaIN
    statistics that re-normalize the content features before two final linear
    layers produce the embedding.
    """

    def __init__(self, config: EncoderConfig | None = None):
        super().__init__()
        config = config or EncoderConfig()
        self.config = config
        generator = torch.Generator().manual_seed(config.seed)

        widths = [config.base_width * (2 ** i) for i in range(config.depth)]
        blocks = []
        cin = 3
        for cout in widths:
            blocks.append(_ResidualDown(cin, cout, generator))
            cin = cout
        self.content_blocks = nn.ModuleList(blocks)
        self.content_width = cin

        style_widths = [config.style_width * (2 ** i) for i in range(config.depth)]
        style_blocks = []
        sin = 1
        for sout in style_widths:
            style_blocks.append(nc.seeded_conv2d(sin, sout, 3, stride=2,
                                                 generator=generator))
            sin = sout
        self.style_blocks = nn.ModuleList(style_blocks)
        self.style_width_out = sin

        self.adain_head = nc.seeded_linear(sin, 2 * self.content_width,
                                           generator=generator)
        self.fc1 = nc.seeded_linear(self.content_width, self.content_width,
                                    generator=generator)
        self.fc2 = nc.seeded_linear(self.content_width, config.embed_dim,
                                    generator=generator)

    def style_features(self, lightness: torch.Tensor) -> torch.Tensor:
        """(N, 1, H, W) lightness maps -> (N, S) pooled style features."""
        h = lightness
        for block in self.style_blocks:
            h = F.relu(block(h))
        return h.mean(dim=(2, 3))

    def adain_params(self, style_vector: torch.Tensor):
        raw = self.adain_head(style_vector)
        mean, scale_raw = raw.chunk(2, dim=-1)
        std = F.softplus(scale_raw + _SOFTPLUS_SHIFT)
        return mean, std

    def penultimate(self, images: torch.Tensor,
                    style_vector: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) portraits + (B, S) style vectors -> (B, C) features.

        Output of the first final linear layer, after the nonlinearity.
        """
        h = images
        for block in self.content_blocks:
            h = block(h)
        mean, std = self.adain_params(style_vector)
        # The nonlinearity must sit between AdaIN and pooling: the spatial
        # mean of a re-normalized map is the injected style mean, so pooling
        # it directly would erase the content signal.
        h = F.relu(nc.adain(h, mean, std))
        pooled = h.mean(dim=(2, 3))
        return F.relu(self.fc1(pooled))

    def embed(self, images: torch.Tensor,
              style_vector: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.penultimate(images, style_vector))


def _to_chw(images: Sequence[np.ndarray]) -> torch.Tensor:
    stack = np.stack([make_raster(img) for img in images])
    return torch.from_numpy(stack).permute(0, 3, 1, 2).to(torch.float32)


def _context_style_vector(net: DesignEncoderNet,
                          context: Sequence[np.ndarray]) -> torch.Tensor:
    if len(context) == 0:
        raise ValidationError("context must contain at least one portrait")
    rgb = _to_chw(context)
    lightness = nc.lightness_torch(rgb).unsqueeze(1)
    return net.style_features(lightness).mean(dim=0, keepdim=True)


def encode_design(weights, portrait: np.ndarray,
                  context: Sequence[np.ndarray]) -> np.ndarray:
    """Embed one portrait conditioned on same-production context portraits.

    ``weights`` is either a ``DesignEncoderNet`` or a saved parameter set as
    produced by :func:`train_style_encoder` (``(state, meta)`` or a
    ``TrainResult``).
    """
    net = _resolve_net(weights)
    with torch.no_grad():
        style = _context_style_vector(net, context)
        images = _to_chw([portrait])
        embedding = net.embed(images, style)
    return embedding.squeeze(0).numpy().astype(np.float64)


def _resolve_net(weights) -> DesignEncoderNet:
    if isinstance(weights, DesignEncoderNet):
        return weights
    if isinstance(weights, TrainResult):
        state, meta = weights.state, weights.meta
    elif isinstance(weights, tuple) and len(weights) == 2:
        state, meta = weights
    else:
        raise ValidationError("weights must be a DesignEncoderNet, TrainResult, "
                              "or (state, meta) pair")
    config = EncoderConfig(**{k: meta[k] for k in
                              ("base_width", "style_width", "depth", "embed_dim",
                               "seed")})
    net = DesignEncoderNet(config)
    from .weights import load_state_into
    load_state_into(net, state)
    return net


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    state: dict
    meta: dict
    log: list = field(default_factory=list)


def _patch_images(patches) -> torch.Tensor:
    return _to_chw([p.image for p in patches])


def _draw_context(corpus: dg.Corpus, production_id: str, k: int,
                  rng: np.random.Generator):
    pool = corpus.pool(production_id=production_id)
    take = min(k, len(pool))
    idx = rng.choice(len(pool), size=take, replace=False)
    return [pool[i] for i in idx]


def train_style_encoder(dataset: dg.Corpus,
                        config: EncoderConfig | None = None) -> TrainResult:
    """Train the design encoder with the triplet margin loss.

    Returns the trained parameter state, the architecture metadata needed to
    rebuild the network, and a per-step loss log of ``(step, loss)`` pairs.
    """
    config = config or EncoderConfig()
    if not isinstance(dataset, dg.Corpus):
        dataset = dg.Corpus(list(dataset))

    torch.manual_seed(config.seed)
    net = DesignEncoderNet(config)
    optimizer = torch.optim.Adam(net.parameters(), lr=config.lr)
    rng = np.random.default_rng([config.seed, 91])

    log = []
    for step in range(1, config.steps + 1):
        batch = dg.sample_triplet_batch(dataset, config.batch, rng)
        anchors = _patch_images([s.p1 for s in batch])
        positives = _patch_images([s.p2 for s in batch])
        negatives = _patch_images([s.p3 for s in batch])
        styles = []
        for sample in batch:
            context = _draw_context(dataset, sample.production_id,
                                    config.context_size, rng)
            styles.append(_context_style_vector(net, [p.image for p in context]))
        style = torch.cat(styles, dim=0)

        e1 = net.embed(anchors, style)
        e2 = net.embed(positives, style)
        e3 = net.embed(negatives, style)
        loss = triplet_margin_loss_torch(e1, e2, e3).mean()

        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        if step % config.log_every == 0:
            log.append((step, float(loss.detach())))

    state = {name: tensor.detach().numpy().copy()
             for name, tensor in net.state_dict().items()}
    meta = {"base_width": config.base_width, "style_width": config.style_width,
            "depth": config.depth, "embed_dim": config.embed_dim,
            "seed": config.seed, "arch": "design-encoder"}
    return TrainResult(state=state, meta=meta, log=log)


def embed_corpus(weights, corpus) -> np.ndarray:
    """Embed every patch of a corpus, one row per patch.

    Each patch's context is the full set of same-production patches in the
    corpus, which keeps the result deterministic and order-independent.
    """
    net = _resolve_net(weights)
    corpus = corpus if isinstance(corpus, dg.Corpus) else dg.Corpus(list(corpus))
    with torch.no_grad():
        styles = {}
        for production_id in corpus.productions():
            pool = corpus.pool(production_id=production_id)
            styles[production_id] = _context_style_vector(
                net, [p.image for p in pool])
        rows = []
        for patch in corpus:
            images = _to_chw([patch.image])
            rows.append(net.embed(images, styles[patch.production_id]))
    return torch.cat(rows, dim=0).numpy().astype(np.float64)


# ---------------------------------------------------------------------------
# UPGMA clustering
# ---------------------------------------------------------------------------

def upgma_linkage(embeddings: np.ndarray):
    """Average-linkage merge sequence over Euclidean distances.

    Returns ``[(i, j, height, size), ...]`` where ``i`` and ``j`` index
    clusters in creation order (originals ``0..n-1``, merges appended) and
    ``height`` is the average inter-cluster distance at the merge.  Ties pick
    the lexicographically smallest ``(i, j)``.
    """
    points = np.asarray(embeddings, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 1:
        raise ValidationError("embeddings must be a non-empty 2-D array")
    n = points.shape[0]
    total = 2 * n - 1
    # sums[a, b] accumulates the summed pairwise point distance between
    # clusters a and b; averages divide by the size product on demand.
    sums = np.zeros((total, total))
    dist = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=2)
    sums[:n, :n] = dist
    sizes = np.zeros(total, dtype=np.int64)
    sizes[:n] = 1
    active = list(range(n))
    merges = []
    for new_id in range(n, total):
        best = None
        for ai, i in enumerate(active):
            for j in active[ai + 1:]:
                avg = sums[i, j] / (sizes[i] * sizes[j])
                key = (avg, i, j)
                if best is None or key < best:
                    best = key
        avg, i, j = best
        sizes[new_id] = sizes[i] + sizes[j]
        for k in active:
            if k in (i, j):
                continue
            merged = sums[i, k] + sums[j, k]
            sums[new_id, k] = merged
            sums[k, new_id] = merged
        active.remove(i)
        active.remove(j)
        active.append(new_id)
        merges.append((i, j, avg, int(sizes[new_id])))
    return merges


def _labels_at_cut(n: int, merges, cut_distance: float) -> np.ndarray:
    return _labels_from_merges(
        n, [(idx, m) for idx, m in enumerate(merges) if m[2] <= cut_distance])


def _labels_from_merges(n: int, applied) -> np.ndarray:
    parent = list(range(2 * n - 1))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for idx, (i, j, _, _) in applied:
        new_id = n + idx
        parent[find(i)] = new_id
        parent[find(j)] = new_id
    roots = {}
    labels = np.empty(n, dtype=np.int64)
    for idx in range(n):
        root = find(idx)
        if root not in roots:
            roots[root] = len(roots)
        labels[idx] = roots[root]
    return labels


def _auto_cut(points: np.ndarray, merges) -> float:
    """Pick the merge height whose induced partition maximizes silhouette."""
    n = points.shape[0]
    best = None
    for _, _, height, _ in merges:
        labels = _labels_at_cut(n, merges, height)
        k = len(set(labels.tolist()))
        if k < 2 or k >= n:
            continue
        score = silhouette_score(points, labels, metric="euclidean")
        if best is None or score > best[0]:
            best = (score, height)
    if best is None:
        return merges[-1][2] if merges else 0.0
    return best[1]


def upgma_cluster(embeddings: np.ndarray,
                  cut_distance: float | None = None, *,
                  n_clusters: int | None = None) -> np.ndarray:
    """Cluster embeddings by average linkage, cutting at ``cut_distance``.

    Merges with height less than or equal to the cut are applied.  When
    ``cut_distance`` is ``None`` the cut height is chosen automatically by
    maximizing the silhouette score over the candidate merge heights; an
    explicit ``n_clusters`` instead applies the first ``n - n_clusters``
    merges.  Labels are integers ordered by each cluster's first member.
    """
    points = np.asarray(embeddings, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 1:
        raise ValidationError("embeddings must be a non-empty 2-D array")
    if not np.all(np.isfinite(points)):
        raise ValidationError("embeddings must be finite")
    if cut_distance is not None and n_clusters is not None:
        raise ValidationError("pass cut_distance or n_clusters, not both")
    n = points.shape[0]
    if n_clusters is not None:
        n_clusters = check_positive_int(n_clusters, "n_clusters")
        if n_clusters > n:
            raise ValidationError(f"n_clusters={n_clusters} exceeds {n} points")
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    merges = upgma_linkage(points)
    if n_clusters is not None:
        return _labels_from_merges(n, list(enumerate(merges))[:n - n_clusters])
    if cut_distance is None:
        cut_distance = _auto_cut(points, merges)
    elif not (np.isscalar(cut_distance) and np.isfinite(cut_distance)
              and cut_distance >= 0):
        raise ValidationError("cut_distance must be a finite non-negative number")
    return _labels_at_cut(n, merges, float(cut_distance))


# ---------------------------------------------------------------------------
# Separation ratio
# ---------------------------------------------------------------------------

def separation_ratio(embeddings: np.ndarray, labels: Sequence) -> float:
    """Mean intra-design squared spread over mean inter-centroid squared gap.

    Lower is better: embeddings of the same design sit close together while
    different designs stay apart.
    """
    points = np.asarray(embeddings, dtype=np.float64)
    if points.ndim != 2:
        raise ValidationError("embeddings must be a 2-D array")
    labels = list(labels)
    if len(labels) != points.shape[0]:
        raise ValidationError("labels must match the number of embeddings")
    groups = {}
    for idx, label in enumerate(labels):
        groups.setdefault(label, []).append(idx)
    if len(groups) < 2:
        raise ValidationError("separation ratio needs at least two designs")

    intra = []
    centroids = []
    for label, idx in groups.items():
        if len(idx) < 2:
            raise ValidationError(f"design {label!r} needs at least two embeddings")
        members = points[idx]
        diffs = members[:, None, :] - members[None, :, :]
        sq = (diffs ** 2).sum(axis=2)
        upper = sq[np.triu_indices(len(idx), k=1)]
        intra.append(upper.mean())
        centroids.append(members.mean(axis=0))

    centroids = np.stack(centroids)
    gaps = ((centroids[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    inter = gaps[np.triu_indices(len(centroids), k=1)].mean()
    if inter == 0.0:
        raise ValidationError("design centroids coincide; ratio undefined")
    return float(np.mean(intra) / inter)


# ---------------------------------------------------------------------------
# Estimator wrappers
# ---------------------------------------------------------------------------

class StyleEncoder(BaseEstimator):
    """Estimator facade over the design encoder.

    ``fit`` trains on a patch corpus; ``transform`` embeds every patch using
    all same-production patches in the argument corpus as context, which makes
    the output deterministic and order-independent.
    """

    def __init__(self, base_width=32, style_width=16, depth=4, embed_dim=EMBED_DIM,
                 steps=2000, batch=8, lr=1e-4, context_size=4, seed=0):
        self.base_width = base_width
        self.style_width = style_width
        self.depth = depth
        self.embed_dim = embed_dim
        self.steps = steps
        self.batch = batch
        self.lr = lr
        self.context_size = context_size
        self.seed = seed

    def _config(self) -> EncoderConfig:
        return EncoderConfig(base_width=self.base_width, style_width=self.style_width,
                             depth=self.depth, embed_dim=self.embed_dim,
                             steps=self.steps, batch=self.batch, lr=self.lr,
                             context_size=self.context_size, seed=self.seed)

    def fit(self, X, y=None):
        corpus = X if isinstance(X, dg.Corpus) else dg.Corpus(list(X))
        result = train_style_encoder(corpus, self._config())
        self.result_ = result
        self.net_ = _resolve_net(result)
        self.log_ = result.log
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "net_"):
            raise ValidationError("StyleEncoder must be fit before transform")
        return embed_corpus(self.net_, X)

    def fit_transform(self, X, y=None):
        return self.fit(X, y).transform(X)


class UpgmaClusterer(BaseEstimator, ClusterMixin):
    """Average-linkage clusterer with an optional fixed cut height."""

    def __init__(self, cut_distance=None):
        self.cut_distance = cut_distance

    def fit(self, X, y=None):
        points = np.asarray(X, dtype=np.float64)
        merges = upgma_linkage(points) if points.shape[0] > 1 else []
        cut = self.cut_distance
        if cut is None:
            cut = _auto_cut(points, merges) if merges else 0.0
        self.merges_ = merges
        self.cut_distance_ = float(cut)
        self.labels_ = _labels_at_cut(points.shape[0], merges, self.cut_distance_) \
            if points.shape[0] > 1 else np.zeros(points.shape[0], dtype=np.int64)
        self.n_clusters_ = len(set(self.labels_.tolist())) if len(self.labels_) else 0
        return self
