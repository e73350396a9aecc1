"""Triplet-embedding page matcher.

A small convolutional backbone, a ``head_filters`` x 5x5 ReLU conv head and
global max pooling map a screenshot to an embedding. Known brand pages
form a gallery; a query is matched to its nearest gallery pages by L2
distance and called phishing when the top match is closer than a
threshold.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .autodiff import NonFiniteError, Optimizer, OptimizerState, ShapeError, Tensor, no_grad, ops
from .corpus.datasets import LEGITIMATE, PHISHING

log = logging.getLogger(__name__)

DESK_BACKBONE = (("conv", 8, 3), ("pool", 2), ("conv", 16, 3), ("pool", 2))

# Layer list for a VGG16-style feature extractor with its dense top removed.
# Selectable through the config; desk runs use DESK_BACKBONE.
VGG16_BACKBONE = (
    ("conv", 64, 3, "same"), ("conv", 64, 3, "same"), ("pool", 2),
    ("conv", 128, 3, "same"), ("conv", 128, 3, "same"), ("pool", 2),
    ("conv", 256, 3, "same"), ("conv", 256, 3, "same"), ("conv", 256, 3, "same"), ("pool", 2),
    ("conv", 512, 3, "same"), ("conv", 512, 3, "same"), ("conv", 512, 3, "same"), ("pool", 2),
    ("conv", 512, 3, "same"), ("conv", 512, 3, "same"), ("conv", 512, 3, "same"), ("pool", 2),
)

DEFAULT_DISTANCE_THRESHOLD = 8.0


class DegenerateGalleryError(ValueError):
    pass


class UnknownBrandError(KeyError):
    pass


@dataclass
class SimilarityConfig:
    input_size: int = 64
    backbone: list = field(default_factory=lambda: [list(l) for l in DESK_BACKBONE])
    head_filters: int = 32
    head_kernel: int = 5
    margin: float = 2.2
    distance_threshold: float = DEFAULT_DISTANCE_THRESHOLD
    calibrated_threshold: float | None = None
    learning_rate: float = 0.001
    optimizer: str = "adam"
    batch_size: int = 16
    steps_per_epoch: int = 10
    strategy: str = "uniform"

    def __post_init__(self):
        if not self.margin > 0:
            raise ValueError("margin must be positive")
        if self.head_filters <= 0 or self.head_kernel <= 0:
            raise ValueError("head_filters and head_kernel must be positive")
        self.backbone = [list(l) for l in self.backbone]

    @property
    def threshold(self) -> float:
        """Threshold in use: the recalibrated one when present."""
        return self.calibrated_threshold if self.calibrated_threshold is not None else self.distance_threshold

    def to_dict(self) -> dict:
        return asdict(self)


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _layer_param_shapes(config: SimilarityConfig) -> dict:
    shapes = {}
    cin = 3
    k = 0
    for layer in config.backbone:
        if layer[0] == "conv":
            k += 1
            filters, ksize = int(layer[1]), int(layer[2])
            shapes[f"conv{k}.w"] = (ksize, ksize, cin, filters)
            shapes[f"conv{k}.b"] = (filters,)
            cin = filters
        elif layer[0] != "pool":
            raise ValueError(f"unknown backbone layer {layer!r}")
    shapes["head.w"] = (config.head_kernel, config.head_kernel, cin, config.head_filters)
    shapes["head.b"] = (config.head_filters,)
    return shapes


@dataclass(frozen=True)
class MatchResult:
    page_id: str
    brand: str
    distance: float
    rank: int


@dataclass(frozen=True)
class BrandGallery:
    """Embeddings of known brand pages; row i belongs to ``page_ids[i]``."""

    page_ids: tuple[str, ...]
    brands: tuple[str, ...]
    embeddings: np.ndarray

    def __post_init__(self):
        emb = np.array(self.embeddings, dtype=np.float64)
        if emb.ndim != 2 or emb.shape[0] != len(self.page_ids) or len(self.brands) != len(self.page_ids):
            raise ValueError("gallery ids, brands and embedding rows must align")
        if len(set(self.page_ids)) != len(self.page_ids):
            raise ValueError("gallery page ids must be unique")
        emb.setflags(write=False)
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "page_ids", tuple(self.page_ids))
        object.__setattr__(self, "brands", tuple(self.brands))

    def __len__(self) -> int:
        return len(self.page_ids)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def brand_set(self) -> list[str]:
        return sorted(set(self.brands))

    def by_brand(self) -> dict[str, list[tuple[str, np.ndarray]]]:
        out: dict[str, list] = {}
        for pid, b, e in zip(self.page_ids, self.brands, self.embeddings):
            out.setdefault(b, []).append((pid, e))
        return out


class SimilarityModel:
    kind = "similarity"

    def __init__(self, config: SimilarityConfig | None = None, rng=None, zero: bool = False):
        self.config = config or SimilarityConfig()
        self.gallery: BrandGallery | None = None
        gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.params = {}
        for name, shape in _layer_param_shapes(self.config).items():
            if zero or name.endswith(".b"):
                arr = np.zeros(shape)
            else:
                fan_in = shape[0] * shape[1] * shape[2]
                arr = gen.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)  # He-normal
            self.params[name] = Tensor(_f32(arr), requires_grad=True, name=name)

    @classmethod
    def param_shapes(cls, config: dict, extras: dict) -> dict:
        shapes = _layer_param_shapes(SimilarityConfig(**config))
        if "gallery" in extras:
            g = extras["gallery"]
            shapes["gallery.embeddings"] = (len(g["page_ids"]), config["head_filters"])
        return shapes

    def archive_state(self):
        arrays = {k: t.data for k, t in self.params.items()}
        extras = {}
        if self.gallery is not None:
            extras["gallery"] = {"page_ids": list(self.gallery.page_ids), "brands": list(self.gallery.brands)}
            arrays["gallery.embeddings"] = self.gallery.embeddings
        return self.config.to_dict(), extras, arrays

    @classmethod
    def from_archive(cls, config: dict, extras: dict, arrays: dict) -> "SimilarityModel":
        m = cls(SimilarityConfig(**config), zero=True)
        for k in m.params:
            m.params[k].data = np.array(arrays[k], dtype=np.float64)
        if "gallery" in extras:
            g = extras["gallery"]
            m.gallery = BrandGallery(g["page_ids"], g["brands"], arrays["gallery.embeddings"])
        return m

    def freeze(self) -> None:
        for t in self.params.values():
            t.data = _f32(t.data)
            t.grad = None

    def embed(self, images) -> Tensor:
        """(N, S, S, 3) images -> (N, head_filters) embeddings, on the tape."""
        x = images if isinstance(images, Tensor) else Tensor(images)
        s = self.config.input_size
        if x.data.ndim != 4 or x.shape[1:] != (s, s, 3):
            raise ShapeError(f"expected images of shape (N, {s}, {s}, 3), got {x.shape}")
        k = 0
        for layer in self.config.backbone:
            if layer[0] == "conv":
                k += 1
                pad = layer[3] if len(layer) > 3 else "valid"
                x = ops.relu(ops.conv2d(x, self.params[f"conv{k}.w"], self.params[f"conv{k}.b"], padding=pad))
            else:
                x = ops.max_pool2d(x, int(layer[1]))
        x = ops.relu(ops.conv2d(x, self.params["head.w"], self.params["head.b"]))
        return ops.global_max_pool(x)

    def embed_many(self, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
        out = []
        with no_grad():
            for s in range(0, len(images), batch_size):
                out.append(self.embed(np.asarray(images[s:s + batch_size])).data)
        if not out:
            return np.zeros((0, self.config.head_filters))
        # float32-rounded like stored gallery rows, so a page re-embedded
        # against its own gallery entry is at distance exactly 0
        return _f32(np.concatenate(out, axis=0))


def embed_page(model: SimilarityModel, image: np.ndarray) -> np.ndarray:
    return model.embed_many(np.asarray(image)[None])[0]


# ---------------------------------------------------------------------------
# loss and sampling


def triplet_loss(anchor, positive, negative, margin: float) -> Tensor:
    """mean over the batch of max(0, |a-p|^2 - |a-n|^2 + margin).

    Accepts single vectors or (batch, dim) Tensors/arrays.
    """
    if not margin > 0:
        raise ValueError("margin must be positive")
    a, p, n = (t if isinstance(t, Tensor) else Tensor(t) for t in (anchor, positive, negative))
    if not (a.shape == p.shape == n.shape):
        raise ShapeError(f"triplet_loss: shapes differ {a.shape}, {p.shape}, {n.shape}")
    if a.data.ndim == 1:
        a, p, n = (ops.reshape(t, (1, -1)) for t in (a, p, n))
    dap = ops.sum(ops.square(ops.sub(a, p)), axis=1)
    dan = ops.sum(ops.square(ops.sub(a, n)), axis=1)
    hinge = ops.relu(ops.add(ops.sub(dap, dan), Tensor(margin)))
    return ops.mean(hinge)


def _groups(pages) -> dict[str, list[str]]:
    """brand -> sorted page ids, from a BrandGallery or a {brand: ids} mapping."""
    if isinstance(pages, BrandGallery):
        out: dict[str, list[str]] = {}
        for pid, b in zip(pages.page_ids, pages.brands):
            out.setdefault(b, []).append(pid)
    else:
        out = {b: list(ids) for b, ids in pages.items()}
    return {b: sorted(ids) for b, ids in sorted(out.items())}


def sample_triplets(
    gallery,
    batch_size: int,
    strategy: str = "uniform",
    seed=0,
    embeddings: Mapping[str, np.ndarray] | None = None,
    pool_size: int = 16,
) -> list[tuple[str, str, str]]:
    """Draw (anchor, positive, negative) page-id triplets.

    ``uniform``: anchor uniform over pages whose brand has >= 2 pages,
    positive uniform over the rest of that brand, negative uniform over
    other brands. ``hard-negative``: like uniform, but the negative is the
    page closest to the anchor among ``pool_size`` random other-brand
    candidates, using ``embeddings``.
    """
    groups = _groups(gallery)
    if len(groups) < 2:
        raise DegenerateGalleryError("triplet sampling needs at least 2 brands")
    eligible = [(b, pid) for b, ids in groups.items() if len(ids) >= 2 for pid in ids]
    if not eligible:
        raise DegenerateGalleryError("no brand has 2 or more pages to form an anchor/positive pair")
    if strategy not in ("uniform", "hard-negative"):
        raise ValueError(f"unknown strategy {strategy!r}")
    if strategy == "hard-negative" and embeddings is None:
        raise ValueError("hard-negative sampling needs current embeddings")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    others = {b: [pid for ob, ids in groups.items() if ob != b for pid in ids] for b in groups}
    out = []
    for _ in range(batch_size):
        b, a = eligible[int(rng.integers(len(eligible)))]
        pos_choices = [pid for pid in groups[b] if pid != a]
        p = pos_choices[int(rng.integers(len(pos_choices)))]
        cands = others[b]
        if strategy == "uniform":
            n = cands[int(rng.integers(len(cands)))]
        else:
            pool = [cands[int(i)] for i in rng.integers(0, len(cands), size=pool_size)]
            ea = embeddings[a]
            dists = [float(np.sum((embeddings[c] - ea) ** 2)) for c in pool]
            n = pool[int(np.argmin(dists))]
        out.append((a, p, n))
    return out


# ---------------------------------------------------------------------------
# training


@dataclass
class SimilarityTrainLog:
    epoch_losses: list[float] = field(default_factory=list)

    def smoothed(self, window: int = 5) -> np.ndarray:
        x = np.asarray(self.epoch_losses)
        if len(x) < window:
            return x
        return np.convolve(x, np.ones(window) / window, mode="valid")


def train_similarity(
    model: SimilarityModel,
    images: np.ndarray,
    page_ids: Sequence[str],
    brands: Sequence[str],
    epochs: int,
    seed: int,
    config: SimilarityConfig | None = None,
) -> SimilarityTrainLog:
    """Triplet training in place; ``model`` is frozen (float32-rounded) at the end."""
    cfg = config or model.config
    if not cfg.margin > 0:
        raise ValueError("margin must be positive")
    rng = np.random.default_rng(seed)
    index = {pid: i for i, pid in enumerate(page_ids)}
    groups: dict[str, list[str]] = {}
    for pid, b in zip(page_ids, brands):
        groups.setdefault(b, []).append(pid)
    opt = Optimizer(model.params, OptimizerState(cfg.learning_rate, kind=cfg.optimizer))
    logbook = SimilarityTrainLog()
    imgs = np.asarray(images, dtype=np.float64)
    for epoch in range(1, epochs + 1):
        total = 0.0
        for _ in range(cfg.steps_per_epoch):
            emb_map = None
            if cfg.strategy == "hard-negative":
                emb = model.embed_many(imgs)
                emb_map = {pid: emb[i] for pid, i in index.items()}
            trip = sample_triplets(groups, cfg.batch_size, cfg.strategy, rng, emb_map)
            batch = np.stack([imgs[index[pid]] for t in trip for pid in t])
            e = model.embed(batch)
            e3 = ops.reshape(e, (len(trip), 3, e.shape[1]))
            loss = triplet_loss(ops.take(e3, 0, 1), ops.take(e3, 1, 1), ops.take(e3, 2, 1), cfg.margin)
            lv = loss.item()
            if not np.isfinite(lv):
                raise NonFiniteError(f"similarity training diverged in epoch {epoch}")
            loss.backward()
            opt.step()
            total += lv
        logbook.epoch_losses.append(total / max(cfg.steps_per_epoch, 1))
        log.info("similarity epoch %d loss=%.4f", epoch, logbook.epoch_losses[-1])
    model.freeze()
    return logbook


# ---------------------------------------------------------------------------
# retrieval


def build_gallery(model: SimilarityModel, images, page_ids, brands) -> BrandGallery:
    """Embed known pages; embeddings are float32-rounded to match archived values."""
    return BrandGallery(tuple(page_ids), tuple(brands), _f32(model.embed_many(np.asarray(images))))


def l2_distances(embedding: np.ndarray, gallery: BrandGallery) -> np.ndarray:
    diff = gallery.embeddings - np.asarray(embedding, dtype=np.float64)[None, :]
    return np.sqrt(np.sum(diff * diff, axis=1))


def _ordering(dist: np.ndarray, gallery: BrandGallery) -> np.ndarray:
    by_id = np.argsort(np.array(gallery.page_ids), kind="stable")
    return by_id[np.argsort(dist[by_id], kind="stable")]


def rank_gallery(embedding: np.ndarray, gallery: BrandGallery, k: int) -> list[MatchResult]:
    """k nearest gallery pages by L2 distance; ties broken by page id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(gallery) == 0:
        raise DegenerateGalleryError("gallery is empty")
    emb = np.asarray(embedding, dtype=np.float64)
    if emb.shape != (gallery.dim,):
        raise ShapeError(f"query embedding shape {emb.shape} != ({gallery.dim},)")
    dist = l2_distances(emb, gallery)
    order = _ordering(dist, gallery)[:k]
    return [MatchResult(gallery.page_ids[i], gallery.brands[i], float(dist[i]), r + 1) for r, i in enumerate(order)]


@dataclass(frozen=True)
class SimilarityDecision:
    label: str
    brand: str
    distance: float


def classify_similarity(matches: Sequence[MatchResult], threshold: float = DEFAULT_DISTANCE_THRESHOLD) -> SimilarityDecision:
    if not matches:
        raise ValueError("no matches to classify")
    top = matches[0]
    label = PHISHING if top.distance < threshold else LEGITIMATE
    return SimilarityDecision(label, top.brand, top.distance)


def brand_distance(embedding: np.ndarray, gallery: BrandGallery, brand: str) -> tuple[float, int]:
    """(smallest distance to any page of ``brand``, global rank of that page)."""
    mask = np.array([b == brand for b in gallery.brands])
    if not mask.any():
        raise UnknownBrandError(brand)
    dist = l2_distances(embedding, gallery)
    order = _ordering(dist, gallery)
    for r, i in enumerate(order):
        if mask[i]:
            return float(dist[i]), r + 1
    raise AssertionError("unreachable")


def top_k_accuracy(model: SimilarityModel, gallery: BrandGallery, images, brands, ks=(1, 5, 10)) -> dict[int, float]:
    """Fraction of queries whose true brand is among the brands of the top-k pages."""
    emb = model.embed_many(np.asarray(images))
    hits = {k: 0 for k in ks}
    for e, b in zip(emb, brands):
        ranked = rank_gallery(e, gallery, max(ks))
        for k in ks:
            if any(m.brand == b for m in ranked[:k]):
                hits[k] += 1
    n = max(len(brands), 1)
    return {k: hits[k] / n for k in ks}


def calibrate_threshold(model: SimilarityModel, gallery: BrandGallery, images, brands, quantile: float = 0.95) -> float:
    """Quantile of each held-out page's distance to its own brand's nearest gallery page."""
    emb = model.embed_many(np.asarray(images))
    d = [brand_distance(e, gallery, b)[0] for e, b in zip(emb, brands)]
    return float(np.quantile(d, quantile))
