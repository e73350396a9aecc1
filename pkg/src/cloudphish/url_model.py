"""Character-level LSTM phishing-URL scorer.

Architecture: embedding -> dropout -> LSTM (last real hidden state) ->
dropout -> dense(1) -> sigmoid. Padding positions are masked so the state
after the final character is the one that reaches the dense layer.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .autodiff import NonFiniteError, Optimizer, OptimizerState, Tensor, no_grad, ops
from .corpus.datasets import LEGITIMATE, PHISHING, SplitSpec, UrlSample, split

log = logging.getLogger(__name__)

# (lstm_units, epochs)
VARIANTS = {
    "original": (16, 3),
    "new-1": (64, 3),
    "new-2": (16, 6),
    "new-3": (64, 6),
}

PAD = "<pad>"
OOV = "<oov>"
BIN_EDGES = (0.0, 0.25, 0.5, 0.75, 1.0)


class DivergenceError(NonFiniteError):
    def __init__(self, epoch: int, detail: str = ""):
        super().__init__(f"training diverged in epoch {epoch}" + (f": {detail}" if detail else ""))
        self.epoch = epoch


# ---------------------------------------------------------------------------
# vocabulary


@dataclass(frozen=True)
class CharVocabulary:
    chars: tuple[str, ...]
    pad_index: int = 0
    oov_index: int = 1

    @property
    def size(self) -> int:
        return len(self.chars) + 2

    def index(self, ch: str) -> int:
        return self._lookup.get(ch, self.oov_index)

    @property
    def _lookup(self) -> dict[str, int]:
        cache = self.__dict__.get("_cache")
        if cache is None:
            cache = {c: i + 2 for i, c in enumerate(self.chars)}
            object.__setattr__(self, "_cache", cache)
        return cache

    def as_dict(self) -> dict[str, int]:
        d = {PAD: self.pad_index, OOV: self.oov_index}
        d.update(self._lookup)
        return d


def build_vocabulary(corpus: Iterable[UrlSample | str]) -> CharVocabulary:
    chars: set[str] = set()
    n = 0
    for item in corpus:
        chars.update(item.url if isinstance(item, UrlSample) else item)
        n += 1
    if n == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    return CharVocabulary(tuple(sorted(chars)))


def encode_url(url: str, vocab: CharVocabulary, max_len: int) -> np.ndarray:
    """Head-truncate / right-pad to ``max_len`` character indices."""
    if max_len <= 0:
        raise ValueError("max_len must be positive")
    out = np.full(max_len, vocab.pad_index, dtype=np.int64)
    for i, ch in enumerate(url[:max_len]):
        out[i] = vocab.index(ch)
    return out


def encode_batch(urls: Sequence[str], vocab: CharVocabulary, max_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Index matrix trimmed to the longest URL in the batch, plus lengths."""
    lengths = np.array([min(len(u), max_len) for u in urls], dtype=np.int64)
    width = max(1, int(lengths.max()) if len(urls) else 1)
    mat = np.full((len(urls), width), vocab.pad_index, dtype=np.int64)
    for r, u in enumerate(urls):
        for i, ch in enumerate(u[:width]):
            mat[r, i] = vocab.index(ch)
    return mat, lengths


# ---------------------------------------------------------------------------
# model


@dataclass
class UrlModelConfig:
    variant: str = "new-3"
    embed_dim: int = 32
    lstm_units: int = 64
    dropout_rate: float = 0.5
    epochs: int = 6
    max_len: int = 256
    validation_split: float = 0.25
    batch_size: int = 32
    learning_rate: float = 0.001
    optimizer: str = "adam"

    def __post_init__(self):
        if self.lstm_units <= 0 or self.embed_dim <= 0 or self.max_len <= 0:
            raise ValueError("embed_dim, lstm_units and max_len must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    @classmethod
    def for_variant(cls, name: str, **overrides) -> "UrlModelConfig":
        key = name.lower()
        if key not in VARIANTS:
            raise ValueError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
        units, epochs = VARIANTS[key]
        kw = dict(variant=key, lstm_units=units, epochs=epochs)
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self) -> dict:
        return asdict(self)


def _f32(a: np.ndarray) -> np.ndarray:
    return a.astype(np.float32).astype(np.float64)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


class UrlModel:
    kind = "url"

    def __init__(self, vocab: CharVocabulary, config: UrlModelConfig, rng=None, zero: bool = False):
        self.vocab = vocab
        self.config = config
        e, h = config.embed_dim, config.lstm_units
        shapes = {
            "embedding": (vocab.size, e),
            "lstm.w": (e + h, 4 * h),
            "lstm.b": (4 * h,),
            "dense.w": (h, 1),
            "dense.b": (1,),
        }
        if zero:
            arrays = {k: np.zeros(s) for k, s in shapes.items()}
        else:
            gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
            b = np.zeros(4 * h)
            b[h:2 * h] = 1.0  # forget-gate bias
            arrays = {
                "embedding": gen.uniform(-0.05, 0.05, size=shapes["embedding"]),
                "lstm.w": _glorot(gen, e + h, 4 * h, shapes["lstm.w"]),
                "lstm.b": b,
                "dense.w": _glorot(gen, h, 1, shapes["dense.w"]),
                "dense.b": np.zeros(1),
            }
        self.params = {k: Tensor(_f32(v), requires_grad=True, name=k) for k, v in arrays.items()}

    @classmethod
    def param_shapes(cls, config: dict, extras: dict) -> dict:
        e, h = config["embed_dim"], config["lstm_units"]
        v = len(extras["vocab"]) + 2
        return {"embedding": (v, e), "lstm.w": (e + h, 4 * h), "lstm.b": (4 * h,), "dense.w": (h, 1), "dense.b": (1,)}

    # archive protocol -------------------------------------------------------
    def archive_state(self) -> tuple[dict, dict, dict]:
        return self.config.to_dict(), {"vocab": list(self.vocab.chars)}, {k: t.data for k, t in self.params.items()}

    @classmethod
    def from_archive(cls, config: dict, extras: dict, arrays: dict) -> "UrlModel":
        m = cls(CharVocabulary(tuple(extras["vocab"])), UrlModelConfig(**config), zero=True)
        for k, arr in arrays.items():
            m.params[k].data = np.array(arr, dtype=np.float64)
        return m

    def freeze(self) -> None:
        """Round parameters to float32 so a saved archive reloads bit-identically."""
        for t in self.params.values():
            t.data = _f32(t.data)
            t.grad = None

    # forward ----------------------------------------------------------------
    def logits(self, indices: np.ndarray, lengths: np.ndarray, training: bool = False, rng=None) -> Tensor:
        p = self.params
        cfg = self.config
        n, width = indices.shape
        emb = ops.embedding_lookup(p["embedding"], indices)
        emb = ops.dropout(emb, cfg.dropout_rate, training, rng)
        h = Tensor(np.zeros((n, cfg.lstm_units)))
        c = Tensor(np.zeros((n, cfg.lstm_units)))
        for t in range(width):
            mask = (lengths > t).astype(np.float64)
            state = ops.lstm_cell(ops.take(emb, t, axis=1), h, c, p["lstm.w"], p["lstm.b"], mask=mask)
            h, c = ops.split_state(state)
        h = ops.dropout(h, cfg.dropout_rate, training, rng)
        return ops.add(ops.matmul(h, p["dense.w"]), p["dense.b"])

    def score_batch(self, urls: Sequence[str], batch_size: int = 256) -> np.ndarray:
        out = np.empty(len(urls))
        with no_grad():
            for s in range(0, len(urls), batch_size):
                chunk = list(urls[s:s + batch_size])
                idx, lens = encode_batch(chunk, self.vocab, self.config.max_len)
                z = self.logits(idx, lens, training=False).data[:, 0]
                out[s:s + len(chunk)] = ops._sigmoid(z)
        return out


def score_url(model: UrlModel, url: str) -> float:
    return float(model.score_batch([url])[0])


def score_urls(model: UrlModel, urls: Sequence[str]) -> np.ndarray:
    return model.score_batch(list(urls))


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochRecord:
    epoch: int
    split: str
    loss: float
    accuracy: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: UrlModel
    history: list[EpochRecord] = field(default_factory=list)

    def last(self, split_name: str) -> EpochRecord:
        return [r for r in self.history if r.split == split_name][-1]


def _targets(samples: Sequence[UrlSample]) -> np.ndarray:
    return np.array([1.0 if s.label == PHISHING else 0.0 for s in samples])


def evaluate(model: UrlModel, samples: Sequence[UrlSample]) -> tuple[float, float]:
    """(mean BCE, accuracy at 0.5) in inference mode."""
    scores = model.score_batch([s.url for s in samples])
    y = _targets(samples)
    p = np.clip(scores, 1e-12, 1 - 1e-12)
    loss = float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))
    acc = float(np.mean((scores > 0.5) == (y == 1.0)))
    return loss, acc


def train_url_model(
    dataset: Sequence[UrlSample],
    config: UrlModelConfig,
    seed: int,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Train on ``1 - validation_split`` of ``dataset`` (stratified split by ``seed``).

    The vocabulary comes from the training portion only.
    """
    samples = list(dataset)
    labels = {s.label for s in samples}
    if labels != {PHISHING, LEGITIMATE}:
        raise ValueError(f"dataset must contain both classes, found {sorted(labels)}")
    train, val = split(samples, SplitSpec(config.validation_split, seed))
    rng = np.random.default_rng(seed)
    model = UrlModel(build_vocabulary(train), config, rng)
    opt = Optimizer(model.params, OptimizerState(config.learning_rate, kind=config.optimizer))
    y_train = _targets(train)
    history: list[EpochRecord] = []

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        tot_loss = 0.0
        correct = 0
        for s in range(0, len(order), config.batch_size):
            bidx = order[s:s + config.batch_size]
            urls = [train[i].url for i in bidx]
            idx, lens = encode_batch(urls, model.vocab, config.max_len)
            z = model.logits(idx, lens, training=True, rng=rng)
            loss = ops.bce_with_logits(z, y_train[bidx])
            lv = loss.item()
            if not np.isfinite(lv):
                raise DivergenceError(epoch, "non-finite loss")
            loss.backward()
            try:
                opt.step()
            except NonFiniteError as exc:
                raise DivergenceError(epoch, str(exc)) from exc
            tot_loss += lv * len(bidx)
            correct += int(np.sum((z.data[:, 0] > 0) == (y_train[bidx] == 1.0)))
        recs = [EpochRecord(epoch, "train", tot_loss / len(train), correct / len(train))]
        if val:
            vl, va = evaluate(model, val)
            recs.append(EpochRecord(epoch, "validation", vl, va))
        for r in recs:
            log.info("epoch %d %s loss=%.4f acc=%.4f", r.epoch, r.split, r.loss, r.accuracy)
            history.append(r)
            if on_epoch:
                on_epoch(r)
    model.freeze()
    return TrainResult(model, history)


def zero_model(vocab: CharVocabulary, config: UrlModelConfig | None = None) -> UrlModel:
    """All-zero parameters; every URL scores exactly 0.5."""
    return UrlModel(vocab, config or UrlModelConfig(), zero=True)


# ---------------------------------------------------------------------------
# score reporting


@dataclass(frozen=True)
class ScoreHistogram:
    counts: tuple[int, int, int, int]

    @property
    def total(self) -> int:
        return sum(self.counts)

    def fractions(self) -> tuple[float, ...]:
        n = self.total
        return tuple(c / n if n else 0.0 for c in self.counts)


def bin_scores(scores: Iterable[float]) -> ScoreHistogram:
    """Four-bin histogram over [0,.25), [.25,.5), [.5,.75), [.75,1]."""
    s = np.asarray(list(scores), dtype=np.float64)
    if s.size and (np.any(~np.isfinite(s)) or s.min() < 0.0 or s.max() > 1.0):
        raise ValueError("scores must lie in [0, 1]")
    # bin = number of interior edges <= score, so 1.0 lands in the top bin
    b = np.searchsorted(np.array(BIN_EDGES[1:4]), s, side="right")
    counts = np.bincount(b, minlength=4)
    return ScoreHistogram(tuple(int(c) for c in counts))


def classify_url(score: float, threshold: float = 0.5) -> str:
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    return PHISHING if score > threshold else LEGITIMATE
