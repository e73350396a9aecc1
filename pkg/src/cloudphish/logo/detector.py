"""Single-shot logo detector: small conv backbone plus one prediction head.

The head emits S x S x A x (5 + C) numbers per image, laid out per anchor
as tx, ty, tw, th, objectness logit, C class logits.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..autodiff import NonFiniteError, Optimizer, OptimizerState, ShapeError, Tensor, no_grad, ops
from ..corpus.datasets import GroundTruthAnnotation
from .decode import DEFAULT_ANCHORS, LOGO_THRESHOLD, NMS_IOU, Detection, GridSpec, decode_predictions, nms
from .evaluation import GroundTruth
from .geometry import BoundingBox, iou

log = logging.getLogger(__name__)

# 64 -> 32 -> 16 -> 8 -> 4 cells
DESK_DETECTOR_BACKBONE = (
    ("conv", 8, 3, "same"), ("pool", 2),
    ("conv", 16, 3, "same"), ("pool", 2),
    ("conv", 32, 3, "same"), ("pool", 2),
    ("conv", 32, 3, "same"), ("pool", 2),
)

PHASES = ("frozen-backbone", "full")

LOC_WEIGHT = 5.0
OBJ_WEIGHT = 1.0
CLS_WEIGHT = 1.0


@dataclass
class LogoConfig:
    brands: list = field(default_factory=lambda: ["0", "1", "2"])
    input_size: int = 64
    backbone: list = field(default_factory=lambda: [list(l) for l in DESK_DETECTOR_BACKBONE])
    head_kernel: int = 1
    anchors: list = field(default_factory=lambda: [list(a) for a in DEFAULT_ANCHORS])
    conf_threshold: float = LOGO_THRESHOLD
    nms_iou: float = NMS_IOU
    learning_rate: float = 0.003
    optimizer: str = "adam"
    batch_size: int = 16

    def __post_init__(self):
        self.brands = [str(b) for b in self.brands]
        if not self.brands or len(set(self.brands)) != len(self.brands):
            raise ValueError("brand list must be non-empty and unique")
        self.backbone = [list(l) for l in self.backbone]
        self.anchors = [[float(v) for v in a] for a in self.anchors]
        if self.input_size % self.stride:
            raise ValueError(f"input size {self.input_size} is not a multiple of the backbone stride {self.stride}")

    @property
    def stride(self) -> int:
        s = 1
        for layer in self.backbone:
            if layer[0] == "pool":
                s *= int(layer[1])
        return s

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.input_size // self.stride, len(self.brands), tuple(tuple(a) for a in self.anchors))

    def to_dict(self) -> dict:
        return asdict(self)


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _param_shapes(config: LogoConfig) -> dict:
    shapes = {}
    cin, k = 3, 0
    for layer in config.backbone:
        if layer[0] == "conv":
            k += 1
            shapes[f"conv{k}.w"] = (int(layer[2]), int(layer[2]), cin, int(layer[1]))
            shapes[f"conv{k}.b"] = (int(layer[1]),)
            cin = int(layer[1])
        elif layer[0] != "pool":
            raise ValueError(f"unknown backbone layer {layer!r}")
    g = config.grid
    shapes["head.w"] = (config.head_kernel, config.head_kernel, cin, g.A * (5 + g.C))
    shapes["head.b"] = (g.A * (5 + g.C),)
    return shapes


def _init(shape, gen) -> np.ndarray:
    fan_in = int(np.prod(shape[:-1]))
    return gen.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class LogoDetector:
    kind = "logo"

    def __init__(self, config: LogoConfig | None = None, rng=None, zero: bool = False):
        self.config = config or LogoConfig()
        gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.params: dict[str, Tensor] = {}
        for name, shape in _param_shapes(self.config).items():
            if zero or name.endswith(".b"):
                arr = np.zeros(shape)
            elif name == "head.w":
                arr = _init(shape, gen) * 0.1  # start near a uniform, low-confidence output
            else:
                arr = _init(shape, gen)
            self.params[name] = Tensor(_f32(arr), requires_grad=True, name=name)

    @property
    def grid(self) -> GridSpec:
        return self.config.grid

    @property
    def brands(self) -> list[str]:
        return list(self.config.brands)

    def backbone_names(self) -> list[str]:
        return [n for n in self.params if not n.startswith("head.")]

    def head_names(self) -> list[str]:
        return [n for n in self.params if n.startswith("head.")]

    @classmethod
    def param_shapes(cls, config: dict, extras: dict) -> dict:
        return _param_shapes(LogoConfig(**config))

    def archive_state(self):
        return self.config.to_dict(), {}, {k: t.data for k, t in self.params.items()}

    @classmethod
    def from_archive(cls, config: dict, extras: dict, arrays: dict) -> "LogoDetector":
        m = cls(LogoConfig(**config), zero=True)
        for k in m.params:
            m.params[k].data = np.array(arrays[k], dtype=np.float64)
        return m

    def freeze(self) -> None:
        for t in self.params.values():
            t.data = _f32(t.data)
            t.grad = None

    def raw(self, images) -> Tensor:
        """(N, H, W, 3) images -> (N, S, S, A, 5 + C) raw predictions, on the tape."""
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
        x = ops.conv2d(x, self.params["head.w"], self.params["head.b"], padding="same")
        g = self.grid
        return ops.reshape(x, (x.shape[0],) + g.raw_shape)

    def predict_raw(self, images, batch_size: int = 64) -> np.ndarray:
        images = np.asarray(images, dtype=np.float64)
        out = []
        with no_grad():
            for s in range(0, len(images), batch_size):
                out.append(self.raw(images[s:s + batch_size]).data)
        if not out:
            return np.zeros((0,) + self.grid.raw_shape)
        return np.concatenate(out, axis=0)

    def detect(
        self,
        images,
        conf_threshold: float | None = None,
        nms_iou: float | None = None,
        class_mask=None,
        image_ids: Sequence[str] | None = None,
    ) -> list[list[Detection]]:
        """Decoded, NMS-filtered detections per image."""
        th = self.config.conf_threshold if conf_threshold is None else conf_threshold
        ni = self.config.nms_iou if nms_iou is None else nms_iou
        raw = self.predict_raw(images)
        ids = list(image_ids) if image_ids is not None else [None] * len(raw)
        return [
            nms(decode_predictions(r, self.grid, th, self.brands, class_mask, pid), ni)
            for r, pid in zip(raw, ids)
        ]


def head_surgery(model: LogoDetector, new_brands: int | Sequence[str], rng=None, zero_init: bool = False) -> LogoDetector:
    """Copy of ``model`` whose head predicts more brands.

    Each anchor's box, objectness and existing class channels are copied
    unchanged; the added class channels are freshly initialized (or zero).
    Backbone parameters are copied bit for bit.
    """
    old = model.config
    c_old = len(old.brands)
    if isinstance(new_brands, int):
        if new_brands < c_old:
            raise ValueError(f"cannot shrink the head from {c_old} to {new_brands} brands")
        names = list(old.brands) + [f"new{i}" for i in range(c_old, new_brands)]
    else:
        names = [str(b) for b in new_brands]
        if len(names) < c_old or names[:c_old] != list(old.brands):
            raise ValueError("new brand list must start with the existing brands, in order")
    cfg = LogoConfig(**{**old.to_dict(), "brands": names})
    out = LogoDetector(cfg, zero=True)
    for n in model.backbone_names():
        out.params[n].data = model.params[n].data.copy()
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    A, c_new = model.grid.A, len(names)
    d_old, d_new = 5 + c_old, 5 + c_new
    w_old, b_old = model.params["head.w"].data, model.params["head.b"].data
    kh, kw, cin, _ = w_old.shape
    w = np.zeros((kh, kw, cin, A * d_new))
    b = np.zeros(A * d_new)
    if not zero_init and c_new > c_old:
        w[:] = _f32(_init(w.shape, gen) * 0.1)
    for a in range(A):
        w[..., a * d_new:a * d_new + d_old] = w_old[..., a * d_old:(a + 1) * d_old]
        b[a * d_new:a * d_new + d_old] = b_old[a * d_old:(a + 1) * d_old]
    out.params["head.w"].data = w
    out.params["head.b"].data = b
    return out


def freeze_schedule(model: LogoDetector, phase: str) -> list[str]:
    """Names of trainable parameters for a transfer-learning phase."""
    if phase == "frozen-backbone":
        return model.head_names()
    if phase == "full":
        return list(model.params)
    raise ValueError(f"unknown phase {phase!r}; expected one of {PHASES}")


# ---------------------------------------------------------------------------
# training


def _as_truth(annotation) -> GroundTruth:
    if isinstance(annotation, GroundTruth):
        return annotation
    if isinstance(annotation, GroundTruthAnnotation):
        return GroundTruth(annotation.brand, annotation.box)
    raise TypeError(f"unsupported annotation {annotation!r}")


def build_targets(truths: Sequence[Sequence[GroundTruth]], grid: GridSpec, brands: Sequence[str]):
    """Dense training targets, one responsible anchor per ground-truth box.

    The responsible anchor sits in the cell holding the box center and has
    the prior whose shape overlaps the box best. Returns (obj, loc, cls)
    where obj is (N, S, S, A) in {0, 1}, loc is (N, S, S, A, 4) holding the
    target cell offsets and log size ratios, and cls is (N, S, S, A, C)
    one-hot.
    """
    index = {b: i for i, b in enumerate(brands)}
    S, A, C = grid.S, grid.A, grid.C
    n = len(truths)
    obj = np.zeros((n, S, S, A))
    loc = np.zeros((n, S, S, A, 4))
    cls = np.zeros((n, S, S, A, C))
    for i, gts in enumerate(truths):
        for g in gts:
            if g.brand not in index:
                raise KeyError(f"brand {g.brand!r} is not one of the detector's brands")
            b = g.box
            col = min(int(b.cx * S), S - 1)
            row = min(int(b.cy * S), S - 1)
            shape_ious = [iou(BoundingBox(0.5, 0.5, b.w, b.h), BoundingBox(0.5, 0.5, pw, ph)) for pw, ph in grid.anchors]
            a = int(np.argmax(shape_ious))
            pw, ph = grid.anchors[a]
            obj[i, row, col, a] = 1.0
            loc[i, row, col, a] = (b.cx * S - col, b.cy * S - row, np.log(b.w / pw), np.log(b.h / ph))
            cls[i, row, col, a, :] = 0.0
            cls[i, row, col, a, index[g.brand]] = 1.0
    return obj, loc, cls


def detection_loss(raw: Tensor, obj, loc, cls) -> Tensor:
    """Composite single-shot loss, summed over anchors and averaged over images.

    Localization squared error on responsible anchors (weight 5), objectness
    cross-entropy on every anchor, class cross-entropy on responsible anchors.
    """
    n = raw.shape[0]
    d = raw.shape[-1]
    flat = ops.reshape(raw, (-1, d))
    m = flat.shape[0]
    pos = obj.reshape(m, 1)
    xy = ops.sigmoid(ops.take(flat, slice(0, 2), 1))
    wh = ops.take(flat, slice(2, 4), 1)
    tgt = loc.reshape(m, 4)
    mask2 = np.repeat(pos, 2, axis=1)
    err_xy = ops.mul(ops.square(ops.sub(xy, Tensor(tgt[:, :2]))), Tensor(mask2))
    err_wh = ops.mul(ops.square(ops.sub(wh, Tensor(tgt[:, 2:]))), Tensor(mask2))
    loc_loss = ops.add(ops.sum(err_xy), ops.sum(err_wh))
    obj_loss = ops.mul(ops.bce_with_logits(ops.take(flat, 4, 1), obj.reshape(m)), Tensor(float(m)))
    logp = ops.log_softmax(ops.take(flat, slice(5, d), 1), axis=1)
    cls_loss = ops.neg(ops.sum(ops.mul(logp, Tensor(cls.reshape(m, -1)))))
    total = ops.add(
        ops.add(ops.mul(loc_loss, Tensor(LOC_WEIGHT)), ops.mul(obj_loss, Tensor(OBJ_WEIGHT))),
        ops.mul(cls_loss, Tensor(CLS_WEIGHT)),
    )
    return ops.mul(total, Tensor(1.0 / n))


@dataclass
class LogoTrainLog:
    phases: list[str] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)

    def phase_losses(self, phase: str) -> list[float]:
        return [l for p, l in zip(self.phases, self.losses) if p == phase]


def train_logo(
    model: LogoDetector,
    images,
    annotations: Sequence,
    schedule: Sequence[tuple[str, int]],
    seed: int,
    learning_rate: float | None = None,
    on_phase_end: Callable[[str, "LogoDetector"], None] | None = None,
) -> LogoTrainLog:
    """Train in place following ``schedule``, a list of (phase, steps).

    ``annotations`` gives, per image, either one annotation or a list of
    them. Optimizer state carries across phases; parameters frozen in a
    phase keep their exact values. ``on_phase_end(phase, model)`` is called
    after each schedule entry. The model is float32-rounded at the end.
    """
    images = np.asarray(images, dtype=np.float64)
    truths = []
    for a in annotations:
        items = a if isinstance(a, (list, tuple)) else [a]
        truths.append([_as_truth(t) for t in items])
    if len(truths) != len(images):
        raise ValueError(f"{len(images)} images but {len(truths)} annotation entries")
    for phase, steps in schedule:
        if phase not in PHASES or steps < 0:
            raise ValueError(f"bad schedule entry ({phase!r}, {steps})")
    cfg = model.config
    obj, loc, cls = build_targets(truths, model.grid, model.brands)
    rng = np.random.default_rng(seed)
    lr = cfg.learning_rate if learning_rate is None else learning_rate
    opt = Optimizer(model.params, OptimizerState(lr, kind=cfg.optimizer))
    logbook = LogoTrainLog()
    bs = min(cfg.batch_size, len(images))
    for phase, steps in schedule:
        opt.set_trainable(freeze_schedule(model, phase))
        for step in range(steps):
            idx = rng.choice(len(images), size=bs, replace=False)
            loss = detection_loss(model.raw(images[idx]), obj[idx], loc[idx], cls[idx])
            lv = loss.item()
            if not np.isfinite(lv):
                raise NonFiniteError(f"logo training diverged in phase {phase} step {step + 1}")
            loss.backward()
            opt.step()
            logbook.phases.append(phase)
            logbook.losses.append(lv)
        if steps:
            log.info("logo phase %s: last loss %.4f", phase, logbook.losses[-1])
        if on_phase_end is not None:
            on_phase_end(phase, model)
    if any(steps for _, steps in schedule):
        model.freeze()
    return logbook
