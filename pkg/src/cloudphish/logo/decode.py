"""Grid/anchor prediction decoding and non-maximum suppression."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..autodiff.ops import _sigmoid, softmax
from ..autodiff.tensor import ShapeError
from .geometry import BoundingBox, iou

DEFAULT_ANCHORS = ((0.15, 0.15), (0.4, 0.2))
LOGO_THRESHOLD = 0.25
NMS_IOU = 0.45


@dataclass(frozen=True)
class GridSpec:
    """S x S cells, A anchor priors per cell (normalized w, h), C brands."""

    S: int = 4
    C: int = 3
    anchors: tuple = DEFAULT_ANCHORS

    def __post_init__(self):
        anchors = tuple(tuple(float(v) for v in a) for a in self.anchors)
        object.__setattr__(self, "anchors", anchors)
        if self.S <= 0 or self.C <= 0 or not anchors:
            raise ValueError("S, C and the anchor list must be non-empty/positive")
        if any(len(a) != 2 or a[0] <= 0 or a[1] <= 0 for a in anchors):
            raise ValueError(f"anchor priors must be positive (w, h) pairs, got {anchors}")

    @property
    def A(self) -> int:
        return len(self.anchors)

    @property
    def raw_shape(self) -> tuple[int, int, int, int]:
        return (self.S, self.S, self.A, 5 + self.C)

    def with_classes(self, c: int) -> "GridSpec":
        return GridSpec(self.S, c, self.anchors)


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    brand: str
    prob: float
    objectness: float = 1.0
    class_prob: float = 1.0
    image_id: str | None = field(default=None, compare=False)


def decode_predictions(
    raw,
    grid: GridSpec,
    conf_threshold: float = LOGO_THRESHOLD,
    labels: Sequence[str] | None = None,
    class_mask: Sequence[bool] | None = None,
    image_id: str | None = None,
) -> list[Detection]:
    """Turn one image's raw (S, S, A, 5 + C) output into thresholded detections.

    Channels per anchor are tx, ty, tw, th, objectness logit, class logits.
    ``prob = sigmoid(obj) * max softmax``; detections with prob >= threshold
    are kept. ``class_mask`` entries that are False get a -inf logit.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != grid.raw_shape:
        raise ShapeError(f"raw prediction shape {raw.shape} != {grid.raw_shape}")
    if not 0.0 <= conf_threshold <= 1.0:
        raise ValueError("conf_threshold must be in [0, 1]")
    labels = list(labels) if labels is not None else [str(i) for i in range(grid.C)]
    if len(labels) != grid.C:
        raise ValueError(f"{len(labels)} labels for {grid.C} classes")
    S = grid.S
    logits = raw[..., 5:]
    if class_mask is not None:
        keep = np.asarray(class_mask, dtype=bool)
        logits = np.where(keep, logits, -np.inf)
    cls = softmax(logits, axis=-1)
    obj = _sigmoid(raw[..., 4])
    best = cls.argmax(axis=-1)
    best_p = np.take_along_axis(cls, best[..., None], axis=-1)[..., 0]
    prob = obj * best_p
    cols = np.arange(S)[None, :, None]
    rows = np.arange(S)[:, None, None]
    cx = (cols + _sigmoid(raw[..., 0])) / S
    cy = (rows + _sigmoid(raw[..., 1])) / S
    priors = np.array(grid.anchors)
    w = priors[:, 0] * np.exp(raw[..., 2])
    h = priors[:, 1] * np.exp(raw[..., 3])
    out = []
    for r, c, a in zip(*np.nonzero(prob >= conf_threshold)):
        out.append(
            Detection(
                BoundingBox(float(cx[r, c, a]), float(cy[r, c, a]), float(w[r, c, a]), float(h[r, c, a])),
                labels[int(best[r, c, a])],
                float(prob[r, c, a]),
                float(obj[r, c, a]),
                float(best_p[r, c, a]),
                image_id,
            )
        )
    return out


def nms(detections: Sequence[Detection], iou_threshold: float = NMS_IOU) -> list[Detection]:
    """Greedy per-brand suppression; result sorted by prob, descending.

    Ties in prob keep input order.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError("iou_threshold must be in (0, 1)")
    order = sorted(range(len(detections)), key=lambda i: -detections[i].prob)
    kept: list[int] = []
    kept_by_brand: dict[str, list[BoundingBox]] = {}
    for i in order:
        d = detections[i]
        boxes = kept_by_brand.setdefault(d.brand, [])
        if any(iou(d.box, k) > iou_threshold for k in boxes):
            continue
        boxes.append(d.box)
        kept.append(i)
    return [detections[i] for i in kept]
