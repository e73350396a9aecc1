"""Independent reference implementations used as test oracles."""

import math
from fractions import Fraction as F

import numpy as np

from cloudphish.logo import BoundingBox, Detection, iou

# (form, box a, box b, expected IOU worked out by hand as intersection/union)
IOU_FIXTURES = [
    ("xywh", (0, 0, 2, 2), (0, 0, 2, 2), F(1)),
    ("xywh", (0, 0, 2, 2), (1, 0, 2, 2), F(2, 6)),
    ("xywh", (0, 0, 1, 1), (2, 2, 1, 1), F(0)),
    ("xywh", (0, 0, 1, 1), (1, 0, 1, 1), F(0)),
    ("xywh", (0, 0, 4, 4), (1, 1, 2, 2), F(4, 16)),
    ("xywh", (0, 0, 2, 2), (1, 1, 2, 2), F(1, 7)),
    ("xywh", (0, 0, 4, 2), (2, 0, 4, 2), F(4, 12)),
    ("xywh", (0, 0, 1, 4), (0, 1, 1, 4), F(3, 5)),
    ("xywh", (0, 1, 4, 1), (1, 0, 1, 4), F(1, 7)),
    ("xywh", (0, 0, 0.5, 0.5), (0.25, 0.25, 0.5, 0.5), F(1, 16) / F(7, 16)),
    ("xywh", (0, 0, 1, 1), (1, 1, 1, 1), F(0)),
    ("xywh", (0, 0, 3, 3), (1, 1, 3, 3), F(4, 14)),
    ("xywh", (0, 0, 2, 1), (0, 0, 1, 2), F(1, 3)),
    ("xywh", (0, 0, 8, 8), (0, 0, 1, 1), F(1, 64)),
    ("xywh", (0.5, 0.5, 0.25, 0.25), (0.5, 0.5, 0.25, 0.25), F(1)),
    ("xywh", (0, 0, 2, 2), (0.5, 0.5, 1, 1), F(1, 4)),
    ("xywh", (0, 0, 4, 4), (3, 3, 4, 4), F(1, 31)),
    ("xywh", (0, 0, 2, 4), (1, 2, 2, 4), F(2, 14)),
    ("xywh", (0, 0, 6, 2), (2, 0, 2, 2), F(4, 12)),
    ("corners", (0, 0, 2, 2), (1, 0, 2, 2), F(2, 4)),
]


def fixture_boxes(form, a, b):
    make = BoundingBox.from_xywh if form == "xywh" else BoundingBox.from_corners
    return make(*a), make(*b)


def nms_reference(detections, iou_threshold):
    """Repeatedly take the best remaining detection and drop every same-brand
    detection overlapping it by more than the threshold. Returns kept indices."""
    remaining = list(range(len(detections)))
    kept = []
    while remaining:
        best = max(remaining, key=lambda i: (detections[i].prob, -i))
        kept.append(best)
        remaining = [
            i for i in remaining
            if i != best and not (
                detections[i].brand == detections[best].brand
                and iou(detections[i].box, detections[best].box) > iou_threshold
            )
        ]
    return kept


def random_detections(rng, n, brands=("a", "b", "c")):
    out = []
    for _ in range(n):
        w, h = rng.uniform(0.05, 0.5, size=2)
        cx, cy = rng.uniform(0, 1, size=2)
        out.append(Detection(BoundingBox(cx, cy, w, h), brands[int(rng.integers(len(brands)))], float(rng.random())))
    return out


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def naive_decode(raw, S, anchors, labels, threshold):
    """Cell by cell, anchor by anchor, with scalar math only.

    Returns (cx, cy, w, h, brand, prob) tuples."""
    out = []
    for r in range(S):
        for c in range(S):
            for a, (pw, ph) in enumerate(anchors):
                v = [float(x) for x in raw[r][c][a]]
                logits = v[5:]
                top = max(logits)
                exps = [math.exp(l - top) for l in logits]
                k = max(range(len(logits)), key=lambda j: (logits[j], -j))
                cls_p = exps[k] / sum(exps)
                prob = _sig(v[4]) * cls_p
                if prob >= threshold:
                    out.append((
                        (c + _sig(v[0])) / S,
                        (r + _sig(v[1])) / S,
                        pw * math.exp(v[2]),
                        ph * math.exp(v[3]),
                        labels[k],
                        prob,
                    ))
    return out


def compare_decoded(dets, reference, tol):
    got = sorted(((d.box.cx, d.box.cy, d.box.w, d.box.h, d.brand, d.prob) for d in dets), key=lambda t: (t[0], t[1], t[2]))
    ref = sorted(reference, key=lambda t: (t[0], t[1], t[2]))
    if len(got) != len(ref):
        return False
    for g, e in zip(got, ref):
        if g[4] != e[4]:
            return False
        if any(abs(x - y) > tol for x, y in zip(g[:4] + g[5:], e[:4] + e[5:])):
            return False
    return True


def count_check(outcome, detections, truths):
    """True when TP+FN equals the per-brand GT count and TP+FP the per-brand detection count."""
    for b in {d.brand for d in detections} | {g.brand for g in truths}:
        c = outcome.counts.get(b)
        tp = c.tp if c else 0
        fp = c.fp if c else 0
        fn = c.fn if c else 0
        if tp + fn != sum(g.brand == b for g in truths):
            return False
        if tp + fp != sum(d.brand == b for d in detections):
            return False
    return True


def exhaustive_ranking(query, rows, page_ids):
    """Plain-Python distances, sorted by (distance, page id)."""
    scored = []
    for row, pid in zip(rows, page_ids):
        d = math.sqrt(sum((float(x) - float(q)) ** 2 for x, q in zip(row, query)))
        scored.append((d, pid))
    return [pid for _, pid in sorted(scored)]


def random_gallery(rng, n, dim, integer):
    from cloudphish.similarity import BrandGallery

    rows = rng.integers(0, 3, size=(n, dim)).astype(float) if integer else rng.normal(size=(n, dim))
    ids = [f"p{int(v):06d}" for v in rng.permutation(10 * n)[:n]]
    brands = [f"b{int(v)}" for v in rng.integers(0, 5, size=n)]
    return BrandGallery(ids, brands, np.asarray(rows))
