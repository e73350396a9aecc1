"""Ground-truth matching, precision/recall curves, AUC and AUC deltas."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .decode import Detection
from .geometry import BoundingBox, iou

MATCH_IOU = 0.5


@dataclass(frozen=True)
class GroundTruth:
    brand: str
    box: BoundingBox


@dataclass
class BrandCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0


@dataclass
class MatchOutcome:
    # per detection, in the order they were considered (prob descending)
    detections: list[Detection]
    is_tp: list[bool]
    assigned_gt: list[int | None]
    unmatched_gt: list[int]
    counts: dict[str, BrandCounts]


def match_detections(
    detections: Sequence[Detection],
    ground_truth: Sequence[GroundTruth],
    iou_min: float = MATCH_IOU,
) -> MatchOutcome:
    """Greedy one-to-one matching for one image.

    In descending prob order, a detection is a true positive when an
    unmatched ground truth of the same brand overlaps it with IOU >= iou_min
    (the highest-IOU such box is taken); otherwise it is a false positive.
    Ground truths left unmatched are false negatives.
    """
    order = sorted(range(len(detections)), key=lambda i: -detections[i].prob)
    used = [False] * len(ground_truth)
    counts: dict[str, BrandCounts] = defaultdict(BrandCounts)
    dets, flags, assigned = [], [], []
    for i in order:
        d = detections[i]
        best_j, best_iou = None, iou_min
        for j, g in enumerate(ground_truth):
            if used[j] or g.brand != d.brand:
                continue
            v = iou(d.box, g.box)
            if v >= best_iou and (best_j is None or v > best_iou):
                best_j, best_iou = j, v
        dets.append(d)
        if best_j is None:
            flags.append(False)
            assigned.append(None)
            counts[d.brand].fp += 1
        else:
            used[best_j] = True
            flags.append(True)
            assigned.append(best_j)
            counts[d.brand].tp += 1
    unmatched = [j for j, u in enumerate(used) if not u]
    for j in unmatched:
        counts[ground_truth[j].brand].fn += 1
    return MatchOutcome(dets, flags, assigned, unmatched, dict(counts))


@dataclass
class ScoredMatches:
    """Per-brand pooled (prob, is_tp) pairs plus ground-truth totals, over many images."""

    scored: dict[str, list[tuple[float, bool]]] = field(default_factory=lambda: defaultdict(list))
    n_gt: dict[str, int] = field(default_factory=lambda: defaultdict(int))

    def add(self, outcome: MatchOutcome, ground_truth: Sequence[GroundTruth]) -> None:
        for d, tp in zip(outcome.detections, outcome.is_tp):
            self.scored[d.brand].append((d.prob, tp))
        for g in ground_truth:
            self.n_gt[g.brand] += 1

    def brands(self) -> list[str]:
        return sorted(set(self.scored) | set(self.n_gt))


def evaluate_images(
    detections_per_image: Sequence[Sequence[Detection]],
    truth_per_image: Sequence[Sequence[GroundTruth]],
    iou_min: float = MATCH_IOU,
) -> ScoredMatches:
    acc = ScoredMatches()
    for dets, gts in zip(detections_per_image, truth_per_image):
        acc.add(match_detections(dets, gts, iou_min), gts)
    return acc


@dataclass
class PRCurve:
    brand: str
    thresholds: list[float]
    precision: list[float]
    recall: list[float]
    n_gt: int


def pr_curve(scored: Sequence[tuple[float, bool]], n_gt: int, brand: str = "") -> PRCurve | None:
    """Sweep the detection probability from high to low.

    One point per distinct probability (tied detections enter together).
    Returns None when the brand has no ground truth, since recall is
    undefined there.
    """
    if n_gt <= 0:
        return None
    items = sorted(scored, key=lambda t: -t[0])
    ths, prec, rec = [], [], []
    tp = fp = 0
    for k, (p, hit) in enumerate(items):
        tp += bool(hit)
        fp += not hit
        if k + 1 < len(items) and items[k + 1][0] == p:
            continue
        ths.append(float(p))
        prec.append(tp / (tp + fp))
        rec.append(tp / n_gt)
    return PRCurve(brand, ths, prec, rec, n_gt)


def auc(curve: PRCurve | None) -> float | None:
    """Trapezoidal area under precision over recall.

    Where several sweep points share a recall value, the last one (lowest
    threshold) represents that recall level. The curve is extended flat
    from recall 0 to the first retained point.
    """
    if curve is None:
        return None
    rec, prec = [], []
    for r, p in zip(curve.recall, curve.precision):
        if rec and r == rec[-1]:
            prec[-1] = p
        else:
            rec.append(r)
            prec.append(p)
    if not rec:
        return 0.0
    area = rec[0] * prec[0]
    for k in range(1, len(rec)):
        area += (rec[k] - rec[k - 1]) * (prec[k] + prec[k - 1]) / 2
    return float(area)


@dataclass
class AucReport:
    curves: dict[str, PRCurve]
    aucs: dict[str, float]

    @property
    def mean_auc(self) -> float:
        return float(np.mean(list(self.aucs.values()))) if self.aucs else 0.0


def auc_report(matches: ScoredMatches, brands: Sequence[str] | None = None) -> AucReport:
    curves, aucs = {}, {}
    for b in brands if brands is not None else matches.brands():
        c = pr_curve(matches.scored.get(b, []), matches.n_gt.get(b, 0), b)
        if c is None:
            continue
        curves[b] = c
        aucs[b] = auc(c)
    return AucReport(curves, aucs)


@dataclass
class AucDelta:
    deltas: dict[str, float]
    only_new: list[str]
    only_old: list[str]

    @property
    def increased(self) -> int:
        return sum(1 for v in self.deltas.values() if v > 0)

    @property
    def decreased(self) -> int:
        return sum(1 for v in self.deltas.values() if v < 0)

    @property
    def mean_increase(self) -> float:
        ups = [v for v in self.deltas.values() if v > 0]
        return float(np.mean(ups)) if ups else 0.0

    @property
    def mean_decrease(self) -> float:
        downs = [v for v in self.deltas.values() if v < 0]
        return float(np.mean(downs)) if downs else 0.0

    def summary(self) -> dict:
        return {
            "increased": self.increased,
            "decreased": self.decreased,
            "unchanged": len(self.deltas) - self.increased - self.decreased,
            "mean_increase": self.mean_increase,
            "mean_decrease": self.mean_decrease,
            "only_new": list(self.only_new),
            "only_old": list(self.only_old),
        }


def auc_delta(new: Mapping[str, float] | AucReport, old: Mapping[str, float] | AucReport) -> AucDelta:
    """Per-brand ``new - old``; brands present in only one report are listed apart."""
    n = new.aucs if isinstance(new, AucReport) else dict(new)
    o = old.aucs if isinstance(old, AucReport) else dict(old)
    common = sorted(set(n) & set(o))
    return AucDelta(
        {b: n[b] - o[b] for b in common},
        sorted(set(n) - set(o)),
        sorted(set(o) - set(n)),
    )


def write_pr_csv(report: AucReport, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["brand", "threshold", "precision", "recall"])
    for b in sorted(report.curves):
        c = report.curves[b]
        for t, p, r in zip(c.thresholds, c.precision, c.recall):
            w.writerow([b, repr(t), repr(p), repr(r)])


def write_auc_csv(report: AucReport, fh, delta: AucDelta | None = None) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["brand", "auc", "delta"])
    for b in sorted(report.aucs):
        d = "" if delta is None or b not in delta.deltas else repr(delta.deltas[b])
        w.writerow([b, repr(report.aucs[b]), d])
