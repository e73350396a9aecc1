"""Fuse URL, logo and page-similarity signals into one graded verdict.

Each model casts a yes/no vote. The number of yes votes sets the grade:
three is high confidence, two medium, one low, none means not phishing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .logo.decode import LOGO_THRESHOLD, Detection
from .similarity import DEFAULT_DISTANCE_THRESHOLD, MatchResult

URL_THRESHOLD = 0.5

GRADES = ("none", "low", "medium", "high")
GRADE_RANK = {g: i for i, g in enumerate(GRADES)}


@dataclass(frozen=True)
class Thresholds:
    url: float = URL_THRESHOLD
    logo: float = LOGO_THRESHOLD
    similarity: float = DEFAULT_DISTANCE_THRESHOLD

    def __post_init__(self):
        if not 0.0 < self.url < 1.0:
            raise ValueError("url threshold must be in (0, 1)")
        if not 0.0 <= self.logo <= 1.0:
            raise ValueError("logo threshold must be in [0, 1]")
        if not self.similarity > 0:
            raise ValueError("similarity threshold must be positive")


@dataclass
class ModelSignals:
    """Raw outputs of the three models for one page.

    ``logo_detections`` and ``similarity_matches`` may be empty lists (no
    screenshot, nothing found) but never None. ``brand_distance`` maps a
    brand to (distance, rank) of its closest gallery page; it is optional.
    """

    url: str
    url_score: float | None
    logo_detections: list[Detection] = field(default_factory=list)
    similarity_matches: list[MatchResult] = field(default_factory=list)
    brand_distance: Callable[[str], tuple[float, int]] | None = None
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.logo_detections is None or self.similarity_matches is None:
            raise ValueError("signal slots must be explicit; pass an empty list for a neutral signal")
        if self.url_score is not None and not 0.0 <= self.url_score <= 1.0:
            raise ValueError(f"url score {self.url_score} outside [0, 1]")


@dataclass(frozen=True)
class UrlVote:
    score: float | None
    vote: bool


@dataclass(frozen=True)
class LogoVote:
    brand: str | None
    prob: float | None
    vote: bool


@dataclass(frozen=True)
class SimilarityVote:
    brand: str | None
    distance: float | None
    rank: int | None
    vote: bool


def url_vote(score: float | None, threshold: float = URL_THRESHOLD) -> UrlVote:
    """Yes when the score is strictly above the threshold; a missing score is no."""
    if score is None:
        return UrlVote(None, False)
    return UrlVote(float(score), float(score) > threshold)


def logo_vote(detections: Sequence[Detection], threshold: float = LOGO_THRESHOLD) -> LogoVote:
    """Best detection's brand, voting yes when its prob reaches the threshold."""
    if not detections:
        return LogoVote(None, None, False)
    best = max(detections, key=lambda d: d.prob)  # first wins on ties
    return LogoVote(best.brand, float(best.prob), best.prob >= threshold)


def similarity_vote(
    matches: Sequence[MatchResult],
    threshold: float = DEFAULT_DISTANCE_THRESHOLD,
    reference_brand: str | None = None,
) -> SimilarityVote:
    """Top-1 match vote.

    Yes when the top match is closer than the threshold and, if a reference
    brand is given, belongs to that brand.
    """
    if not matches:
        return SimilarityVote(None, None, None, False)
    top = min(matches, key=lambda m: m.rank)
    yes = top.distance < threshold and (reference_brand is None or top.brand == reference_brand)
    return SimilarityVote(top.brand, float(top.distance), int(top.rank), yes)


def grade(n_yes: int) -> str:
    if not 0 <= n_yes <= 3:
        raise ValueError(f"vote count {n_yes} outside 0..3")
    return GRADES[n_yes]


@dataclass(frozen=True)
class CrossBrand:
    """Similarity distance to the logo's brand when the two models disagree."""

    brand: str
    distance: float
    rank: int


@dataclass(frozen=True)
class Verdict:
    url: str
    is_phishing: bool
    confidence: str
    brand: str | None
    url_vote: UrlVote
    logo_vote: LogoVote
    similarity_vote: SimilarityVote
    cross_brand: CrossBrand | None = None
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = {
            "url": self.url,
            "is_phishing": self.is_phishing,
            "confidence": self.confidence,
            "brand": self.brand,
            "votes": {
                "url": {"score": self.url_vote.score, "vote": self.url_vote.vote},
                "logo": {"brand": self.logo_vote.brand, "prob": self.logo_vote.prob, "vote": self.logo_vote.vote},
                "similarity": {
                    "brand": self.similarity_vote.brand,
                    "distance": self.similarity_vote.distance,
                    "rank": self.similarity_vote.rank,
                    "vote": self.similarity_vote.vote,
                },
            },
        }
        if self.cross_brand is not None:
            d["votes"]["similarity"]["logo_brand"] = {
                "brand": self.cross_brand.brand,
                "distance": self.cross_brand.distance,
                "rank": self.cross_brand.rank,
            }
        if self.notes:
            d["notes"] = list(self.notes)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Verdict":
        v = d["votes"]
        sim = v["similarity"]
        cross = sim.get("logo_brand")
        return cls(
            d["url"],
            bool(d["is_phishing"]),
            d["confidence"],
            d["brand"],
            UrlVote(v["url"]["score"], bool(v["url"]["vote"])),
            LogoVote(v["logo"]["brand"], v["logo"]["prob"], bool(v["logo"]["vote"])),
            SimilarityVote(sim["brand"], sim["distance"], sim["rank"], bool(sim["vote"])),
            CrossBrand(cross["brand"], cross["distance"], cross["rank"]) if cross else None,
            tuple(d.get("notes", ())),
        )


def combine(signals: ModelSignals, thresholds: Thresholds | None = None) -> Verdict:
    th = thresholds or Thresholds()
    uv = url_vote(signals.url_score, th.url)
    lv = logo_vote(signals.logo_detections, th.logo)
    # the logo brand only conditions the similarity vote when the logo vote is yes
    sv = similarity_vote(signals.similarity_matches, th.similarity, lv.brand if lv.vote else None)
    n_yes = uv.vote + lv.vote + sv.vote
    if lv.vote:
        brand = lv.brand
    elif sv.vote:
        brand = sv.brand
    else:
        brand = None
    cross = None
    if lv.vote and sv.brand is not None and sv.brand != lv.brand and signals.brand_distance is not None:
        dist, rank = signals.brand_distance(lv.brand)
        cross = CrossBrand(lv.brand, float(dist), int(rank))
    return Verdict(signals.url, n_yes > 0, grade(n_yes), brand, uv, lv, sv, cross, tuple(signals.notes))


def signals_from_dict(d: dict) -> ModelSignals:
    """Build signals from a plain record (as read from a signals file).

    ``logo`` is a list of {brand, prob[, box]} and ``similarity`` a list of
    {page_id, brand, distance, rank}; ``brand_distances`` optionally maps a
    brand to [distance, rank].
    """
    from .logo.geometry import BoundingBox

    dets = []
    for item in d.get("logo", []):
        box = BoundingBox(*item["box"]) if "box" in item else BoundingBox(0.5, 0.5, 1.0, 1.0)
        dets.append(Detection(box, item["brand"], float(item["prob"])))
    matches = [
        MatchResult(m.get("page_id", f"{m['brand']}-{m['rank']}"), m["brand"], float(m["distance"]), int(m["rank"]))
        for m in d.get("similarity", [])
    ]
    table = {b: (float(v[0]), int(v[1])) for b, v in d.get("brand_distances", {}).items()}
    lookup = None
    if table:
        def lookup(brand):
            return table[brand]
    score = d.get("url_score")
    return ModelSignals(d["url"], None if score is None else float(score), dets, matches, lookup, list(d.get("notes", [])))
