"""Recorded model outputs for the five running examples and their verdicts."""

from cloudphish.combiner import ModelSignals
from cloudphish.logo import BoundingBox, Detection
from cloudphish.similarity import MatchResult

# Only the top-1 brand and its yes/no call were recorded for most similarity
# outputs, so those rows use a stand-in distance below the 8.0 threshold.
# D1 has its actual top-1 (facebook, 3.1) and DHL's rank 147 at 6.92.
STAND_IN_DISTANCE = 2.0

# id, url score, logo (brand, prob), similarity top-1 brand, top-1 distance, expected confidence
ROWS = [
    ("G1", 0.001, ("google", 0.23), "google", STAND_IN_DISTANCE, "low"),
    ("G2", 0.043, ("google", 0.23), "google", STAND_IN_DISTANCE, "low"),
    ("B1", 0.997, ("bt", 0.94), "bt", STAND_IN_DISTANCE, "high"),
    ("B2", 0.315, ("bt", 0.98), "bt", STAND_IN_DISTANCE, "medium"),
    ("D1", 0.999, ("dhl", 0.83), "facebook", 3.1, "medium"),
]

D1_BRAND_DISTANCE = {"dhl": (6.92, 147)}


def signals_for(row, url):
    rid, score, (lbrand, lprob), sbrand, sdist, _ = row
    dets = [Detection(BoundingBox(0.5, 0.2, 0.2, 0.1), lbrand, lprob)]
    matches = [MatchResult(f"{sbrand}-ref", sbrand, sdist, 1)]
    lookup = D1_BRAND_DISTANCE.__getitem__ if rid == "D1" else None
    return ModelSignals(url, score, dets, matches, lookup)


def signal_records(urls):
    """The same rows as plain records, as read by the combine command."""
    out = []
    for row, url in zip(ROWS, urls):
        rid, score, (lbrand, lprob), sbrand, sdist, _ = row
        rec = {
            "url": url,
            "url_score": score,
            "logo": [{"brand": lbrand, "prob": lprob}],
            "similarity": [{"page_id": f"{sbrand}-ref", "brand": sbrand, "distance": sdist, "rank": 1}],
        }
        if rid == "D1":
            rec["brand_distances"] = {b: list(v) for b, v in D1_BRAND_DISTANCE.items()}
        out.append(rec)
    return out
