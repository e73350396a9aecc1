import itertools
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cloudphish.combiner import (
    GRADE_RANK,
    ModelSignals,
    Thresholds,
    Verdict,
    combine,
    grade,
    logo_vote,
    signals_from_dict,
    similarity_vote,
    url_vote,
)
from cloudphish.logo import BoundingBox, Detection
from cloudphish.similarity import MatchResult

from conftest import RUNNING_EXAMPLES
from golden import ROWS, signal_records, signals_for


def det(brand, prob):
    return Detection(BoundingBox(0.5, 0.5, 0.2, 0.2), brand, prob)


def match(brand, distance, rank=1):
    return MatchResult(f"{brand}-{rank}", brand, distance, rank)


def signals_with_votes(u, l, s):
    """Signals whose three votes are exactly (u, l, s)."""
    return ModelSignals(
        "http://x.test",
        0.9 if u else 0.1,
        [det("acme", 0.9 if l else 0.1)],
        [match("acme", 1.0 if s else 20.0)],
    )


class TestGolden:
    @pytest.mark.parametrize("row", ROWS, ids=[r[0] for r in ROWS])
    def test_verdicts(self, row):
        url = dict((rid, u) for rid, _, u in RUNNING_EXAMPLES)[row[0]]
        v = combine(signals_for(row, url))
        assert v.is_phishing is True
        assert v.confidence == row[5]

    def test_d1_details(self):
        row = ROWS[4]
        v = combine(signals_for(row, RUNNING_EXAMPLES[4][2]))
        assert (v.url_vote.vote, v.logo_vote.vote, v.similarity_vote.vote) == (True, True, False)
        assert v.brand == "dhl"
        assert v.similarity_vote.brand == "facebook"
        assert (v.cross_brand.brand, v.cross_brand.distance, v.cross_brand.rank) == ("dhl", 6.92, 147)

    def test_b1_brand(self):
        v = combine(signals_for(ROWS[2], RUNNING_EXAMPLES[2][2]))
        assert v.brand == "bt" and v.cross_brand is None

    def test_records_path(self):
        urls = [u for _, _, u in RUNNING_EXAMPLES]
        got = [combine(signals_from_dict(r)).confidence for r in signal_records(urls)]
        assert got == [r[5] for r in ROWS]


class TestVotes:
    def test_grades(self):
        assert [grade(n) for n in range(4)] == ["none", "low", "medium", "high"]
        with pytest.raises(ValueError):
            grade(4)

    def test_url_strict(self):
        assert url_vote(0.5).vote is False
        assert url_vote(0.5000001).vote is True
        assert url_vote(None).vote is False

    def test_logo_inclusive(self):
        assert logo_vote([det("a", 0.25)]).vote is True
        assert logo_vote([det("a", 0.2499)]).vote is False
        assert logo_vote([]).brand is None

    def test_logo_takes_best(self):
        v = logo_vote([det("a", 0.3), det("b", 0.7)])
        assert (v.brand, v.prob) == ("b", 0.7)

    def test_similarity_strict_and_reference(self):
        assert similarity_vote([match("a", 8.0)]).vote is False
        assert similarity_vote([match("a", 7.99)]).vote is True
        assert similarity_vote([match("a", 1.0)], reference_brand="b").vote is False
        assert similarity_vote([match("b", 5.0, 2), match("a", 1.0, 1)]).brand == "a"

    def test_empty_inputs_neutral(self):
        v = combine(ModelSignals("u", None, [], []))
        assert (v.is_phishing, v.confidence, v.brand) == (False, "none", None)

    def test_none_slot_rejected(self):
        with pytest.raises(ValueError):
            ModelSignals("u", 0.3, None, [])

    def test_score_range(self):
        with pytest.raises(ValueError):
            ModelSignals("u", 1.5, [], [])

    def test_thresholds_validated(self):
        with pytest.raises(ValueError):
            Thresholds(url=1.0)
        with pytest.raises(ValueError):
            Thresholds(similarity=0.0)


class TestProperties:
    def test_monotone_over_all_triples(self):
        for votes in itertools.product([False, True], repeat=3):
            v = combine(signals_with_votes(*votes))
            assert (v.url_vote.vote, v.logo_vote.vote, v.similarity_vote.vote) == votes
            assert v.confidence == grade(sum(votes))
            for i in range(3):
                if not votes[i]:
                    up = list(votes)
                    up[i] = True
                    w = combine(signals_with_votes(*up))
                    assert GRADE_RANK[w.confidence] >= GRADE_RANK[v.confidence]

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from("abc"), st.floats(0, 1)), max_size=6), st.randoms())
    def test_detection_order_irrelevant(self, items, rnd):
        dets = [det(b, p) for b, p in items]
        shuffled = list(dets)
        rnd.shuffle(shuffled)
        best = max((d.prob for d in dets), default=None)
        a = combine(ModelSignals("u", 0.2, dets, []))
        b = combine(ModelSignals("u", 0.2, shuffled, []))
        assert a.confidence == b.confidence
        assert a.logo_vote.prob == b.logo_vote.prob == best

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 20), st.booleans())
    def test_json_round_trip(self, score, prob, dist, cross):
        sig = ModelSignals(
            "https://a.test/x", score, [det("bt", prob)], [match("esso" if cross else "bt", dist)],
            (lambda b: (dist + 1.0, 7)) if cross else None, ["note"],
        )
        v = combine(sig)
        again = Verdict.from_dict(json.loads(v.to_json()))
        assert again == v
