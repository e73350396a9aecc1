import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cloudphish.corpus import (
    DataContractError,
    DatasetIOError,
    GroundTruthAnnotation,
    ManifestRecord,
    SplitSpec,
    UrlSample,
    load_annotations,
    load_manifest,
    load_url_dataset,
    save_annotations,
    save_manifest,
    save_url_dataset,
    split,
    synth_pages,
    synth_urls,
    write_rejects,
)
from cloudphish.corpus.files import format_header, read_header, split_header
from cloudphish.corpus.images import load_image, save_image
from cloudphish.corpus.synth import CLOUD_SUFFIXES, write_pages
from cloudphish.corpus.weights import (
    ArchiveIntegrityError,
    ArchiveMismatchError,
    ArchiveVersionError,
    WeightArchiveError,
    encode_archive,
    load_into,
    load_weights,
    save_weights,
)
from cloudphish.logo import LogoConfig, LogoDetector
from cloudphish.similarity import SimilarityConfig, SimilarityModel, build_gallery
from cloudphish.url_model import UrlModel, UrlModelConfig, build_vocabulary

from conftest import RUNNING_EXAMPLES


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestUrlDataset:
    def test_two_lines(self, tmp_path):
        p = write(tmp_path / "d.csv", "url,label,source\nhttp://a.com,legitimate,x\nhttp://b.weebly.com,phishing,y\n")
        ds = load_url_dataset(p)
        assert [s.label for s in ds] == ["legitimate", "phishing"]
        assert ds.rejects == []

    def test_unknown_label_rejected_with_line(self, tmp_path):
        p = write(tmp_path / "d.csv", "url,label,source\nhttp://a.com,legitimate,x\nhttp://b.com,phish,y\n")
        ds = load_url_dataset(p)
        assert len(ds) == 1
        assert ds.rejects[0].line == 3 and "phish" in ds.rejects[0].reason

    def test_running_examples_manifest(self, tmp_path):
        rows = [UrlSample(u, "phishing", "report", b) for _, b, u in RUNNING_EXAMPLES]
        save_url_dataset(rows, tmp_path / "m.csv")
        ds = load_url_dataset(tmp_path / "m.csv")
        assert len(ds) == 5 and all(s.label == "phishing" for s in ds)
        assert sorted(s.brand for s in ds) == ["bt", "bt", "dhl", "google", "google"]

    def test_every_line_accounted(self, tmp_path):
        body = "url,label,source\nhttp://a.com,good,x\n,bad,x\nhttp://c.com,bad\nhttp://d.com,1,x\nhttp://a.com,good,x\n"
        ds = load_url_dataset(write(tmp_path / "d.csv", body))
        assert len(ds) + len(ds.rejects) + ds.duplicates == 5
        assert sorted(r.line for r in ds.rejects) == [3, 4]
        assert ds.duplicates == 1

    def test_jsonl(self, tmp_path):
        lines = [json.dumps({"url": "http://a.com", "label": "phishing"}), "{oops", json.dumps({"url": "http://b.com", "label": "0"})]
        ds = load_url_dataset(write(tmp_path / "d.jsonl", "\n".join(lines) + "\n"))
        assert [s.label for s in ds] == ["phishing", "legitimate"]
        assert ds.rejects[0].line == 2

    def test_header_lines_skipped_and_counted(self, tmp_path):
        hdr = format_header({"tool": "t"})
        p = write(tmp_path / "d.csv", hdr + "url,label,source\nhttp://b.com,phish,y\n")
        assert load_url_dataset(p).rejects[0].line == 3

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetIOError) as info:
            load_url_dataset(tmp_path / "nope.csv")
        assert "nope.csv" in str(info.value)

    def test_missing_columns(self, tmp_path):
        with pytest.raises(DataContractError):
            load_url_dataset(write(tmp_path / "d.csv", "address,kind\nx,y\n"))

    def test_rejects_report(self, tmp_path):
        ds = load_url_dataset(write(tmp_path / "d.csv", "url,label,source\nhttp://b.com,phish,y\n"))
        write_rejects(ds.rejects, tmp_path / "r.jsonl")
        rec = json.loads((tmp_path / "r.jsonl").read_text().splitlines()[0])
        assert rec["line"] == 2 and set(rec) == {"line", "reason"}


class TestAnnotations:
    def test_full_image_box(self):
        a = GroundTruthAnnotation("i", "bt", 0, 0, 40, 30, 40, 30)
        b = a.box
        assert (b.cx, b.cy, b.w, b.h) == (0.5, 0.5, 1.0, 1.0)

    def test_degenerate_rejected(self, tmp_path):
        p = write(tmp_path / "a.csv", "image_id,brand,xmin,ymin,xmax,ymax,img_w,img_h\nimg7,bt,5,0,5,4,10,10\n")
        with pytest.raises(DataContractError) as info:
            load_annotations(p)
        assert "img7" in str(info.value)
        anns, rejects = load_annotations(p, strict=False)
        assert anns == [] and rejects[0].line == 2

    def test_out_of_bounds_rejected(self):
        with pytest.raises(DataContractError):
            GroundTruthAnnotation("i", "bt", 0, 0, 11, 5, 10, 10)

    def test_round_trip_ten(self, tmp_path):
        r = np.random.default_rng(0)
        anns = []
        for i in range(10):
            x0, y0 = (int(v) for v in r.integers(0, 50, size=2))
            anns.append(GroundTruthAnnotation(f"i{i}", f"b{i % 3}", x0, y0, x0 + 7, y0 + 3.5, 64, 64))
        save_annotations(anns, tmp_path / "a.csv", header=format_header({"k": 1}))
        back, rejects = load_annotations(tmp_path / "a.csv")
        assert back == anns and rejects == []


class TestManifest:
    def test_round_trip_and_payload_check(self, tmp_path):
        img = tmp_path / "p.png"
        save_image(np.zeros((4, 4, 3)), img)
        recs = [ManifestRecord("s1", "screenshot", str(img), "phishing", "bt"), ManifestRecord("u1", "url", "http://a", "legitimate")]
        save_manifest(recs, tmp_path / "m.csv", relative_to=tmp_path)
        back = load_manifest(tmp_path / "m.csv")
        assert back[0].payload == str(img) and back[1] == recs[1]
        img.unlink()
        with pytest.raises(DataContractError):
            load_manifest(tmp_path / "m.csv")

    def test_duplicate_id(self, tmp_path):
        p = write(tmp_path / "m.csv", "id,kind,payload,label,brand,source\na,url,x,phishing,,\na,url,y,phishing,,\n")
        with pytest.raises(DataContractError):
            load_manifest(p)


class TestSplit:
    def test_100_at_quarter(self):
        items = [UrlSample(f"u{i}", "phishing" if i % 2 else "legitimate") for i in range(100)]
        train, val = split(items, SplitSpec(0.25))
        assert (len(train), len(val)) == (75, 25)

    def test_large_dataset_size(self):
        train, val = split(list(range(482916)), SplitSpec(0.25), strata=lambda i: i < 102828)
        assert len(val) == 120729 and len(train) == 482916 - 120729

    def test_deterministic(self):
        items = list(range(50))
        assert split(items, SplitSpec(0.3, seed=4), strata=lambda i: i % 3) == split(items, SplitSpec(0.3, seed=4), strata=lambda i: i % 3)

    def test_too_small(self):
        with pytest.raises(ValueError):
            split([1], SplitSpec())

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            SplitSpec(1.0)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 400), st.floats(0.05, 0.95), st.integers(0, 1000), st.floats(0.05, 0.95))
    def test_exact_partition(self, n, frac, seed, pos_rate):
        labels = ["phishing" if i < round(n * pos_rate) else "legitimate" for i in range(n)]
        items = [UrlSample(f"u{i}", labels[i]) for i in range(n)]
        train, val = split(items, SplitSpec(frac, seed))
        assert len(val) == int(np.floor(n * frac))
        assert sorted(train + val, key=lambda s: s.url) == sorted(items, key=lambda s: s.url)
        assert not {s.url for s in train} & {s.url for s in val}
        if n >= 100 and val:
            global_ratio = labels.count("phishing") / n
            val_ratio = sum(s.label == "phishing" for s in val) / len(val)
            # within 5 points, unless the fold is too small for a count to get that close
            assert abs(val_ratio - global_ratio) <= max(0.05, 0.5 / len(val)) + 1e-12


def _models():
    url = UrlModel(build_vocabulary(["abc.com"]), UrlModelConfig(lstm_units=4, embed_dim=3), rng=1)
    sim = SimilarityModel(SimilarityConfig(input_size=16, backbone=[["conv", 4, 3], ["pool", 2]], head_filters=4, head_kernel=3), rng=2)
    pages = synth_pages(["a", "b"], 2, 0, size=16, logo_jitter=1)
    sim.gallery = build_gallery(sim, pages.images, pages.page_ids, pages.brands)
    logo = LogoDetector(LogoConfig(["a", "b"], input_size=16, backbone=[["conv", 4, 3, "same"], ["pool", 4]]), rng=3)
    return {"url": url, "similarity": sim, "logo": logo}


class TestWeights:
    @pytest.mark.parametrize("kind", ["url", "similarity", "logo"])
    def test_round_trip_bitwise(self, tmp_path, kind):
        m = _models()[kind]
        save_weights(m, tmp_path / "w.bin")
        back = load_weights(tmp_path / "w.bin", kind=kind)
        assert set(back.params) == set(m.params)
        for k in m.params:
            assert back.params[k].data.tobytes() == m.params[k].data.tobytes()
        assert encode_archive(back) == encode_archive(m)

    def test_gallery_survives(self, tmp_path):
        m = _models()["similarity"]
        save_weights(m, tmp_path / "w.bin")
        back = load_weights(tmp_path / "w.bin")
        assert back.gallery.page_ids == m.gallery.page_ids
        assert np.array_equal(back.gallery.embeddings, m.gallery.embeddings)

    def test_url_into_similarity(self, tmp_path):
        ms = _models()
        save_weights(ms["url"], tmp_path / "w.bin")
        before = {k: t.data.copy() for k, t in ms["similarity"].params.items()}
        with pytest.raises(ArchiveMismatchError):
            load_into(ms["similarity"], tmp_path / "w.bin")
        with pytest.raises(ArchiveMismatchError):
            load_weights(tmp_path / "w.bin", kind="similarity")
        for k, v in before.items():
            assert np.array_equal(ms["similarity"].params[k].data, v)

    def test_truncated_payload(self, tmp_path):
        data = encode_archive(_models()["logo"])
        (tmp_path / "w.bin").write_bytes(data[:-4])
        with pytest.raises(ArchiveIntegrityError):
            load_weights(tmp_path / "w.bin")

    def test_flipped_byte(self, tmp_path):
        data = bytearray(encode_archive(_models()["logo"]))
        data[-1] ^= 0xFF
        (tmp_path / "w.bin").write_bytes(bytes(data))
        with pytest.raises(ArchiveIntegrityError):
            load_weights(tmp_path / "w.bin")

    def test_version(self, tmp_path):
        data = encode_archive(_models()["url"]).replace(b" v1 ", b" v9 ", 1)
        (tmp_path / "w.bin").write_bytes(data)
        with pytest.raises(ArchiveVersionError):
            load_weights(tmp_path / "w.bin")

    def test_not_an_archive(self, tmp_path):
        (tmp_path / "w.bin").write_bytes(b"hello\n")
        with pytest.raises(ArchiveIntegrityError):
            load_weights(tmp_path / "w.bin")

    def test_unfrozen_rejected(self):
        m = _models()["url"]
        next(iter(m.params.values())).data.flat[0] = 0.1
        with pytest.raises(WeightArchiveError):
            encode_archive(m)

    def test_non_finite_rejected(self):
        m = _models()["url"]
        next(iter(m.params.values())).data.flat[0] = np.nan
        with pytest.raises(WeightArchiveError):
            encode_archive(m)

    def test_missing_archive(self, tmp_path):
        with pytest.raises(DatasetIOError):
            load_weights(tmp_path / "none.bin")


class TestHeaders:
    def test_split_and_read(self, tmp_path):
        rec = {"tool": "cloudphish", "options": {"seed": 7}}
        p = write(tmp_path / "f.csv", format_header(rec) + "# note\na,b\n")
        assert read_header(p) == rec
        got, body, n = split_header(p.read_text())
        assert (got, body, n) == (rec, "a,b\n", 2)

    def test_no_header(self):
        assert split_header("a,b\n") == (None, "a,b\n", 0)


class TestSynth:
    def test_urls_deterministic(self):
        assert synth_urls(30, 5) == synth_urls(30, 5)
        assert synth_urls(30, 5) != synth_urls(30, 6)

    def test_phishing_subdomains(self):
        consonants = set("bcdfghjklmnpqrstvwxz")
        for s in synth_urls(300, 1):
            assert s.label in ("phishing", "legitimate")
            if s.label == "phishing":
                host = s.url.split("://")[1].split("/")[0]
                sub, suffix = host.split(".", 1)
                assert suffix in CLOUD_SUFFIXES
                assert len(sub) >= 8
                assert set(sub) <= consonants | set("aeiou0123456789")

    def test_consonant_heavy(self):
        subs = "".join(s.url.split("://")[1].split(".")[0] for s in synth_urls(500, 2) if s.label == "phishing")
        consonant_share = sum(c in "bcdfghjklmnpqrstvwxz" for c in subs) / len(subs)
        assert consonant_share > 0.5

    def test_balanced(self):
        urls = synth_urls(25, 0)
        assert sum(s.label == "phishing" for s in urls) == 25 == sum(s.label == "legitimate" for s in urls)

    def test_pages_contract(self):
        pages = synth_pages(["a", "b", "c"], 4, 3)
        assert pages.images.shape == (12, 64, 64, 3)
        assert np.all((pages.images >= 0) & (pages.images <= 1))
        assert len(pages.annotations) == 12
        for ann, pid in zip(pages.annotations, pages.page_ids):
            assert ann.image_id == pid
            assert 0 <= ann.xmin < ann.xmax <= 64 and 0 <= ann.ymin < ann.ymax <= 64

    def test_pages_deterministic(self):
        a, b = synth_pages(["a", "b"], 3, 1), synth_pages(["a", "b"], 3, 1)
        assert np.array_equal(a.images, b.images) and a.annotations == b.annotations

    def test_same_brand_differs_only_by_jitter(self):
        pages = synth_pages(["a", "b"], 2, 1)
        same = np.abs(pages.images[0] - pages.images[1]).mean()
        other = np.abs(pages.images[0] - pages.images[2]).mean()
        assert 0 < same < other

    def test_pages_need_two_brands(self):
        with pytest.raises(ValueError):
            synth_pages(["a"], 3, 0)

    def test_write_pages_round_trip(self, tmp_path):
        pages = synth_pages(["a", "b"], 2, 1, size=16, logo_jitter=1)
        write_pages(pages, tmp_path)
        recs = load_manifest(tmp_path / "manifest.csv")
        assert [r.id for r in recs] == pages.page_ids
        assert np.array_equal(load_image(recs[0].payload), pages.images[0])
        anns, _ = load_annotations(tmp_path / "annotations.csv")
        assert anns == pages.annotations
