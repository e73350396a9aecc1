import csv
import json

import numpy as np
import pytest

from cloudphish.cli import EXIT_CONFIG, EXIT_DATA, EXIT_IO, EXIT_OK, main
from cloudphish.combiner import Verdict
from cloudphish.corpus import SplitSpec, load_url_dataset, split
from cloudphish.corpus.files import read_header, split_header
from cloudphish.corpus.weights import decode_archive, load_weights
from cloudphish.url_model import UrlModel, UrlModelConfig, build_vocabulary

from conftest import RUNNING_EXAMPLE_SCORES, RUNNING_EXAMPLES
from golden import ROWS, signal_records


def rows_of(path):
    _, body, _ = split_header(path.read_text())
    return list(csv.reader(body.splitlines()))


def replay(artifact_header, command, tmp_path, out_flags):
    """Rerun a command from the options echoed in an artifact's header."""
    cfg = tmp_path / f"replay-{command.replace(' ', '-')}.json"
    cfg.write_text(json.dumps({command: {k: v for k, v in artifact_header["options"].items() if v is not None}}))
    return main([*command.split(), "--config", str(cfg), *out_flags])


@pytest.fixture(scope="module")
def urls(tmp_path_factory):
    d = tmp_path_factory.mktemp("urls")
    assert main(["synth", "urls", "--n-per-class", "20", "--seed", "3", "--out", str(d / "urls.csv")]) == EXIT_OK
    return d / "urls.csv"


@pytest.fixture(scope="module")
def pages(tmp_path_factory):
    d = tmp_path_factory.mktemp("pages")
    assert main(["synth", "pages", "--brands", "google,bt,dhl", "--pages-per-brand", "4", "--seed", "2",
                 "--out-dir", str(d)]) == EXIT_OK
    return d / "manifest.csv"


class TestExitCodes:
    def test_missing_dataset_names_path(self, tmp_path, capsys):
        code = main(["train", "url", "--data", str(tmp_path / "absent.csv"), "--out", str(tmp_path / "m.bin")])
        assert code == EXIT_IO
        assert "absent.csv" in capsys.readouterr().err

    def test_bad_config_key(self, tmp_path, urls):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"bogus": 1}))
        assert main(["train", "url", "--config", str(cfg), "--data", str(urls), "--out", str(tmp_path / "m")]) == EXIT_CONFIG

    def test_unknown_command(self):
        assert main(["frobnicate"]) == EXIT_CONFIG

    def test_archive_kind_mismatch(self, tmp_path, urls, pages):
        out = tmp_path / "u.bin"
        assert main(["train", "url", "--data", str(urls), "--epochs", "0", "--out", str(out)]) == EXIT_OK
        code = main(["eval", "sim", "--model", str(out), "--pages", str(pages), "--out", str(tmp_path / "e.csv")])
        assert code == EXIT_DATA

    def test_report_without_verdicts(self, tmp_path):
        assert main(["report", "--run-dir", str(tmp_path)]) == EXIT_DATA

    def test_report_missing_dir(self, tmp_path):
        assert main(["report", "--run-dir", str(tmp_path / "none")]) == EXIT_IO


class TestTrainUrl:
    def test_zero_epochs_is_initialization(self, tmp_path, urls):
        out = tmp_path / "m.bin"
        assert main(["train", "url", "--data", str(urls), "--variant", "original", "--epochs", "0", "--seed", "4",
                     "--out", str(out)]) == EXIT_OK
        samples = load_url_dataset(urls).samples
        cfg = UrlModelConfig.for_variant("original", epochs=0)
        train, _ = split(samples, SplitSpec(cfg.validation_split, 4))
        init = UrlModel(build_vocabulary(train), cfg, np.random.default_rng(4))
        got = load_weights(out, "url")
        for k in init.params:
            assert np.array_equal(got.params[k].data, init.params[k].data)

    def test_archive_and_log(self, tmp_path, urls):
        out = tmp_path / "m.bin"
        assert main(["train", "url", "--data", str(urls), "--variant", "original", "--epochs", "1", "--out", str(out)]) == EXIT_OK
        header, _ = decode_archive(out.read_bytes())
        run = header["extras"]["run"]
        assert run["command"] == "train url" and run["options"]["variant"] == "original"
        assert str(urls) in run["inputs"]
        log = rows_of(tmp_path / "m.bin.log.csv")
        assert log[0] == ["epoch", "split", "loss", "accuracy"]
        assert [r[1] for r in log[1:3]] == ["train", "validation"]

    def test_reproducible_from_header(self, tmp_path, urls):
        first = tmp_path / "a.bin"
        assert main(["train", "url", "--data", str(urls), "--variant", "original", "--epochs", "1", "--seed", "5",
                     "--out", str(first)]) == EXIT_OK
        hdr = read_header(tmp_path / "a.bin.log.csv")
        assert replay(hdr, "train url", tmp_path, ["--out", str(tmp_path / "b.bin")]) == EXIT_OK
        assert (tmp_path / "b.bin").read_bytes() == first.read_bytes()


class TestTrainSimAndLogo:
    def test_sim_reproducible(self, tmp_path, pages):
        args = ["train", "sim", "--pages", str(pages), "--epochs", "1", "--steps-per-epoch", "1", "--batch-size", "4"]
        assert main([*args, "--out", str(tmp_path / "a.bin")]) == EXIT_OK
        hdr = read_header(tmp_path / "a.bin.log.csv")
        assert replay(hdr, "train sim", tmp_path, ["--out", str(tmp_path / "b.bin")]) == EXIT_OK
        assert (tmp_path / "b.bin").read_bytes() == (tmp_path / "a.bin").read_bytes()
        model = load_weights(tmp_path / "a.bin", "similarity")
        assert model.gallery is not None and len(model.gallery) == 9

    def test_sim_eval_on_own_gallery(self, tmp_path, pages):
        assert main(["train", "sim", "--pages", str(pages), "--epochs", "0", "--out", str(tmp_path / "s.bin")]) == EXIT_OK
        assert main(["gallery", "build", "--model", str(tmp_path / "s.bin"), "--pages", str(pages),
                     "--out", str(tmp_path / "g.bin")]) == EXIT_OK
        assert main(["eval", "sim", "--model", str(tmp_path / "g.bin"), "--pages", str(pages),
                     "--out", str(tmp_path / "e.csv")]) == EXIT_OK
        table = dict(rows_of(tmp_path / "e.csv")[1:])
        assert float(table["1"]) == 1.0

    def test_logo_transfer_reproducible(self, tmp_path, pages):
        base = tmp_path / "base.bin"
        assert main(["train", "logo", "--pages", str(pages), "--brands", "google,bt", "--full-steps", "2",
                     "--batch-size", "4", "--out", str(base)]) == EXIT_OK
        args = ["train", "logo", "--pages", str(pages), "--init", str(base), "--brands", "google,bt,dhl",
                "--frozen-steps", "2", "--full-steps", "1", "--batch-size", "4"]
        assert main([*args, "--out", str(tmp_path / "a.bin")]) == EXIT_OK
        hdr = read_header(tmp_path / "a.bin.log.csv")
        assert str(base) in hdr["inputs"]
        assert replay(hdr, "train logo", tmp_path, ["--out", str(tmp_path / "b.bin")]) == EXIT_OK
        assert (tmp_path / "b.bin").read_bytes() == (tmp_path / "a.bin").read_bytes()
        a = load_weights(tmp_path / "a.bin", "logo")
        b0 = load_weights(base, "logo")
        assert a.brands == ["google", "bt", "dhl"]
        phases = [r[1] for r in rows_of(tmp_path / "a.bin.log.csv")[1:]]
        assert phases == ["frozen-backbone", "frozen-backbone", "full"]
        assert not np.array_equal(a.params["conv1.w"].data, b0.params["conv1.w"].data)

    def test_logo_needs_brands(self, tmp_path, pages):
        assert main(["train", "logo", "--pages", str(pages), "--out", str(tmp_path / "x.bin")]) == EXIT_CONFIG


class TestEval:
    def test_url_histogram_from_scores(self, tmp_path):
        scores = tmp_path / "s.csv"
        scores.write_text("score,label\n" + "".join(f"{s},phishing\n" for s in RUNNING_EXAMPLE_SCORES))
        assert main(["eval", "url", "--scores", str(scores), "--out", str(tmp_path / "h.csv")]) == EXIT_OK
        table = {r[0]: r[1:] for r in rows_of(tmp_path / "h.csv")[1:]}
        assert table["phishing"][:5] == ["2", "1", "0", "2", "5"]
        assert table["legitimate"][4] == "0"
        assert float(table["all"][5]) == pytest.approx(2 / 5)

    def test_logo_perfect_detector(self, tmp_path, pages):
        from cloudphish.corpus import load_annotations

        anns, _ = load_annotations(pages.parent / "annotations.csv")
        dets = tmp_path / "d.jsonl"
        with dets.open("w") as fh:
            for a in anns:
                b = a.box
                fh.write(json.dumps({"image_id": a.image_id, "brand": a.brand, "prob": 1.0, "box": [b.cx, b.cy, b.w, b.h]}) + "\n")
        out = tmp_path / "ev"
        assert main(["eval", "logo", "--detections", str(dets), "--pages", str(pages), "--out-dir", str(out)]) == EXIT_OK
        aucs = {r[0]: float(r[1]) for r in rows_of(out / "auc.csv")[1:]}
        assert aucs == {"bt": 1.0, "dhl": 1.0, "google": 1.0}
        assert rows_of(out / "pr.csv")[0] == ["brand", "threshold", "precision", "recall"]


class TestCombineAndReport:
    def _signals(self, tmp_path):
        p = tmp_path / "signals.jsonl"
        urls = [u for _, _, u in RUNNING_EXAMPLES]
        p.write_text("".join(json.dumps(r) + "\n" for r in signal_records(urls)))
        return p

    def test_combine_reproduces_verdicts(self, tmp_path):
        out = tmp_path / "run" / "verdicts.jsonl"
        out.parent.mkdir()
        assert main(["combine", "--signals", str(self._signals(tmp_path)), "--out", str(out)]) == EXIT_OK
        _, body, _ = split_header(out.read_text())
        verdicts = [Verdict.from_dict(json.loads(l)) for l in body.splitlines()]
        assert [v.confidence for v in verdicts] == [r[5] for r in ROWS]
        assert verdicts[4].cross_brand.rank == 147

    def test_combine_stdout(self, tmp_path, capsys):
        assert main(["combine", "--signals", str(self._signals(tmp_path))]) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert [json.loads(l)["confidence"] for l in lines] == [r[5] for r in ROWS]

    def test_report_counts(self, tmp_path):
        run = tmp_path / "run"
        run.mkdir()
        assert main(["combine", "--signals", str(self._signals(tmp_path)), "--out", str(run / "v.jsonl")]) == EXIT_OK
        assert main(["report", "--run-dir", str(run)]) == EXIT_OK
        _, body, _ = split_header((run / "summary.json").read_text())
        summary = json.loads(body)
        assert summary["confidence"] == {"high": 1, "medium": 2, "low": 2, "none": 0}
        table = {r[0]: r[1:] for r in rows_of(run / "summary.csv")[1:]}
        assert table["TOTAL"] == ["1", "2", "2", "0", "5"]
        assert table["bt"] == ["1", "1", "0", "0", "2"]

    def test_report_empty_verdict_file(self, tmp_path):
        run = tmp_path / "run"
        run.mkdir()
        (run / "v.jsonl").write_text("")
        assert main(["report", "--run-dir", str(run)]) == EXIT_OK
        table = {r[0]: r[1:] for r in rows_of(run / "summary.csv")[1:]}
        assert table["TOTAL"] == ["0", "0", "0", "0", "0"]

    def test_detect_with_url_only(self, tmp_path, urls, capsys):
        model = tmp_path / "m.bin"
        assert main(["train", "url", "--data", str(urls), "--epochs", "0", "--out", str(model)]) == EXIT_OK
        capsys.readouterr()
        assert main(["detect", "--url", RUNNING_EXAMPLES[2][2], "--url-model", str(model)]) == EXIT_OK
        v = json.loads(capsys.readouterr().out)
        assert v["votes"]["logo"]["vote"] is False and v["notes"]
