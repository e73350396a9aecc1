"""Command-line entry point: ``cloudphish <command> [<target>] [options]``.

Options come from built-in defaults, then a JSON ``--config`` file, then
flags given on the command line. Every text output starts with a
``# cloudphish-run`` line recording the resolved options and input
checksums; rerunning the same command with those options reproduces the
file byte for byte.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 data
contract or archive error, 5 numeric divergence, 1 anything else. A
detection result is never reported through the exit code.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import NonFiniteError
from .combiner import GRADES, ModelSignals, Thresholds, Verdict, combine, signals_from_dict
from .corpus.datasets import DataContractError, DatasetIOError, load_annotations, load_manifest, load_url_dataset
from .corpus.files import atomic_write_bytes, atomic_write_text, format_header, split_header
from .corpus.images import load_image, preprocess
from .corpus.synth import DEFAULT_BRANDS, synth_pages, synth_urls, write_pages
from .corpus.datasets import save_url_dataset
from .corpus.weights import WeightArchiveError, archive_checksum, encode_archive, load_weights

log = logging.getLogger("cloudphish")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DATA = 4
EXIT_DIVERGED = 5


class ConfigError(ValueError):
    pass


# Option roles: "in" files are checksummed into the header, "out" paths are
# left out of it (they do not affect the content).
IN, OUT, VALUE = "in", "out", "value"


def _opt(parser, name, role=VALUE, **kw):
    dest = name.lstrip("-").replace("-", "_")
    parser.add_argument(name, dest=dest, default=None, **kw)
    parser.set_defaults(**{f"_role_{dest}": role})
    return dest


# ---------------------------------------------------------------------------
# option resolution and output helpers


COMMAND_DEFAULTS = {
    "synth urls": {"n_per_class": 2000, "seed": 7},
    "synth pages": {"brands": ",".join(DEFAULT_BRANDS[:5]), "pages_per_brand": 20, "seed": 7, "size": 64},
    "train url": {"variant": "new-3", "epochs": None, "seed": 7, "batch_size": 32, "learning_rate": 0.001, "max_len": 256,
                  "validation_split": 0.25},
    "train sim": {"epochs": 10, "seed": 7, "steps_per_epoch": 10, "batch_size": 16, "margin": 2.2, "learning_rate": 0.001,
                  "validation_split": 0.25, "strategy": "uniform", "sim_threshold": 8.0},
    "train logo": {"brands": None, "frozen_steps": 200, "full_steps": 100, "seed": 7, "learning_rate": 0.003,
                   "batch_size": 16},
    "eval url": {"url_threshold": 0.5},
    "eval sim": {"ks": "1,5,10"},
    "eval logo": {"logo_threshold": 0.25, "nms_iou": 0.45},
    "gallery build": {},
    "detect": {"url_threshold": 0.5, "logo_threshold": 0.25, "sim_threshold": None},
    "combine": {"url_threshold": 0.5, "logo_threshold": 0.25, "sim_threshold": 8.0},
    "report": {},
}


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and explicit flags into one dict."""
    roles = {k[len("_role_"):]: v for k, v in vars(args).items() if k.startswith("_role_")}
    cfg = {k: None for k in roles}
    cfg.update(COMMAND_DEFAULTS.get(args.command, {}))
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as e:
            raise DatasetIOError(f"cannot read config {args.config}: {e}") from e
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {args.config} is not valid JSON: {e}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        # either a flat option map or one section per command
        section = data.get(args.command, {}) if args.command in data else data
        for k, v in section.items():
            key = k.replace("-", "_")
            if key not in roles:
                raise ConfigError(f"config key {k!r} is not an option of '{args.command}'")
            cfg[key] = v
    for k in roles:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    cfg["_roles"] = roles
    return cfg


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_record(command: str, cfg: dict, extra_inputs: dict | None = None) -> dict:
    roles = cfg["_roles"]
    options = {k: v for k, v in sorted(cfg.items()) if k != "_roles" and roles.get(k) != OUT}
    inputs = {}
    for k, role in sorted(roles.items()):
        if role == IN and cfg.get(k):
            p = Path(cfg[k])
            if p.is_file():
                inputs[str(cfg[k])] = _sha256(p)
    inputs.update(extra_inputs or {})
    return {"tool": "cloudphish", "version": __version__, "command": command, "options": options, "inputs": inputs}


def _require(cfg: dict, *keys):
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _csv_text(header: str, rows) -> str:
    buf = io.StringIO()
    buf.write(header)
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _brands(value) -> list[str]:
    if value is None:
        return []
    items = value if isinstance(value, list) else str(value).split(",")
    return [b.strip() for b in items if b.strip()]


def _load_pages(manifest_path, size: int):
    """(images, ids, brands, manifest dir) for the screenshot records of a manifest."""
    records = [r for r in load_manifest(manifest_path) if r.kind == "screenshot"]
    if not records:
        raise DataContractError(f"{manifest_path} lists no screenshots")
    imgs = np.stack([preprocess(load_image(r.payload), size) for r in records])
    return imgs, [r.id for r in records], [r.brand or "" for r in records], Path(manifest_path).parent


def _load_truth(annotation_path, ids):
    from .logo.evaluation import GroundTruth

    anns, _ = load_annotations(annotation_path)
    by_id: dict[str, list] = {}
    for a in anns:
        by_id.setdefault(a.image_id, []).append(GroundTruth(a.brand, a.box))
    return [by_id.get(i, []) for i in ids]


def _pages_checksums(cfg: dict, key: str = "pages") -> dict:
    """Checksums of a pages manifest's screenshots and sibling annotations."""
    out = {}
    if not cfg.get(key):
        return out
    man = Path(cfg[key])
    for r in load_manifest(man):
        if r.kind == "screenshot":
            out[str(Path(r.payload).relative_to(man.parent))] = _sha256(r.payload)
    ann = man.parent / "annotations.csv"
    if ann.is_file():
        out[str(ann)] = _sha256(ann)
    return out


def _save_archive(model, path, record: dict) -> str:
    """Archive with the run record embedded in its header extras."""
    cfg, extras, arrays = model.archive_state()

    class _WithRun:
        kind = model.kind

        def archive_state(self):
            return cfg, {**extras, "run": record}, arrays

    data = encode_archive(_WithRun())
    atomic_write_bytes(path, data)
    return hashlib.sha256(data).hexdigest()


def _load_model(path, kind):
    if not path:
        return None
    if not Path(path).is_file():
        raise DatasetIOError(f"archive not found: {path}")
    return load_weights(path, kind)


# ---------------------------------------------------------------------------
# commands


def cmd_synth_urls(cfg):
    _require(cfg, "out")
    samples = synth_urls(int(cfg["n_per_class"]), int(cfg["seed"]))
    save_url_dataset(samples, cfg["out"], header=format_header(run_record("synth urls", cfg)))
    print(f"wrote {len(samples)} urls to {cfg['out']}")


def cmd_synth_pages(cfg):
    _require(cfg, "out_dir")
    pages = synth_pages(_brands(cfg["brands"]), int(cfg["pages_per_brand"]), int(cfg["seed"]), int(cfg["size"]))
    write_pages(pages, cfg["out_dir"], header=format_header(run_record("synth pages", cfg)))
    print(f"wrote {len(pages)} pages to {cfg['out_dir']}")


def cmd_train_url(cfg):
    from .url_model import UrlModelConfig, train_url_model

    _require(cfg, "data", "out")
    ds = load_url_dataset(cfg["data"])
    overrides = {k: cfg[k] for k in ("batch_size", "learning_rate", "max_len", "validation_split")}
    if cfg.get("epochs") is not None:
        overrides["epochs"] = int(cfg["epochs"])
    try:
        mcfg = UrlModelConfig.for_variant(cfg["variant"], **overrides)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    result = train_url_model(ds.samples, mcfg, int(cfg["seed"]))
    record = run_record("train url", cfg)
    digest = _save_archive(result.model, cfg["out"], record)
    rows = [["epoch", "split", "loss", "accuracy"]]
    rows += [[r.epoch, r.split, repr(r.loss), repr(r.accuracy)] for r in result.history]
    rows += [["#rejects", len(ds.rejects), "#duplicates", ds.duplicates]]
    atomic_write_text(cfg.get("log") or cfg["out"] + ".log.csv", _csv_text(format_header({**record, "archive_sha256": digest}), rows))
    print(f"wrote {cfg['out']}")


def cmd_train_sim(cfg):
    from .corpus.datasets import SplitSpec, split
    from .similarity import SimilarityConfig, SimilarityModel, build_gallery, calibrate_threshold, top_k_accuracy, train_similarity

    _require(cfg, "pages", "out")
    scfg = SimilarityConfig(
        margin=float(cfg["margin"]), learning_rate=float(cfg["learning_rate"]), batch_size=int(cfg["batch_size"]),
        steps_per_epoch=int(cfg["steps_per_epoch"]), strategy=cfg["strategy"],
        distance_threshold=float(cfg["sim_threshold"]),
    )
    imgs, ids, brands, _ = _load_pages(cfg["pages"], scfg.input_size)
    idx = list(range(len(ids)))
    train_idx, val_idx = split(idx, SplitSpec(float(cfg["validation_split"]), int(cfg["seed"])), strata=lambda i: brands[i])
    model = SimilarityModel(scfg, rng=int(cfg["seed"]))
    tlog = train_similarity(model, imgs[train_idx], [ids[i] for i in train_idx], [brands[i] for i in train_idx],
                            int(cfg["epochs"]), int(cfg["seed"]))
    model.gallery = build_gallery(model, imgs[train_idx], [ids[i] for i in train_idx], [brands[i] for i in train_idx])
    rows = [["epoch", "loss"]] + [[e + 1, repr(v)] for e, v in enumerate(tlog.epoch_losses)]
    if val_idx:
        vb = [brands[i] for i in val_idx]
        acc = top_k_accuracy(model, model.gallery, imgs[val_idx], vb)
        scfg.calibrated_threshold = calibrate_threshold(model, model.gallery, imgs[val_idx], vb)
        rows += [[f"top{k}", repr(v)] for k, v in acc.items()]
        rows += [["calibrated_threshold", repr(scfg.calibrated_threshold)]]
    record = run_record("train sim", cfg, _pages_checksums(cfg))
    digest = _save_archive(model, cfg["out"], record)
    atomic_write_text(cfg.get("log") or cfg["out"] + ".log.csv", _csv_text(format_header({**record, "archive_sha256": digest}), rows))
    print(f"wrote {cfg['out']}")


def cmd_train_logo(cfg):
    from .logo.detector import LogoConfig, LogoDetector, head_surgery, train_logo

    _require(cfg, "pages", "out")
    base = _load_model(cfg.get("init"), "logo")
    brands = _brands(cfg.get("brands"))
    if base is None:
        if not brands:
            raise ConfigError("--brands is required when training from scratch")
        model = LogoDetector(LogoConfig(brands=brands, learning_rate=float(cfg["learning_rate"]),
                                        batch_size=int(cfg["batch_size"])), rng=int(cfg["seed"]))
    elif brands and brands != base.brands:
        try:
            model = head_surgery(base, brands, rng=int(cfg["seed"]))
        except ValueError as e:
            raise ConfigError(str(e)) from None
    else:
        model = base
    imgs, ids, _, root = _load_pages(cfg["pages"], model.config.input_size)
    truths = _load_truth(cfg.get("annotations") or root / "annotations.csv", ids)
    # logos of brands the detector does not know are treated as background
    known = set(model.brands)
    truths = [[t for t in ts if t.brand in known] for ts in truths]
    if not any(truths):
        raise DataContractError("no annotation matches the detector's brands")
    schedule = []
    if base is not None and int(cfg["frozen_steps"]):
        schedule.append(("frozen-backbone", int(cfg["frozen_steps"])))
    schedule.append(("full", int(cfg["full_steps"])))
    tlog = train_logo(model, imgs, truths, schedule, int(cfg["seed"]), learning_rate=float(cfg["learning_rate"]))
    extra = _pages_checksums(cfg)
    if cfg.get("init"):
        extra[str(cfg["init"])] = archive_checksum(cfg["init"])
    record = run_record("train logo", cfg, extra)
    digest = _save_archive(model, cfg["out"], record)
    rows = [["step", "phase", "loss"]] + [[i + 1, p, repr(l)] for i, (p, l) in enumerate(zip(tlog.phases, tlog.losses))]
    atomic_write_text(cfg.get("log") or cfg["out"] + ".log.csv", _csv_text(format_header({**record, "archive_sha256": digest}), rows))
    print(f"wrote {cfg['out']}")


def _read_scores(path) -> list[tuple[float, str]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise DatasetIOError(f"cannot read scores {path}: {e}") from e
    _, body, _ = split_header(text)
    rows = list(csv.DictReader(body.splitlines()))
    if rows and ("score" not in rows[0] or "label" not in rows[0]):
        raise DataContractError(f"{path}: expected score,label columns")
    try:
        return [(float(r["score"]), r["label"]) for r in rows]
    except ValueError as e:
        raise DataContractError(f"{path}: {e}") from None


def cmd_eval_url(cfg):
    from .corpus.datasets import normalize_label
    from .url_model import bin_scores, score_urls

    _require(cfg, "out")
    if cfg.get("scores"):
        pairs = [(s, normalize_label(l)) for s, l in _read_scores(cfg["scores"])]
        extra = {}
    else:
        _require(cfg, "model", "data")
        model = _load_model(cfg["model"], "url")
        ds = load_url_dataset(cfg["data"])
        sc = score_urls(model, [s.url for s in ds.samples])
        pairs = list(zip(sc.tolist(), [s.label for s in ds.samples]))
        extra = {str(cfg["model"]): archive_checksum(cfg["model"])}
    th = float(cfg["url_threshold"])
    rows = [["class", "[0,0.25)", "[0.25,0.5)", "[0.5,0.75)", "[0.75,1]", "total", "accuracy"]]
    for label in ("phishing", "legitimate", "all"):
        s = [p for p, l in pairs if label == "all" or l == label]
        h = bin_scores(s)
        correct = sum((p > th) == (l == "phishing") for p, l in pairs if label == "all" or l == label)
        rows.append([label, *h.counts, h.total, repr(correct / h.total) if h.total else ""])
    atomic_write_text(cfg["out"], _csv_text(format_header(run_record("eval url", cfg, extra)), rows))
    print(f"wrote {cfg['out']}")


def cmd_eval_sim(cfg):
    from .similarity import top_k_accuracy

    _require(cfg, "model", "pages", "out")
    model = _load_model(cfg["model"], "similarity")
    if model.gallery is None:
        raise DataContractError(f"{cfg['model']} carries no gallery; run 'gallery build' first")
    imgs, _, brands, _ = _load_pages(cfg["pages"], model.config.input_size)
    ks = tuple(int(k) for k in str(cfg["ks"]).split(","))
    acc = top_k_accuracy(model, model.gallery, imgs, brands, ks)
    rows = [["k", "accuracy"]] + [[k, repr(v)] for k, v in acc.items()]
    extra = {str(cfg["model"]): archive_checksum(cfg["model"]), **_pages_checksums(cfg)}
    atomic_write_text(cfg["out"], _csv_text(format_header(run_record("eval sim", cfg, extra)), rows))
    print(f"wrote {cfg['out']}")


def _read_detections(path):
    from .logo.decode import Detection
    from .logo.geometry import BoundingBox

    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise DatasetIOError(f"cannot read detections {path}: {e}") from e
    _, body, _ = split_header(text)
    out: dict[str, list] = {}
    for n, line in enumerate(body.splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            out.setdefault(d["image_id"], []).append(Detection(BoundingBox(*d["box"]), d["brand"], float(d["prob"])))
        except (ValueError, KeyError, TypeError) as e:
            raise DataContractError(f"{path} record {n}: {e}") from None
    return out


def cmd_eval_logo(cfg):
    from .logo.evaluation import auc_delta, auc_report, evaluate_images, write_auc_csv, write_pr_csv

    _require(cfg, "pages", "out_dir")
    root = Path(cfg["pages"]).parent
    ids = [r.id for r in load_manifest(cfg["pages"]) if r.kind == "screenshot"]
    truths = _load_truth(cfg.get("annotations") or root / "annotations.csv", ids)
    extra = _pages_checksums(cfg)

    def report_for(archive):
        if archive is None:
            dets = _read_detections(cfg["detections"])
            per_image = [dets.get(i, []) for i in ids]
        else:
            model = _load_model(archive, "logo")
            imgs, _, _, _ = _load_pages(cfg["pages"], model.config.input_size)
            per_image = model.detect(imgs, float(cfg["logo_threshold"]), float(cfg["nms_iou"]), image_ids=ids)
            extra[str(archive)] = archive_checksum(archive)
        return auc_report(evaluate_images(per_image, truths))

    if cfg.get("detections"):
        report = report_for(None)
    else:
        _require(cfg, "model")
        report = report_for(cfg["model"])
    delta = report_for(cfg["baseline"]) if cfg.get("baseline") else None
    d = auc_delta(report, delta) if delta is not None else None
    header = format_header(run_record("eval logo", cfg, extra))
    out = Path(cfg["out_dir"])
    buf = io.StringIO()
    buf.write(header)
    write_pr_csv(report, buf)
    atomic_write_text(out / "pr.csv", buf.getvalue())
    buf = io.StringIO()
    buf.write(header)
    write_auc_csv(report, buf, d)
    atomic_write_text(out / "auc.csv", buf.getvalue())
    if d is not None:
        s = d.summary()
        rows = [["metric", "value"]] + [[k, json.dumps(v)] for k, v in s.items()]
        atomic_write_text(out / "auc_delta.csv", _csv_text(header, rows))
    print(f"mean AUC {report.mean_auc:.4f}; wrote {out}")


def cmd_gallery_build(cfg):
    from .similarity import build_gallery

    _require(cfg, "model", "pages", "out")
    model = _load_model(cfg["model"], "similarity")
    imgs, ids, brands, _ = _load_pages(cfg["pages"], model.config.input_size)
    model.gallery = build_gallery(model, imgs, ids, brands)
    extra = {str(cfg["model"]): archive_checksum(cfg["model"]), **_pages_checksums(cfg)}
    _save_archive(model, cfg["out"], run_record("gallery build", cfg, extra))
    print(f"gallery of {len(ids)} pages written to {cfg['out']}")


def cmd_detect(cfg):
    from .similarity import brand_distance, embed_page, rank_gallery
    from .url_model import score_url

    _require(cfg, "url", "url_model")
    url_model = _load_model(cfg["url_model"], "url")
    sim = _load_model(cfg.get("sim_model"), "similarity")
    logo = _load_model(cfg.get("logo_model"), "logo")
    notes = []
    dets, matches, lookup = [], [], None
    sim_th = cfg.get("sim_threshold")
    if sim is not None and sim_th is None:
        sim_th = sim.config.threshold
    if cfg.get("screenshot"):
        img = load_image(cfg["screenshot"])
        if logo is not None:
            dets = logo.detect(preprocess(img, logo.config.input_size)[None], 0.0)[0]
        else:
            notes.append("no logo model: logo vote is neutral")
        if sim is not None:
            if sim.gallery is None:
                raise DataContractError(f"{cfg['sim_model']} carries no gallery")
            emb = embed_page(sim, preprocess(img, sim.config.input_size))
            matches = rank_gallery(emb, sim.gallery, min(10, len(sim.gallery)))

            def lookup(brand, emb=emb):
                return brand_distance(emb, sim.gallery, brand)
        else:
            notes.append("no similarity model: similarity vote is neutral")
    else:
        notes.append("no screenshot: logo and similarity votes are neutral")
    signals = ModelSignals(cfg["url"], score_url(url_model, cfg["url"]), dets, matches, lookup, notes)
    th = Thresholds(float(cfg["url_threshold"]), float(cfg["logo_threshold"]), float(sim_th if sim_th is not None else 8.0))
    verdict = combine(signals, th)
    text = verdict.to_json() + "\n"
    if cfg.get("out"):
        extra = {str(cfg[k]): archive_checksum(cfg[k]) for k in ("url_model", "sim_model", "logo_model") if cfg.get(k)}
        atomic_write_text(cfg["out"], format_header(run_record("detect", cfg, extra)) + text)
    else:
        sys.stdout.write(text)


def cmd_combine(cfg):
    _require(cfg, "signals")
    try:
        text = Path(cfg["signals"]).read_text(encoding="utf-8")
    except OSError as e:
        raise DatasetIOError(f"cannot read signals {cfg['signals']}: {e}") from e
    _, body, _ = split_header(text)
    th = Thresholds(float(cfg["url_threshold"]), float(cfg["logo_threshold"]), float(cfg["sim_threshold"]))
    lines = []
    for n, line in enumerate(body.splitlines(), 1):
        if not line.strip():
            continue
        try:
            sig = signals_from_dict(json.loads(line))
        except (ValueError, KeyError, TypeError) as e:
            raise DataContractError(f"{cfg['signals']} record {n}: {e}") from None
        lines.append(combine(sig, th).to_json() + "\n")
    if cfg.get("out"):
        atomic_write_text(cfg["out"], format_header(run_record("combine", cfg)) + "".join(lines))
    else:
        sys.stdout.write("".join(lines))


def _read_verdicts(path) -> list[Verdict]:
    _, body, _ = split_header(Path(path).read_text(encoding="utf-8"))
    out = []
    for n, line in enumerate(body.splitlines(), 1):
        if line.strip():
            try:
                out.append(Verdict.from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as e:
                raise DataContractError(f"{path} record {n}: {e}") from None
    return out


def cmd_report(cfg):
    _require(cfg, "run_dir")
    run = Path(cfg["run_dir"])
    if not run.is_dir():
        raise DatasetIOError(f"run directory not found: {run}")
    files = sorted(p for p in run.glob("*.jsonl"))
    if not files:
        raise DataContractError(f"{run} holds no verdict files (*.jsonl)")
    verdicts = [v for f in files for v in _read_verdicts(f)]
    grades = {g: 0 for g in reversed(GRADES)}
    per_brand: dict[str, dict[str, int]] = {}
    for v in verdicts:
        grades[v.confidence] += 1
        row = per_brand.setdefault(v.brand or "", {g: 0 for g in reversed(GRADES)})
        row[v.confidence] += 1
    header = format_header(run_record("report", cfg, {str(f.relative_to(run)): _sha256(f) for f in files}))
    cols = list(reversed(GRADES))
    rows = [["brand", *cols, "total"]]
    for b in sorted(per_brand):
        rows.append([b or "(none)", *[per_brand[b][g] for g in cols], sum(per_brand[b].values())])
    rows.append(["TOTAL", *[grades[g] for g in cols], len(verdicts)])
    out = Path(cfg.get("out_dir") or run)
    atomic_write_text(out / "summary.csv", _csv_text(header, rows))
    summary = {"verdicts": len(verdicts), "phishing": sum(v.is_phishing for v in verdicts), "confidence": grades}
    atomic_write_text(out / "summary.json", header + json.dumps(summary, sort_keys=True, indent=2) + "\n")
    print(json.dumps(summary, sort_keys=True))


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cloudphish", description="Cloud-hosted phishing detection toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    top = p.add_subparsers(dest="group", required=True)

    def leaf(sub, name, func, help_):
        q = sub.add_parser(name, help=help_)
        q.add_argument("--config", default=None, help="JSON file of option values")
        q.set_defaults(func=func)
        return q

    # synth
    g = top.add_parser("synth", help="generate synthetic corpora").add_subparsers(dest="target", required=True)
    q = leaf(g, "urls", cmd_synth_urls, "synthetic URL dataset")
    _opt(q, "--n-per-class", type=int)
    _opt(q, "--seed", type=int)
    _opt(q, "--out", OUT)
    q = leaf(g, "pages", cmd_synth_pages, "synthetic brand screenshots with logo annotations")
    _opt(q, "--brands", help="comma-separated brand names")
    _opt(q, "--pages-per-brand", type=int)
    _opt(q, "--seed", type=int)
    _opt(q, "--size", type=int)
    _opt(q, "--out-dir", OUT)

    # train
    g = top.add_parser("train", help="train a model").add_subparsers(dest="target", required=True)
    q = leaf(g, "url", cmd_train_url, "character-level URL classifier")
    _opt(q, "--data", IN)
    _opt(q, "--variant", choices=["original", "new-1", "new-2", "new-3"])
    _opt(q, "--epochs", type=int)
    _opt(q, "--seed", type=int)
    _opt(q, "--batch-size", type=int)
    _opt(q, "--learning-rate", type=float)
    _opt(q, "--max-len", type=int)
    _opt(q, "--validation-split", type=float)
    _opt(q, "--out", OUT)
    _opt(q, "--log", OUT)
    q = leaf(g, "sim", cmd_train_sim, "triplet page-similarity model and gallery")
    _opt(q, "--pages", IN, help="pages manifest.csv")
    for name, t in (("--epochs", int), ("--seed", int), ("--steps-per-epoch", int), ("--batch-size", int),
                    ("--margin", float), ("--learning-rate", float), ("--validation-split", float),
                    ("--sim-threshold", float)):
        _opt(q, name, type=t)
    _opt(q, "--strategy", choices=["uniform", "hard-negative"])
    _opt(q, "--out", OUT)
    _opt(q, "--log", OUT)
    q = leaf(g, "logo", cmd_train_logo, "logo detector, optionally from a pretrained archive")
    _opt(q, "--pages", IN)
    _opt(q, "--annotations", IN)
    _opt(q, "--init", IN, help="pretrained logo archive; new brands trigger head surgery")
    _opt(q, "--brands", help="comma-separated brand list (existing brands first)")
    for name, t in (("--frozen-steps", int), ("--full-steps", int), ("--seed", int), ("--learning-rate", float),
                    ("--batch-size", int)):
        _opt(q, name, type=t)
    _opt(q, "--out", OUT)
    _opt(q, "--log", OUT)

    # eval
    g = top.add_parser("eval", help="evaluate a model").add_subparsers(dest="target", required=True)
    q = leaf(g, "url", cmd_eval_url, "four-bin score histograms per class")
    _opt(q, "--model", IN)
    _opt(q, "--data", IN)
    _opt(q, "--scores", IN, help="score,label CSV instead of model + data")
    _opt(q, "--url-threshold", type=float)
    _opt(q, "--out", OUT)
    q = leaf(g, "sim", cmd_eval_sim, "top-k brand accuracy against the stored gallery")
    _opt(q, "--model", IN)
    _opt(q, "--pages", IN)
    _opt(q, "--ks")
    _opt(q, "--out", OUT)
    q = leaf(g, "logo", cmd_eval_logo, "per-brand PR curves, AUC and AUC deltas")
    _opt(q, "--model", IN)
    _opt(q, "--baseline", IN, help="second archive; adds an AUC-delta table")
    _opt(q, "--detections", IN, help="JSONL detections instead of a model")
    _opt(q, "--pages", IN)
    _opt(q, "--annotations", IN)
    _opt(q, "--logo-threshold", type=float)
    _opt(q, "--nms-iou", type=float)
    _opt(q, "--out-dir", OUT)

    g = top.add_parser("gallery", help="brand gallery tools").add_subparsers(dest="target", required=True)
    q = leaf(g, "build", cmd_gallery_build, "embed known pages into a similarity archive's gallery")
    _opt(q, "--model", IN)
    _opt(q, "--pages", IN)
    _opt(q, "--out", OUT)

    sub = top
    q = leaf(sub, "detect", cmd_detect, "score one URL (and optional screenshot) end to end")
    _opt(q, "--url")
    _opt(q, "--screenshot", IN)
    _opt(q, "--url-model", IN)
    _opt(q, "--sim-model", IN)
    _opt(q, "--logo-model", IN)
    for name in ("--url-threshold", "--logo-threshold", "--sim-threshold"):
        _opt(q, name, type=float)
    _opt(q, "--out", OUT)
    q = leaf(sub, "combine", cmd_combine, "verdicts from a JSONL file of recorded model signals")
    _opt(q, "--signals", IN)
    for name in ("--url-threshold", "--logo-threshold", "--sim-threshold"):
        _opt(q, name, type=float)
    _opt(q, "--out", OUT)
    q = leaf(sub, "report", cmd_report, "summarize the verdict files of a run directory")
    _opt(q, "--run-dir", VALUE)
    _opt(q, "--out-dir", OUT)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0) if e.code in (0, None) else EXIT_CONFIG
    args.command = " ".join(x for x in (args.group, getattr(args, "target", None)) if x)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve(args)
        args.func(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetIOError, FileNotFoundError, PermissionError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except NonFiniteError as e:
        print(f"numeric divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataContractError, WeightArchiveError, KeyError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
