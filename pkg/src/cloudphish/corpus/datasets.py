"""Dataset records, CSV loaders and deterministic stratified splits."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence, TypeVar

import numpy as np

from .files import atomic_write_text, split_header

PHISHING = "phishing"
LEGITIMATE = "legitimate"
LABELS = (PHISHING, LEGITIMATE)

# tokens accepted in label columns; anything else is a reject
_LABEL_ALIASES = {
    "phishing": PHISHING,
    "bad": PHISHING,
    "1": PHISHING,
    "legitimate": LEGITIMATE,
    "good": LEGITIMATE,
    "0": LEGITIMATE,
}

T = TypeVar("T")


class DatasetIOError(OSError):
    """A dataset file could not be read."""


class DataContractError(ValueError):
    """Input data violates a record-level contract."""


def normalize_label(token: str) -> str:
    try:
        return _LABEL_ALIASES[token.strip().lower()]
    except KeyError:
        raise DataContractError(f"unknown label token {token!r}") from None


@dataclass(frozen=True)
class UrlSample:
    url: str
    label: str
    source: str = ""
    brand: str | None = None

    def __post_init__(self):
        if not self.url:
            raise DataContractError("url must be non-empty")
        if self.label not in LABELS:
            raise DataContractError(f"label must be one of {LABELS}, got {self.label!r}")


@dataclass(frozen=True)
class Reject:
    line: int
    reason: str


@dataclass
class UrlDataset:
    samples: list[UrlSample]
    rejects: list[Reject] = field(default_factory=list)
    duplicates: int = 0

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[UrlSample]:
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]


def _open_text(path) -> tuple[str, int]:
    """File body without its leading comment lines, plus how many were skipped."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise DatasetIOError(f"cannot read dataset {os.fspath(path)}: {exc.strerror or exc}") from exc
    _, body, skipped = split_header(text)
    return body, skipped


def _write_csv(path, header: str | None, rows) -> None:
    buf = io.StringIO()
    if header:
        buf.write(header)
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def load_url_dataset(path) -> UrlDataset:
    """Read a ``url,label,source[,brand]`` CSV or a JSONL file of the same fields.

    Malformed lines end up in ``rejects`` with their 1-based line number.
    Exact-duplicate URLs after the first occurrence are dropped and counted.
    """
    text, skip = _open_text(path)
    samples: list[UrlSample] = []
    rejects: list[Reject] = []
    seen: set[str] = set()
    dupes = 0

    if str(path).endswith((".jsonl", ".ndjson")):
        rows = []
        for lineno, line in enumerate(text.splitlines(), start=1 + skip):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise ValueError("record is not an object")
            except ValueError as exc:
                rejects.append(Reject(lineno, f"invalid JSON: {exc}"))
                continue
            rows.append((lineno, rec))
    else:
        reader = csv.reader(text.splitlines())
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            return UrlDataset([], [], 0)
        if "url" not in header or "label" not in header:
            raise DataContractError(f"{path}: header must contain url and label columns, got {header}")
        rows = []
        for lineno, fields in enumerate(reader, start=2 + skip):
            if not fields or all(not f.strip() for f in fields):
                continue
            if len(fields) != len(header):
                rejects.append(Reject(lineno, f"expected {len(header)} fields, got {len(fields)}"))
                continue
            rows.append((lineno, dict(zip(header, fields))))

    for lineno, rec in rows:
        url = str(rec.get("url", "")).strip()
        if not url:
            rejects.append(Reject(lineno, "empty url"))
            continue
        try:
            label = normalize_label(str(rec.get("label", "")))
        except DataContractError as exc:
            rejects.append(Reject(lineno, str(exc)))
            continue
        if url in seen:
            dupes += 1
            continue
        seen.add(url)
        brand = rec.get("brand") or None
        samples.append(UrlSample(url, label, str(rec.get("source", "") or ""), brand))
    return UrlDataset(samples, rejects, dupes)


def save_url_dataset(samples: Sequence[UrlSample], path, header: str | None = None) -> None:
    rows = [["url", "label", "source", "brand"]]
    rows += [[s.url, s.label, s.source, s.brand or ""] for s in samples]
    _write_csv(path, header, rows)


def write_rejects(rejects: Sequence[Reject], path, header: str | None = None) -> None:
    lines = [json.dumps({"line": r.line, "reason": r.reason}) + "\n" for r in rejects]
    atomic_write_text(path, (header or "") + "".join(lines))


# ---------------------------------------------------------------------------
# annotations


@dataclass(frozen=True)
class GroundTruthAnnotation:
    """Logo box in pixel corner form, as stored on disk."""

    image_id: str
    brand: str
    xmin: float
    ymin: float
    xmax: float
    ymax: float
    img_w: int
    img_h: int

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise DataContractError(f"{self.image_id}: inverted or empty box")
        if self.xmin < 0 or self.ymin < 0 or self.xmax > self.img_w or self.ymax > self.img_h:
            raise DataContractError(f"{self.image_id}: box outside {self.img_w}x{self.img_h} image")

    @property
    def box(self):
        from ..logo.geometry import BoundingBox

        return BoundingBox.from_corners(
            self.xmin / self.img_w, self.ymin / self.img_h, self.xmax / self.img_w, self.ymax / self.img_h
        )


ANNOTATION_FIELDS = ("image_id", "brand", "xmin", "ymin", "xmax", "ymax", "img_w", "img_h")


def _num(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("non-finite coordinate")
    return int(v) if v.is_integer() else v


def load_annotations(path, strict: bool = True) -> tuple[list[GroundTruthAnnotation], list[Reject]]:
    """Load an annotation CSV. With ``strict`` any reject raises DataContractError."""
    text, skip = _open_text(path)
    reader = csv.DictReader(text.splitlines())
    missing = set(ANNOTATION_FIELDS) - set(reader.fieldnames or ())
    if missing:
        raise DataContractError(f"{path}: annotation header lacks {sorted(missing)}")
    out, rejects = [], []
    for lineno, row in enumerate(reader, start=2 + skip):
        rid = row.get("image_id", "?")
        try:
            ann = GroundTruthAnnotation(
                row["image_id"],
                row["brand"],
                _num(row["xmin"]),
                _num(row["ymin"]),
                _num(row["xmax"]),
                _num(row["ymax"]),
                int(_num(row["img_w"])),
                int(_num(row["img_h"])),
            )
        except (ValueError, TypeError) as exc:
            rejects.append(Reject(lineno, f"record {rid}: {exc}"))
            continue
        out.append(ann)
    if strict and rejects:
        raise DataContractError("; ".join(r.reason for r in rejects))
    return out, rejects


def save_annotations(annotations: Sequence[GroundTruthAnnotation], path, header: str | None = None) -> None:
    rows = [list(ANNOTATION_FIELDS)] + [[getattr(a, f) for f in ANNOTATION_FIELDS] for a in annotations]
    _write_csv(path, header, rows)


# ---------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    kind: str
    payload: str
    label: str
    brand: str | None = None
    source: str = ""


MANIFEST_FIELDS = ("id", "kind", "payload", "label", "brand", "source")


def load_manifest(path) -> list[ManifestRecord]:
    """Load a dataset manifest; screenshot payloads resolve relative to the manifest."""
    text, skip = _open_text(path)
    base = Path(path).parent
    reader = csv.DictReader(text.splitlines())
    seen: set[str] = set()
    out = []
    for lineno, row in enumerate(reader, start=2 + skip):
        rid = row.get("id", "")
        if not rid or rid in seen:
            raise DataContractError(f"line {lineno}: missing or duplicate id {rid!r}")
        seen.add(rid)
        kind = row.get("kind", "")
        if kind not in ("url", "screenshot"):
            raise DataContractError(f"line {lineno}: kind must be url or screenshot, got {kind!r}")
        label = normalize_label(row.get("label", ""))
        payload = row.get("payload", "")
        if kind == "screenshot":
            full = base / payload
            if not full.is_file():
                raise DataContractError(f"line {lineno}: screenshot payload {full} does not exist")
            payload = str(full)
        out.append(ManifestRecord(rid, kind, payload, label, row.get("brand") or None, row.get("source", "")))
    return out


def save_manifest(records: Sequence[ManifestRecord], path, relative_to=None, header: str | None = None) -> None:
    base = Path(relative_to) if relative_to else None
    rows = [list(MANIFEST_FIELDS)]
    for r in records:
        payload = r.payload
        if base is not None and r.kind == "screenshot":
            payload = os.path.relpath(payload, base)
        rows.append([r.id, r.kind, payload, r.label, r.brand or "", r.source])
    _write_csv(path, header, rows)


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitSpec:
    fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.fraction < 1.0:
            raise ValueError(f"validation fraction must be in (0, 1), got {self.fraction}")


URL_SPLIT = SplitSpec(0.25)
LOGO_SPLIT = SplitSpec(0.1)


def split(items: Sequence[T], spec: SplitSpec, strata: Callable[[T], object] | None = None) -> tuple[list[T], list[T]]:
    """Deterministic stratified partition into (train, validation).

    Validation holds exactly ``floor(n * fraction)`` items. Per-stratum
    quotas use largest-remainder rounding so class ratios track the
    global ratio. Both halves keep the input order.
    """
    n = len(items)
    if n < 2:
        raise ValueError(f"need at least 2 items to split, got {n}")
    if strata is None:
        strata = (lambda it: getattr(it, "label", None))
    n_val = math.floor(n * spec.fraction)
    groups: dict[object, list[int]] = {}
    for i, it in enumerate(items):
        groups.setdefault(strata(it), []).append(i)
    keys = sorted(groups, key=lambda k: (str(type(k)), str(k)))
    exact = {k: len(groups[k]) * n_val / n for k in keys}
    quota = {k: math.floor(exact[k]) for k in keys}
    short = n_val - sum(quota.values())
    by_rem = sorted(keys, key=lambda k: (-(exact[k] - quota[k]), keys.index(k)))
    for k in by_rem[:short]:
        quota[k] += 1
    rng = np.random.default_rng(spec.seed)
    val_idx: set[int] = set()
    for k in keys:
        idx = np.array(groups[k])
        perm = rng.permutation(len(idx))
        val_idx.update(int(j) for j in idx[perm[: quota[k]]])
    train = [it for i, it in enumerate(items) if i not in val_idx]
    val = [it for i, it in enumerate(items) if i in val_idx]
    return train, val
