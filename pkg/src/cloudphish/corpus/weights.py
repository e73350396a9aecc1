"""Versioned weight archives.

Layout: one magic line ``CLOUDPHISH-WEIGHTS v<version> <header bytes>``,
then a JSON header of that many bytes, then the payload: every parameter
as little-endian float32, packed in header order at the recorded offsets.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..autodiff.tensor import ShapeError
from .datasets import DatasetIOError
from .files import atomic_write_bytes

MAGIC = b"CLOUDPHISH-WEIGHTS"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f4")


class WeightArchiveError(ValueError):
    pass


class ArchiveVersionError(WeightArchiveError):
    pass


class ArchiveIntegrityError(WeightArchiveError):
    pass


class ArchiveMismatchError(WeightArchiveError, ShapeError):
    pass


def _registry() -> dict:
    from ..logo.detector import LogoDetector
    from ..similarity import SimilarityModel
    from ..url_model import UrlModel

    return {"url": UrlModel, "similarity": SimilarityModel, "logo": LogoDetector}


def model_class(kind: str):
    reg = _registry()
    if kind not in reg:
        raise ArchiveMismatchError(f"unknown model kind {kind!r}; known kinds: {sorted(reg)}")
    return reg[kind]


def encode_archive(model) -> bytes:
    config, extras, arrays = model.archive_state()
    table, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype=np.float64)
        if not np.all(np.isfinite(a)):
            raise WeightArchiveError(f"parameter {name} has non-finite values")
        packed = a.astype(_DTYPE)
        if not np.array_equal(packed.astype(np.float64), a):
            raise WeightArchiveError(f"parameter {name} is not float32-representable; freeze() the model first")
        raw = packed.tobytes()
        table.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "model_kind": model.kind,
        "config": config,
        "extras": extras,
        "params": table,
        "payload_nbytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    first = MAGIC + f" v{FORMAT_VERSION} {len(hbytes)}\n".encode("ascii")
    return first + hbytes + payload


def save_weights(model, path) -> str:
    """Write the archive atomically; returns the sha256 of the whole file."""
    data = encode_archive(model)
    atomic_write_bytes(path, data)
    return hashlib.sha256(data).hexdigest()


def decode_archive(data: bytes) -> tuple[dict, dict]:
    """Parse and verify an archive; returns (header, arrays)."""
    nl = data.find(b"\n")
    if nl < 0 or not data.startswith(MAGIC + b" "):
        raise ArchiveIntegrityError("not a weight archive (bad magic line)")
    parts = data[:nl].split(b" ")
    if len(parts) != 3 or not parts[1].startswith(b"v"):
        raise ArchiveIntegrityError("malformed magic line")
    try:
        version, hlen = int(parts[1][1:]), int(parts[2])
    except ValueError:
        raise ArchiveIntegrityError("malformed magic line") from None
    if version != FORMAT_VERSION:
        raise ArchiveVersionError(f"archive format v{version}; this build reads v{FORMAT_VERSION}")
    start = nl + 1
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ArchiveIntegrityError(f"unreadable header: {e}") from None
    if header.get("format_version") != version:
        raise ArchiveVersionError("header and magic line disagree on the format version")
    payload = data[start + hlen:]
    if len(payload) != header["payload_nbytes"]:
        raise ArchiveIntegrityError(f"payload is {len(payload)} bytes, header says {header['payload_nbytes']}")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise ArchiveIntegrityError("payload checksum mismatch")
    arrays, end = {}, 0
    for p in header["params"]:
        shape = tuple(p["shape"])
        n = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize
        if p["nbytes"] != n or p["offset"] != end:
            raise ArchiveIntegrityError(f"parameter table entry for {p['name']} is inconsistent")
        if p["name"] in arrays:
            raise ArchiveIntegrityError(f"parameter {p['name']} appears twice")
        arrays[p["name"]] = np.frombuffer(payload, _DTYPE, n // _DTYPE.itemsize, p["offset"]).reshape(shape).astype(np.float64)
        end += n
    if end != len(payload):
        raise ArchiveIntegrityError("payload has bytes not covered by the parameter table")
    return header, arrays


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise DatasetIOError(f"cannot read weight archive {path}: {e}") from e


def _check_shapes(expected: dict, arrays: dict, what: str) -> None:
    if set(expected) != set(arrays):
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        raise ArchiveMismatchError(f"{what}: missing parameters {missing}, unexpected {extra}")
    for name, shape in expected.items():
        if tuple(arrays[name].shape) != tuple(shape):
            raise ArchiveMismatchError(f"{what}: {name} has shape {arrays[name].shape}, expected {tuple(shape)}")


def load_weights(path, kind: str | None = None):
    """Rebuild a model from an archive, verifying everything before building it."""
    header, arrays = decode_archive(_read(path))
    if kind is not None and header["model_kind"] != kind:
        raise ArchiveMismatchError(f"archive holds a {header['model_kind']!r} model, expected {kind!r}")
    cls = model_class(header["model_kind"])
    try:
        expected = cls.param_shapes(header["config"], header["extras"])
    except (TypeError, KeyError, ValueError) as e:
        raise ArchiveMismatchError(f"archive config does not describe a valid {header['model_kind']} model: {e}") from None
    _check_shapes(expected, arrays, str(path))
    return cls.from_archive(header["config"], header["extras"], arrays)


def load_into(model, path) -> None:
    """Overwrite ``model``'s parameters from an archive of the same architecture.

    Nothing is modified unless every parameter matches by name and shape.
    """
    header, arrays = decode_archive(_read(path))
    arrays = {k: v for k, v in arrays.items() if not k.startswith("gallery.")}
    expected = {k: t.data.shape for k, t in model.params.items()}
    _check_shapes(expected, arrays, f"{header['model_kind']} archive into {model.kind} model")
    for k, t in model.params.items():
        t.data = arrays[k].copy()
        t.grad = None


def archive_checksum(path) -> str:
    return hashlib.sha256(_read(path)).hexdigest()
