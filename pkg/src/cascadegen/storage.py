"""On-disk formats.

Binary artifacts share one container layout::

    8 bytes   magic  b"CGENBIN\\0"
    8 bytes   header length L, little-endian uint64
    L bytes   UTF-8 JSON header (sorted keys); always has "format" and "version"
    rest      little-endian float64 payload

Block files keep the feature rows (row-major, brick after brick) in the
payload and the schema in the header; a JSON sidecar next to them holds
labels, sentinel masks and structural context. Model files keep the flattened
parameters in the payload in the order given by the header's ``layout``.
Readers reject any format tag they do not expect and any unknown major
version. All writes are atomic (temporary file, then rename).
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .cascade import EventRecord
from .errors import FormatVersionError, MissingArtifact
from .features import Block, FeatureBrick, FeatureSchema, NormStats
from .generator import TableSet
from .lstm import ModelParams

MAGIC = b"CGENBIN\0"
VERSION = "1.0"

BLOCK_FORMAT = "cascadegen.block"
LABELS_FORMAT = "cascadegen.labels"
MODEL_FORMAT = "cascadegen.model"
EVENTS_FORMAT = "cascadegen.events"


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, fixed separators, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def atomic_write(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    atomic_write(path, dumps(obj))


def _require(path, name):
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(name, str(path))
    return path


def read_json(path, name="json", fmt=None):
    obj = json.loads(_require(path, name).read_text(encoding="utf-8"))
    if fmt is not None:
        check_version(obj, fmt)
    return obj


def check_version(header, fmt):
    if header.get("format") != fmt:
        raise FormatVersionError(f"expected {fmt!r}, found {header.get('format')!r}")
    major = str(header.get("version", "")).split(".")[0]
    if major != VERSION.split(".")[0]:
        raise FormatVersionError(f"unsupported {fmt} version {header.get('version')!r}")


def pack(header: dict, payload) -> bytes:
    payload = np.ascontiguousarray(payload, dtype="<f8").ravel()
    head = json.dumps(dict(header, n_values=int(payload.size)), sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(head)) + head + payload.tobytes()


def unpack(data: bytes, fmt: str):
    if data[:8] != MAGIC:
        raise FormatVersionError("not a cascadegen binary file")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + n].decode("utf-8"))
    check_version(header, fmt)
    payload = np.frombuffer(data, dtype="<f8", offset=16 + n).astype(np.float64)
    if payload.size != header["n_values"]:
        raise FormatVersionError(f"payload holds {payload.size} values, header says {header['n_values']}")
    return header, payload


def read_binary(path, fmt, name):
    return unpack(_require(path, name).read_bytes(), fmt)


# --------------------------------------------------------------------------- blocks


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".labels.json")


def write_block(path, block: Block):
    schema = block.schema
    header = {
        "format": BLOCK_FORMAT,
        "version": VERSION,
        "schema": schema.to_dict(),
        "schema_digest": schema.digest(),
        "rng_seed": block.rng_seed,
        "normalization": None if block.normalization_stats is None else block.normalization_stats.to_dict(),
        "bricks": [{"cascade_id": b.cascade_id, "n_rows": b.size} for b in block.bricks],
    }
    payload = np.concatenate([b.rows.ravel() for b in block.bricks]) if block.bricks else np.zeros(0)
    labels = {
        "format": LABELS_FORMAT,
        "version": VERSION,
        "schema_digest": schema.digest(),
        "bricks": [
            {
                "cascade_id": b.cascade_id,
                "branch": b.labels_branch.tolist(),
                "speed": b.labels_speed.tolist(),
                "levels": np.asarray(b.levels).tolist(),
                "birth_orders": np.asarray(b.birth_orders).tolist(),
                # flat row-major indices of sentinel cells
                "sentinel": np.flatnonzero(b.sentinel_mask).tolist(),
            }
            for b in block.bricks
        ],
    }
    atomic_write(path, pack(header, payload))
    write_json(sidecar_path(path), labels)


def read_block(path, name="block") -> Block:
    header, payload = read_binary(path, BLOCK_FORMAT, name)
    labels = read_json(sidecar_path(path), f"{name} labels", LABELS_FORMAT)
    if labels["schema_digest"] != header["schema_digest"]:
        raise FormatVersionError("label sidecar belongs to a different block")
    schema = FeatureSchema.from_dict(header["schema"])
    width = schema.width
    bricks = []
    offset = 0
    for meta, lab in zip(header["bricks"], labels["bricks"]):
        n = meta["n_rows"]
        rows = payload[offset:offset + n * width].reshape(n, width).copy()
        offset += n * width
        mask = np.zeros(n * width, dtype=bool)
        mask[np.asarray(lab["sentinel"], dtype=np.int64)] = True
        bricks.append(FeatureBrick(meta["cascade_id"], rows, lab["branch"], lab["speed"], schema,
                                   mask.reshape(n, width), np.asarray(lab["levels"], dtype=np.int64),
                                   np.asarray(lab["birth_orders"], dtype=np.int64)))
    stats = header.get("normalization")
    return Block(bricks, None if stats is None else NormStats.from_dict(stats), header.get("rng_seed"))


# --------------------------------------------------------------------------- models


def write_model(path, model: ModelParams, schema: FeatureSchema, stats=None, hyperparameters=None,
                config_hash=None):
    header = {
        "format": MODEL_FORMAT,
        "version": VERSION,
        "task": model.task,
        "input_size": model.input_size,
        "hidden_sizes": list(model.hidden_sizes),
        "schema": schema.to_dict(),
        "schema_digest": schema.digest(),
        "normalization": None if stats is None else stats.to_dict(),
        "hyperparameters": hyperparameters or {},
        "layout": model.layout(),
        "config_hash": config_hash,
    }
    atomic_write(path, pack(header, model.flat()))


def read_model(path, name="model"):
    """``(model, header)``; parameters are restored bit for bit."""
    header, payload = read_binary(path, MODEL_FORMAT, name)
    params = {}
    offset = 0
    for key, shape in header["layout"]:
        n = int(np.prod(shape)) if shape else 1
        params[key] = payload[offset:offset + n].reshape(shape).copy()
        offset += n
    if offset != payload.size:
        raise FormatVersionError("model payload does not match its layout")
    model = ModelParams(header["input_size"], tuple(header["hidden_sizes"]), header["task"], params)
    return model, header


def model_schema(header) -> FeatureSchema:
    return FeatureSchema.from_dict(header["schema"])


def model_stats(header):
    s = header.get("normalization")
    return None if s is None else NormStats.from_dict(s)


# --------------------------------------------------------------------------- tables


def write_tables(path, tables: TableSet):
    write_json(path, tables.to_dict())


def read_tables(path, name="tables") -> TableSet:
    return TableSet.from_dict(read_json(path, name))


# --------------------------------------------------------------------------- events


def write_events(path, events):
    """Columnar event store: string columns in the header, timestamps and
    attribute values (NaN when missing) in the payload."""
    events = list(events)
    attrs = sorted({a for ev in events for a in ev.attributes})
    matrix = np.full((len(events), 1 + len(attrs)), np.nan)
    for i, ev in enumerate(events):
        matrix[i, 0] = ev.timestamp
        for j, a in enumerate(attrs, start=1):
            if a in ev.attributes:
                matrix[i, j] = ev.attributes[a]
    header = {
        "format": EVENTS_FORMAT,
        "version": VERSION,
        "attributes": attrs,
        "id": [ev.event_id for ev in events],
        "parent_id": [ev.parent_id for ev in events],
        "author": [ev.author_id for ev in events],
        "community": [ev.community for ev in events],
    }
    atomic_write(path, pack(header, matrix))


def _number(v):
    return int(v) if float(v).is_integer() else float(v)


def read_events(path, name="events") -> list:
    header, payload = read_binary(path, EVENTS_FORMAT, name)
    attrs = header["attributes"]
    matrix = payload.reshape(len(header["id"]), 1 + len(attrs))
    events = []
    for i, eid in enumerate(header["id"]):
        values = {a: float(matrix[i, j]) for j, a in enumerate(attrs, start=1) if not np.isnan(matrix[i, j])}
        events.append(EventRecord(eid, header["parent_id"][i], header["author"][i], _number(matrix[i, 0]),
                                  values, header["community"][i]))
    return events
