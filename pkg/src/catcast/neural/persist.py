"""Model artifacts: a JSON header line followed by little-endian float64 parameters.

Layout::

    CATCAST-MODEL\\n
    {header json}\\n
    <payload>

The header lists the schema with full vocabularies, layer specs, parameter
names/shapes, training provenance and a SHA-256 digest of the payload.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from catcast import __version__
from catcast.core import Schema
from catcast.errors import FormatError
from catcast.neural.model import LayerSpec, ModelGraph, build_model

MAGIC = b"CATCAST-MODEL\n"
FORMAT_VERSION = 1
DTYPE = np.dtype("<f8")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def save_model(model: ModelGraph, path) -> None:
    arrays = [(name, layer.params[key]) for name, layer, key in model.named_params()]
    payload = b"".join(np.ascontiguousarray(a, dtype=DTYPE).tobytes() for _, a in arrays)
    header = {
        "format_version": FORMAT_VERSION,
        "tool_version": __version__,
        "kind": "neural",
        "schema": model.schema.to_dict(),
        "inputs": list(model.inputs),
        "target": model.target,
        "stage": model.stage,
        "seed": model.seed,
        "layers": [s.to_dict() for s in model.specs],
        "params": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        "payload_bytes": len(payload),
        "checksum": "sha256:" + hashlib.sha256(payload).hexdigest(),
        "provenance": _jsonable(model.provenance),
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload)


def read_header(path) -> tuple[dict, bytes]:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read model artifact {path}: {exc}") from exc
    if not data.startswith(MAGIC):
        raise FormatError(f"{path} is not a catcast model artifact")
    end = data.find(b"\n", len(MAGIC))
    if end < 0:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[len(MAGIC):end].decode("utf-8"))
    except ValueError as exc:
        raise FormatError(f"{path}: malformed header: {exc}") from exc
    return header, data[end + 1:]


def load_model(path) -> ModelGraph:
    header, payload = read_header(path)
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version!r} (expected {FORMAT_VERSION})")
    if len(payload) != header.get("payload_bytes"):
        raise FormatError(f"{path}: payload is {len(payload)} bytes, header promises {header.get('payload_bytes')}")
    digest = "sha256:" + hashlib.sha256(payload).hexdigest()
    if digest != header.get("checksum"):
        raise FormatError(f"{path}: checksum mismatch")
    try:
        schema = Schema.from_dict(header["schema"])
        specs = [LayerSpec(**s) for s in header["layers"]]
        model = build_model(schema, header["inputs"], specs, header["target"],
                            header.get("seed", 0), header.get("stage"), init=False)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed header: {exc}") from exc
    named = model.named_params()
    if [p["name"] for p in header["params"]] != [n for n, _, _ in named]:
        raise FormatError(f"{path}: parameter list does not match the layer specs")
    offset = 0
    for entry, (name, layer, key) in zip(header["params"], named):
        shape = tuple(entry["shape"])
        if shape != layer.params[key].shape:
            raise FormatError(f"{path}: parameter {name} has shape {shape}, layers imply {layer.params[key].shape}")
        count = int(np.prod(shape))
        layer.params[key][...] = np.frombuffer(payload, dtype=DTYPE, count=count, offset=offset).reshape(shape)
        offset += count * DTYPE.itemsize
    model.provenance = header.get("provenance", {})
    return model
