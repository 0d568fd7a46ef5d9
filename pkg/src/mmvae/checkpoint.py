"""Versioned checkpoint container.

Layout: magic ``MMVC``, little-endian uint32 schema version, uint64 header
length, a UTF-8 JSON header, then every parameter as little-endian float64
in header order.  The header lists each stored model's constructor config
and parameter names/shapes, plus free-form metadata (config hashes, the
normalization digest and the sidecar it came from).
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .baselines import Regressor, VanillaVAE
from .errors import FormatError
from .model import MMVAE

MAGIC = b"MMVC"
SCHEMA_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
KINDS = {cls.kind: cls for cls in (MMVAE, VanillaVAE, Regressor)}


def save_checkpoint(path, models, meta=None):
    """Write one model or a ``{name: model}`` map to ``path``."""
    if not isinstance(models, dict):
        models = {"model": models}
    entries, blobs = [], []
    for name, model in models.items():
        params = model.named_parameters()
        entries.append({"name": name, "config": model.config(),
                        "params": [[pname, list(p.value.shape)] for pname, p in params]})
        blobs.extend(np.ascontiguousarray(p.value, dtype="<f8").tobytes() for _, p in params)
    header = json.dumps({"schema": SCHEMA_VERSION, "models": entries, "meta": meta or {}},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, SCHEMA_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Return ``({name: model}, meta)``; models get ``meta`` attached."""
    with open(path, "rb") as fh:
        prefix = fh.read(_PREFIX.size)
        if len(prefix) != _PREFIX.size:
            raise FormatError(f"{path}: truncated checkpoint")
        magic, version, size = _PREFIX.unpack(prefix)
        if magic != MAGIC:
            raise FormatError(f"{path}: not a checkpoint (magic {magic!r})")
        if version != SCHEMA_VERSION:
            raise FormatError(f"{path}: schema version {version}, expected {SCHEMA_VERSION}")
        header = json.loads(fh.read(size))
        blob = np.frombuffer(fh.read(), dtype="<f8")
    models, offset = {}, 0
    for entry in header["models"]:
        cfg = entry["config"]
        if cfg["kind"] not in KINDS:
            raise FormatError(f"{path}: unknown model kind {cfg['kind']!r}")
        model = KINDS[cfg["kind"]].from_config(cfg)
        params = dict(model.named_parameters())
        for pname, shape in entry["params"]:
            n = int(np.prod(shape))
            if pname not in params or list(params[pname].value.shape) != shape:
                raise FormatError(f"{path}: parameter {pname} does not fit the model")
            if offset + n > blob.size:
                raise FormatError(f"{path}: parameter blob truncated")
            params[pname].value[...] = blob[offset:offset + n].reshape(shape)
            offset += n
        model.meta = dict(header["meta"])
        models[entry["name"]] = model
    if offset != blob.size:
        raise FormatError(f"{path}: {blob.size - offset} trailing values")
    return models, header["meta"]
