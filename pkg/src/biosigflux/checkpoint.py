"""SQATCKPT checkpoint container.

Layout (little-endian)::

    b"SQATCKPT" | u32 version | u64 manifest length | UTF-8 JSON manifest
    float32 parameter blobs, concatenated in manifest order

The manifest records the model kind and config, one ``{name, shape, offset,
length}`` record per parameter (offsets in bytes from the blob start), the
normalizer, the training history, the dataset fingerprint, the seed, the
effective run config and, for SQuAT, the prior mask.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .models import CONFIG_TYPES, MODEL_KINDS, PriorMask, build_model
from .preprocessing import Normalizer

MAGIC = b"SQATCKPT"
VERSION = 1
_HEADER = struct.Struct("<8sIQ")


class CheckpointFormatError(ValueError):
    """Raised when a file is not a readable SQATCKPT container."""

    def __init__(self, path, reason: str):
        super().__init__(f"{path}: {reason} (expected magic {MAGIC.decode()} version {VERSION})")
        self.path = str(path)


@dataclass
class Checkpoint:
    model: object
    normalizer: Normalizer
    manifest: dict

    @property
    def kind(self) -> str:
        return self.manifest["kind"]

    @property
    def dataset_fingerprint(self) -> str | None:
        return self.manifest.get("dataset_fingerprint")


def checkpoint_bytes(model, normalizer: Normalizer, history=None, dataset_fingerprint: str | None = None,
                     seed: int = 42, run_config: dict | None = None) -> bytes:
    records, blobs, offset = [], [], 0
    for name, p in model.named_parameters():
        blob = np.ascontiguousarray(p.data, dtype="<f4").tobytes()
        records.append({"name": name, "shape": list(p.shape), "offset": offset, "length": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "kind": model.kind,
        "config": model.config.to_dict(),
        "parameters": records,
        "normalizer": normalizer.to_dict(),
        "history": list(history or []),
        "dataset_fingerprint": dataset_fingerprint,
        "seed": int(seed),
        "run_config": run_config,
        "trained": bool(getattr(model, "trained", False)),
    }
    if model.kind == "squat":
        manifest["prior"] = model.prior.to_dict()
    body = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(MAGIC, VERSION, len(body)) + body + b"".join(blobs)


def save_checkpoint(path, model, normalizer: Normalizer, **kwargs) -> Path:
    path = Path(path)
    data = checkpoint_bytes(model, normalizer, **kwargs)
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise OSError(f"failed to write checkpoint {path}: {exc.strerror or exc}") from exc
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"failed to read checkpoint {path}: {exc.strerror or exc}") from exc
    if len(raw) < _HEADER.size:
        raise CheckpointFormatError(path, "file too short")
    magic, version, n = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise CheckpointFormatError(path, f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointFormatError(path, f"unsupported version {version}")
    start = _HEADER.size + n
    try:
        manifest = json.loads(raw[_HEADER.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(path, f"unreadable manifest ({exc})") from exc
    kind = manifest.get("kind")
    if kind not in MODEL_KINDS:
        raise CheckpointFormatError(path, f"unknown model kind {kind!r}")

    config = CONFIG_TYPES[kind].from_dict(manifest["config"])
    prior = PriorMask.from_dict(manifest["prior"]) if kind == "squat" else None
    model = build_model(kind, config, seed=manifest.get("seed", 42), prior=prior)
    state = {}
    for rec in manifest["parameters"]:
        lo = start + rec["offset"]
        if lo + rec["length"] > len(raw):
            raise CheckpointFormatError(path, f"truncated blob for {rec['name']}")
        state[rec["name"]] = np.frombuffer(raw, dtype="<f4", count=rec["length"] // 4,
                                           offset=lo).reshape(rec["shape"])
    model.load_state_dict(state)
    model.trained = bool(manifest.get("trained", False))
    return Checkpoint(model, Normalizer.from_dict(manifest["normalizer"]), manifest)
