"""JSON checkpoints: named arrays with shapes, optimizer state, step and seed."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .optim import AdamState


def encode_arrays(tensors: dict[str, np.ndarray]) -> dict:
    return {k: {"shape": list(a.shape), "data": np.asarray(a).ravel().tolist()}
            for k, a in sorted(tensors.items())}


def decode_arrays(obj: dict) -> dict[str, np.ndarray]:
    return {k: np.asarray(e["data"], dtype=np.float64).reshape(e["shape"]) for k, e in obj.items()}


def save_checkpoint(path, tensors: dict[str, np.ndarray], *, kind: str, seed: int,
                    config: dict, config_hash: str = "", optimizer: AdamState | None = None,
                    extra: dict | None = None) -> None:
    doc = {
        "kind": kind,
        "config": config,
        "config_hash": config_hash,
        "seed": seed,
        "step": optimizer.step if optimizer else 0,
        "params": encode_arrays(tensors),
        "optimizer": optimizer.to_json() if optimizer else None,
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path, kind: str | None = None) -> dict:
    doc = json.loads(Path(path).read_text())
    if kind is not None and doc.get("kind") != kind:
        raise ValueError(f"{path}: expected a {kind} checkpoint, found {doc.get('kind')!r}")
    doc["params"] = decode_arrays(doc["params"])
    if doc.get("optimizer"):
        doc["optimizer"] = AdamState.from_json(doc["optimizer"])
    return doc
