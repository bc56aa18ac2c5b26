"""Checkpoints: a JSON manifest plus one little-endian float64 parameter file.

The manifest records the format version, configuration digests, layouts,
seed, generator state and optimizer step; ``params.bin`` holds the variational
parameters followed by the Adam moments, each block in manifest order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .svi import AdamState

__all__ = ["Checkpoint", "CheckpointError", "load_checkpoint", "save_checkpoint"]

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
BLOCKS = "params.bin"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: dict
    adam: AdamState
    rng_state: dict
    seed: int
    config_digest: str
    model_digest: str
    model: dict
    layout: dict | None = None


def _blocks(ckpt: Checkpoint):
    for name, arr in ckpt.params.items():
        yield f"param/{name}", arr
    for name in ckpt.params:
        if name in ckpt.adam.m:
            yield f"adam.m/{name}", ckpt.adam.m[name]
            yield f"adam.v/{name}", ckpt.adam.v[name]


def save_checkpoint(ckpt: Checkpoint, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, offset, chunks = [], 0, []
    for name, arr in _blocks(ckpt):
        a = np.asarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "count": a.size})
        offset += a.size
        chunks.append(a.tobytes())
    manifest = {
        "format_version": FORMAT_VERSION,
        "config_digest": ckpt.config_digest,
        "model_digest": ckpt.model_digest,
        "model": ckpt.model,
        "layout": ckpt.layout,
        "seed": ckpt.seed,
        "rng_state": ckpt.rng_state,
        "adam_step": ckpt.adam.step,
        "blocks": entries,
        "total_count": offset,
    }
    (directory / BLOCKS).write_bytes(b"".join(chunks))
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return directory


def load_checkpoint(directory, expect_model_digest: str | None = None) -> Checkpoint:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST).read_text())
    except FileNotFoundError:
        raise CheckpointError(f"{directory}: no {MANIFEST}") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format_version')}")
    if expect_model_digest is not None and manifest["model_digest"] != expect_model_digest:
        raise CheckpointError(
            "checkpoint was written for a different model/guide configuration "
            f"({manifest['model_digest'][:12]} != {expect_model_digest[:12]})"
        )
    buf = (directory / BLOCKS).read_bytes()
    if len(buf) != 8 * manifest["total_count"]:
        raise CheckpointError(f"{BLOCKS}: expected {manifest['total_count']} values")
    flat = np.frombuffer(buf, dtype="<f8")
    params, m, v = {}, {}, {}
    target = {"param": params, "adam.m": m, "adam.v": v}
    for e in manifest["blocks"]:
        kind, name = e["name"].split("/", 1)
        block = flat[e["offset"] : e["offset"] + e["count"]]
        target[kind][name] = block.astype(np.float64).reshape(e["shape"])
    return Checkpoint(
        params=params,
        adam=AdamState(manifest["adam_step"], m, v),
        rng_state=manifest["rng_state"],
        seed=manifest["seed"],
        config_digest=manifest["config_digest"],
        model_digest=manifest["model_digest"],
        model=manifest["model"],
        layout=manifest["layout"],
    )
