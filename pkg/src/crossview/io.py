"""On-disk formats for trained parameters and feature matrices.

Parameter file: one line of JSON (the header, terminated by ``\\n``)
followed by every tensor of every block as little-endian float64, in the
order the header lists them. Feature file: little-endian float32 row-major
matrix plus a ``<path>.json`` sidecar ``{"count": n, "dim": d}``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .datacube import FormatError, sidecar_path

PARAMS_FORMAT = "crossview-params/1"

VAE_BLOCKS = {"encoder": ("encoder", "mu_head", "logvar_head"), "decoder": ("decoder",)}
AAE_BLOCKS = {
    "encoder": ("encoder", "head"),
    "decoder": ("decoder",),
    "discriminator": ("discriminator",),
}
CONTRAST_BLOCKS = {
    "online_encoder": ("online_encoder",),
    "online_projector": ("online_projector",),
    "predictor": ("predictor",),
    "target_encoder": ("target_encoder",),
    "target_projector": ("target_projector",),
}


def _block_of(name, blocks):
    head = name.split(".", 1)[0]
    for block, prefixes in blocks.items():
        if head in prefixes:
            return block
    raise KeyError(f"tensor {name!r} belongs to no declared block")


def save_params(path, module: torch.nn.Module, blocks: dict, header: dict | None = None):
    state = module.state_dict()
    grouped = {b: [] for b in blocks}
    for name, tensor in state.items():
        grouped[_block_of(name, blocks)].append((name, tensor))
    meta = dict(header or {})
    meta["format"] = PARAMS_FORMAT
    meta["blocks"] = [
        {
            "name": b,
            "tensors": [
                {"name": n, "shape": list(t.shape), "dtype": str(t.dtype).removeprefix("torch.")}
                for n, t in items
            ],
        }
        for b, items in grouped.items()
    ]
    with open(path, "wb") as fh:
        fh.write(json.dumps(meta, sort_keys=True).encode() + b"\n")
        for items in grouped.values():
            for _, t in items:
                fh.write(t.detach().cpu().double().numpy().astype("<f8").tobytes())


def read_params(path):
    """Return (header, {tensor name: float64 array})."""
    raw = Path(path).read_bytes()
    end = raw.find(b"\n")
    if end < 0:
        raise FormatError(f"{path}: missing parameter header")
    try:
        header = json.loads(raw[:end])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: corrupt parameter header: {exc}") from None
    if header.get("format") != PARAMS_FORMAT:
        raise FormatError(f"{path}: unknown parameter format {header.get('format')!r}")
    offset = end + 1
    arrays = {}
    for block in header["blocks"]:
        for entry in block["tensors"]:
            count = int(np.prod(entry["shape"], dtype=np.int64))
            nbytes = 8 * count
            if offset + nbytes > len(raw):
                raise FormatError(f"{path}: truncated at tensor {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(raw, "<f8", count, offset).reshape(entry["shape"])
            offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return header, arrays


def load_params(path, module: torch.nn.Module):
    header, arrays = read_params(path)
    state = module.state_dict()
    if set(state) != set(arrays):
        raise FormatError(f"{path}: tensors do not match the module architecture")
    module.load_state_dict(
        {k: torch.as_tensor(arrays[k].copy()).to(state[k].dtype) for k in state}
    )
    return header


def save_features(path, features):
    features = np.asarray(features)
    if features.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(features, dtype="<f4").tobytes())
    sidecar_path(path).write_text(
        json.dumps({"count": int(features.shape[0]), "dim": int(features.shape[1])})
    )


def load_features(path) -> np.ndarray:
    side = sidecar_path(path)
    try:
        meta = json.loads(side.read_text())
        n, d = int(meta["count"]), int(meta["dim"])
    except (FileNotFoundError, KeyError, ValueError) as exc:
        raise FormatError(f"bad feature sidecar {side}: {exc}") from None
    raw = Path(path).read_bytes()
    if len(raw) != 4 * n * d:
        raise FormatError(f"{path}: expected {4 * n * d} bytes, found {len(raw)}")
    return np.frombuffer(raw, "<f4").reshape(n, d).astype(np.float64)
