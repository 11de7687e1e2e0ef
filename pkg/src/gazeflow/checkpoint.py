"""Checkpoint file format.

Layout: magic ``EYFM``, u32 format version, u32 header length, UTF-8 JSON
header, then one float32 little-endian block per parameter in header order.
Parameter order is canonical (sorted by name) so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .model import DTYPE, INDIVIDUAL, ModelConfig, PolicyModel

CHECKPOINT_MAGIC = b"EYFM"
FORMAT_VERSION = 1

_VIEWER_PREFIX = "viewer_embedding/"


class CheckpointError(ValueError):
    """Checkpoint file is corrupt or incompatible."""


def _named_blocks(model: PolicyModel) -> list[tuple[str, torch.Tensor]]:
    blocks = sorted(model.state_dict().items())
    blocks += [(f"{_VIEWER_PREFIX}{vid}", t) for vid, t in sorted(model.viewer_embeddings.items())]
    return blocks


def save_checkpoint(model: PolicyModel, path: Path | str, train_config: Optional[dict] = None) -> None:
    blocks = _named_blocks(model)
    header = {
        "config": model.cfg.to_dict(),
        "viewers": sorted(model.viewer_embeddings),
        "params": [{"name": n, "shape": list(t.shape)} for n, t in blocks],
        "train_config": train_config,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for _, tensor in blocks:
            fh.write(tensor.detach().numpy().astype("<f4").tobytes(order="C"))


def _read_header(raw: bytes) -> tuple[dict, int]:
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"not a checkpoint file (magic {raw[:4]!r})")
    if len(raw) < 12:
        raise CheckpointError("checkpoint truncated before header")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    return header, 12 + header_len


def read_header(path: Path | str) -> dict:
    return _read_header(Path(path).read_bytes())[0]


def load_checkpoint(path: Path | str, mode: Optional[str] = None) -> PolicyModel:
    """Rebuild the model from a checkpoint.

    ``mode`` requests a prediction mode; asking for individual mode on a
    population checkpoint (no viewer machinery) is an error.
    """
    raw = Path(path).read_bytes()
    header, offset = _read_header(raw)
    cfg = ModelConfig(**header["config"])
    if mode == INDIVIDUAL and cfg.mode != INDIVIDUAL:
        raise CheckpointError("checkpoint is population-mode: no viewer embeddings available")

    model = PolicyModel(cfg)

    state = dict(model.state_dict())
    cursor = offset
    for entry in header["params"]:
        name, shape = entry["name"], tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = cursor + 4 * count
        if end > len(raw):
            raise CheckpointError(f"checkpoint truncated in block {name!r}")
        values = np.frombuffer(raw[cursor:end], dtype="<f4").reshape(shape)
        tensor = torch.from_numpy(values.copy()).to(DTYPE)
        cursor = end
        if name.startswith(_VIEWER_PREFIX):
            model.register_viewer(name[len(_VIEWER_PREFIX):], tensor.requires_grad_(True))
            continue
        if name not in state:
            raise CheckpointError(f"unexpected parameter block {name!r}")
        if tuple(state[name].shape) != shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: file has {shape}, model expects {tuple(state[name].shape)}"
            )
        state[name] = tensor
    if cursor != len(raw):
        raise CheckpointError(f"{len(raw) - cursor} trailing bytes after parameter blocks")
    missing = [n for n in model.state_dict() if n not in {e["name"] for e in header["params"]}]
    if missing:
        raise CheckpointError(f"checkpoint missing parameter blocks: {missing[:3]}")
    model.load_state_dict(state)
    return model
