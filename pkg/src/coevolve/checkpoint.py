"""Checkpoints as ``.npz`` archives of named float64 tensors.

Each array keeps its own shape; a ``__meta__`` entry holds JSON with the
model dimensions and the full training config, so a checkpoint can be
rebuilt without the dataset that produced it.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig, config_from_mapping, config_tables
from .trainer import CoEvolveModel

META_KEY = "__meta__"


class CheckpointError(ValueError):
    pass


def save_checkpoint(model, cfg: TrainConfig, path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {name: t.detach().cpu().numpy().astype(np.float64) for name, t in model.state_dict().items()}
    meta = {"dims": model.dims, "config": config_tables(cfg), **(extra or {})}
    arrays[META_KEY] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from exc
    if META_KEY not in arrays:
        raise CheckpointError(f"{path}: missing metadata")
    meta = json.loads(arrays.pop(META_KEY).tobytes().decode())
    return arrays, meta


def load_checkpoint(path):
    """Return ``(model, cfg, meta)`` rebuilt from a checkpoint file."""
    arrays, meta = read_checkpoint(path)
    cfg = config_from_mapping(meta["config"])
    dims = meta["dims"]
    model = CoEvolveModel(dims["x_dim"], dims["t_dim"], dims["num_classes"], cfg)
    state = model.state_dict()
    if set(state) != set(arrays):
        raise CheckpointError(f"{path}: parameter names do not match the model")
    for name, value in arrays.items():
        if tuple(state[name].shape) != value.shape:
            raise CheckpointError(f"{path}: shape mismatch for {name}")
    model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in arrays.items()})
    return model, cfg, meta
