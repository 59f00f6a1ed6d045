"""Checkpoint files.

Layout: an uncompressed numpy ``.npz`` archive (written through a file handle,
so the name on disk is exactly what the caller asked for) with entries

* ``__meta__``        -- 0-d unicode array holding JSON: format tag, epoch,
                         config, config hash, adam step count
* ``param.<name>``    -- every model parameter, float64
* ``bn.running_mean`` / ``bn.running_var``
* ``adam.m.<i>`` / ``adam.v.<i>`` -- optimizer moments in parameter order

All arrays are stored as raw float64, so a save/load round trip is bit-exact.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..numerics import AdamState

FORMAT = "corehts-checkpoint/1"


def save_checkpoint(path: str | Path, model_state: dict[str, np.ndarray], adam: AdamState | None,
                    epoch: int, config_json: str, config_hash: str) -> None:
    meta = {
        "format": FORMAT,
        "epoch": int(epoch),
        "config": json.loads(config_json),
        "config_hash": config_hash,
        "adam_t": adam.t if adam is not None else None,
    }
    arrays = {"__meta__": np.array(json.dumps(meta, sort_keys=True))}
    arrays.update({k: np.asarray(v, dtype=np.float64) for k, v in model_state.items()})
    if adam is not None:
        for i, (m, v) in enumerate(zip(adam.m, adam.v)):
            arrays[f"adam.m.{i}"] = m
            arrays[f"adam.v.{i}"] = v
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> dict:
    """Returns {"meta": dict, "model": state dict, "adam": AdamState | None}."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("format") != FORMAT:
            raise ValueError(f"unsupported checkpoint format {meta.get('format')!r}")
        model = {k: z[k] for k in z.files if k.startswith(("param.", "bn."))}
        adam = None
        if meta.get("adam_t") is not None:
            n = sum(1 for k in z.files if k.startswith("adam.m."))
            adam = AdamState([z[f"adam.m.{i}"] for i in range(n)], [z[f"adam.v.{i}"] for i in range(n)],
                             int(meta["adam_t"]))
    return {"meta": meta, "model": model, "adam": adam}
