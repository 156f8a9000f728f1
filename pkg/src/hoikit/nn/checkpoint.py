"""Checkpoint files: versioned JSON with named arrays.

Python's repr-based float serialization round-trips float64 exactly, and key
order is preserved on load, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json

import numpy as np

from ..errors import HoikitError

FORMAT_VERSION = 1


class BadCheckpoint(HoikitError):
    pass


def save_checkpoint(path: str, arrays: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    payload = {
        "version": FORMAT_VERSION,
        "meta": meta or {},
        "arrays": {
            name: {"shape": list(arr.shape),
                   "data": np.asarray(arr, dtype=np.float64).reshape(-1).tolist()}
            for name, arr in arrays.items()
        },
    }
    with open(path, "w") as f:
        json.dump(payload, f, separators=(",", ":"))


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path) as f:
        payload = json.load(f)
    if payload.get("version") != FORMAT_VERSION:
        raise BadCheckpoint(f"unsupported checkpoint version {payload.get('version')}")
    arrays = {}
    for name, entry in payload["arrays"].items():
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        arrays[name] = arr
    return arrays, payload.get("meta", {})
