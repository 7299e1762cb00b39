"""Checkpoint files: a numpy ``.npz`` archive with a JSON header entry.

Layout: ``__header__`` holds ``{"format": "qmle-checkpoint", "version": 1,
"stores": [...], "counters": {...}}``; every other key is
``<store>/<param|adam_m|adam_v>/<name>`` or ``<store>/adam_step``.
"""
from __future__ import annotations

import json

import numpy as np

from .nn import ParamStore

FORMAT = "qmle-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, stores: dict[str, ParamStore], counters: dict[str, int] | None = None) -> None:
    header = {"format": FORMAT, "version": VERSION, "stores": sorted(stores),
              "counters": {k: int(v) for k, v in (counters or {}).items()}}
    arrays = {"__header__": np.array(json.dumps(header, sort_keys=True))}
    for name, store in stores.items():
        for key, value in store.state_dict().items():
            arrays[f"{name}/{key}"] = value
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def read_header(path) -> dict:
    with np.load(path) as data:
        return json.loads(str(data["__header__"]))


def load_checkpoint(path, stores: dict[str, ParamStore]) -> dict[str, int]:
    with np.load(path) as data:
        header = json.loads(str(data["__header__"]))
        if header.get("format") != FORMAT:
            raise CheckpointError(f"{path}: not a {FORMAT} file")
        if header.get("version") != VERSION:
            raise CheckpointError(f"{path}: unsupported version {header.get('version')}")
        missing = set(stores) - set(header["stores"])
        if missing:
            raise CheckpointError(f"{path}: missing stores {sorted(missing)}")
        for name, store in stores.items():
            prefix = f"{name}/"
            store.load_state_dict({k[len(prefix):]: data[k] for k in data.files if k.startswith(prefix)})
    return header["counters"]
