"""Self-describing, byte-deterministic checkpoint container.

A container is a .npz archive holding named float arrays plus a "__header__"
entry: a JSON document (format_version, kind, config, ...) encoded as a uint8
array. Identical state always serializes to identical bytes.
"""

from __future__ import annotations

import io
import json

import numpy as np

FORMAT_VERSION = 1


def write_container(path, arrays: dict[str, np.ndarray], header: dict) -> None:
    header = {"format_version": FORMAT_VERSION, **header}
    payload = dict(arrays)
    payload["__header__"] = np.frombuffer(
        json.dumps(header, sort_keys=True).encode(), dtype=np.uint8
    )
    buf = io.BytesIO()
    np.savez(buf, **payload)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_container(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path) as data:
        if "__header__" not in data.files:
            raise ValueError(f"{path}: not a checkpoint container")
        header = json.loads(data["__header__"].tobytes().decode())
        arrays = {k: data[k] for k in data.files if k != "__header__"}
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format version {header.get('format_version')}")
    return arrays, header
