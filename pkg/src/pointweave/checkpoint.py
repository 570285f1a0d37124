"""Checkpoint serialization: a text manifest plus a flat float64 payload.

The manifest lists hyperparameters and one entry per array (name, shape,
byte offset into the payload). The payload is little-endian float64 in
manifest order. Round trips are bit-exact.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import CheckpointFormatError

MANIFEST_NAME = "manifest.txt"
PAYLOAD_NAME = "payload.bin"
_HEADER = "pointweave-checkpoint v1"


def save_checkpoint(directory: str, arrays: list[tuple[str, np.ndarray]],
                    hypers: dict[str, str]) -> None:
    os.makedirs(directory, exist_ok=True)
    lines = [_HEADER]
    for key in sorted(hypers):
        lines.append(f"hyper {key} {hypers[key]}")
    chunks = []
    offset = 0
    for name, array in arrays:
        arr = np.ascontiguousarray(array, dtype="<f8")
        shape = "x".join(str(d) for d in arr.shape)
        lines.append(f"entry {name} {shape} {offset}")
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    with open(os.path.join(directory, PAYLOAD_NAME), "wb") as fh:
        for chunk in chunks:
            fh.write(chunk)
    with open(os.path.join(directory, MANIFEST_NAME), "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(directory: str) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    payload_path = os.path.join(directory, PAYLOAD_NAME)
    try:
        with open(manifest_path, "r", encoding="ascii") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise CheckpointFormatError(f"cannot read manifest: {exc}") from exc
    if not lines or lines[0] != _HEADER:
        raise CheckpointFormatError("manifest missing the checkpoint header")
    try:
        with open(payload_path, "rb") as fh:
            payload = fh.read()
    except OSError as exc:
        raise CheckpointFormatError(f"cannot read payload: {exc}") from exc

    hypers: dict[str, str] = {}
    arrays: dict[str, np.ndarray] = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split()
        if parts[0] == "hyper" and len(parts) == 3:
            hypers[parts[1]] = parts[2]
        elif parts[0] == "entry" and len(parts) == 4:
            name, shape_str, offset_str = parts[1], parts[2], parts[3]
            shape = tuple(int(d) for d in shape_str.split("x")) if shape_str else ()
            offset = int(offset_str)
            count = int(np.prod(shape)) if shape else 1
            end = offset + count * 8
            if end > len(payload):
                raise CheckpointFormatError(
                    f"payload too short for entry {name}: needs {end} bytes, has {len(payload)}")
            arrays[name] = np.frombuffer(
                payload, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        else:
            raise CheckpointFormatError(f"unrecognized manifest line: {line!r}")
    return arrays, hypers
