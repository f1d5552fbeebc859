"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"EMAE"                     magic
    u16                         format version (1)
    u32                         header length in bytes
    header                      UTF-8 JSON: kind, model_config, standardization,
                                metadata, tensors=[{name, shape, offset}]
    payload                     float32 little-endian tensors in directory order;
                                offsets are relative to the payload start

The header is written with sorted keys and no whitespace so that equal
checkpoints serialise to equal bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import BadMagicError, CheckpointError, TruncatedFileError, UnsupportedVersionError
from .params import ParamStore

MAGIC = b"EMAE"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")


@dataclass
class Checkpoint:
    """A model snapshot: architecture, feature statistics, weights, run info.

    ``kind`` names the model family (``edge_transformer``, ``edge_mae`` or a
    baseline name).
    """

    kind: str
    model_config: dict
    params: ParamStore
    standardization: dict | None = None
    metadata: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        directory, chunks, offset = [], [], 0
        for name, arr in self.params.items():
            raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
            chunks.append(raw)
            offset += len(raw)
        header = {
            "kind": self.kind,
            "model_config": self.model_config,
            "standardization": self.standardization,
            "metadata": self.metadata,
            "tensors": directory,
        }
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return _PREFIX.pack(MAGIC, VERSION, len(blob)) + blob + b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if len(data) < 4 or data[:4] != MAGIC:
            if len(data) < 4 and MAGIC.startswith(data):
                raise TruncatedFileError("file ends inside the magic bytes")
            raise BadMagicError("not a checkpoint: magic bytes do not match")
        if len(data) < _PREFIX.size:
            raise TruncatedFileError("file ends inside the fixed-size prefix")
        _, version, header_len = _PREFIX.unpack_from(data)
        if version != VERSION:
            raise UnsupportedVersionError(f"checkpoint version {version} is not supported (expected {VERSION})")
        start = _PREFIX.size
        if len(data) < start + header_len:
            raise TruncatedFileError("file ends inside the JSON header")
        try:
            header = json.loads(data[start:start + header_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
        payload = data[start + header_len:]
        try:
            params, expected_end = _read_tensors(header["tensors"], payload)
            result = cls(header["kind"], header["model_config"], params, header["standardization"],
                         header["metadata"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"malformed checkpoint directory: {exc!r}") from None
        if len(payload) != expected_end:
            raise CheckpointError(f"{len(payload) - expected_end} unexpected trailing payload bytes")
        return result


def _read_tensors(directory, payload: bytes) -> tuple[ParamStore, int]:
    params = ParamStore()
    expected_end = 0
    for entry in directory:
        shape = tuple(int(d) for d in entry["shape"])
        if any(d < 0 for d in shape) or int(entry["offset"]) < 0:
            raise ValueError(f"negative size in tensor {entry['name']!r}")
        count = int(np.prod(shape, dtype=np.int64))
        begin = int(entry["offset"])
        end = begin + 4 * count
        if end > len(payload):
            raise TruncatedFileError(f"payload ends inside tensor {entry['name']!r}")
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=begin).reshape(shape)
        params.add(entry["name"], arr.astype(np.float64))
        expected_end = max(expected_end, end)
    return params, expected_end


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    Path(path).write_bytes(checkpoint.to_bytes())


def load_checkpoint(path) -> Checkpoint:
    return Checkpoint.from_bytes(Path(path).read_bytes())
