"""Named parameter collections and their on-disk checkpoint format.

Checkpoint layout (all integers little-endian):

    bytes 0..3   magic ``WBHT``
    byte  4      format version (currently 1)
    bytes 5..12  uint64 manifest length in bytes
    manifest     UTF-8 JSON: [{"name": str, "shape": [int], "offset": int}]
    payload      concatenated little-endian float64 buffers

Offsets are byte positions into the payload.  Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ContractError, ShapeError
from .tensor import Tensor

MAGIC = b"WBHT"
FORMAT_VERSION = 1


class ParameterSet:
    """Ordered name -> Tensor map of trainable parameters."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        if not tensor.requires_grad:
            raise ContractError(f"parameter {name!r} must be gradient-tracked")
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def count(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def set_trainable(self, trainable: bool) -> None:
        """Freeze or unfreeze every tensor (frozen tensors never receive grads)."""
        for t in self._params.values():
            t.requires_grad = trainable
            if trainable and t.grad is None:
                t.grad = np.zeros_like(t.data)

    def copy_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    # -- checkpoint I/O -----------------------------------------------------

    def save(self, path: str | Path) -> None:
        entries = []
        payload = bytearray()
        for name, t in self._params.items():
            entries.append({"name": name, "shape": list(t.shape), "offset": len(payload)})
            payload += np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        manifest = json.dumps(entries).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(bytes([FORMAT_VERSION]))
            fh.write(struct.pack("<Q", len(manifest)))
            fh.write(manifest)
            fh.write(payload)

    @staticmethod
    def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
        raw = Path(path).read_bytes()
        if raw[:4] != MAGIC:
            raise ContractError(f"{path}: not a parameter checkpoint (bad magic)")
        if raw[4] != FORMAT_VERSION:
            raise ContractError(f"{path}: unsupported checkpoint version {raw[4]}")
        (mlen,) = struct.unpack("<Q", raw[5:13])
        manifest = json.loads(raw[13:13 + mlen].decode("utf-8"))
        payload = raw[13 + mlen:]
        out: dict[str, np.ndarray] = {}
        for entry in manifest:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape)) if shape else 1
            start = entry["offset"]
            arr = np.frombuffer(payload, dtype="<f8", count=n, offset=start)
            out[entry["name"]] = arr.reshape(shape).astype(np.float64)
        return out

    @classmethod
    def load(cls, path: str | Path) -> "ParameterSet":
        pset = cls()
        for name, arr in cls.load_arrays(path).items():
            pset.add(name, Tensor(arr, requires_grad=True))
        return pset

    def load_into(self, path: str | Path) -> None:
        """Copy checkpoint values into the existing tensors, in place."""
        arrays = self.load_arrays(path)
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise ContractError(f"checkpoint mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, arr in arrays.items():
            t = self._params[name]
            if t.shape != arr.shape:
                raise ShapeError(f"parameter {name!r}: checkpoint shape {arr.shape} != {t.shape}")
            t.data[...] = arr
