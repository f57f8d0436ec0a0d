"""Named trainable-parameter registry, seeded init, and checkpoints.

Initialization is a pure function of (name, shape, rng_seed): each
parameter gets its own RNG stream keyed by a stable hash of its name, so
adding or reordering parameters never reshuffles the others.

Checkpoint layout (little-endian, versioned):

    magic   4 bytes  b"BAPC"
    u32     format version (1)
    u64     rng seed of the store
    u32     parameter count
    then per parameter: u16 name length, utf-8 name, u8 ndim, u32 * ndim
    then, in the same order, each parameter's float64 values row-major.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptionError, GraphError
from .tensor import Tensor

_MAGIC = b"BAPC"
_VERSION = 1


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def _fan_in(shape) -> int:
    fan = 1
    for dim in shape[1:]:
        fan *= int(dim)
    return max(fan, 1)


def uniform_init(shape, rng_seed: int, name: str = "") -> Tensor:
    """Uniform values on [-b, b] with b = sqrt(1 / fan_in), fan_in = prod(shape[1:]).

    Deterministic per (name, shape, rng_seed).
    """
    shape = tuple(int(s) for s in shape)
    bound = float(np.sqrt(1.0 / _fan_in(shape)))
    rng = np.random.default_rng([int(rng_seed), _name_key(name)])
    t = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)
    return t


class ParamStore:
    """Uniquely named Tensors with grad slots, owned by one training run."""

    def __init__(self, rng_seed: int = 0):
        self.rng_seed = int(rng_seed)
        self.entries: dict[str, Tensor] = {}

    def create(self, name: str, shape, init: str = "uniform") -> Tensor:
        """Register a new parameter; `init` is "uniform" or "zeros"."""
        if name in self.entries:
            raise GraphError(f"duplicate parameter name {name!r}")
        shape = tuple(int(s) for s in shape)
        if init == "uniform":
            t = uniform_init(shape, self.rng_seed, name=name)
        elif init == "zeros":
            t = Tensor(np.zeros(shape), requires_grad=True)
        else:
            raise GraphError(f"unknown init {init!r}")
        self.entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def names(self) -> list[str]:
        return list(self.entries)

    def items(self):
        return self.entries.items()

    def zero_grads(self) -> None:
        for t in self.entries.values():
            t.zero_grad()

    def n_values(self) -> int:
        return sum(t.data.size for t in self.entries.values())

    def load_values(self, values: dict[str, np.ndarray], prefix: str = "") -> int:
        """Overwrite matching entries in place; returns how many were set."""
        n = 0
        for name, arr in values.items():
            target = prefix + name
            if target not in self.entries:
                continue
            t = self.entries[target]
            if t.data.shape != arr.shape:
                raise CorruptionError(
                    f"checkpoint value for {target!r} has shape {arr.shape}, "
                    f"expected {t.data.shape}"
                )
            t.data[...] = arr
            n += 1
        return n


def save_params(store: ParamStore, path) -> None:
    path = Path(path)
    names = store.names()
    header = bytearray()
    header += _MAGIC
    header += struct.pack("<IQI", _VERSION, store.rng_seed, len(names))
    for name in names:
        raw = name.encode("utf-8")
        shape = store[name].data.shape
        header += struct.pack("<H", len(raw)) + raw
        header += struct.pack("<B", len(shape))
        header += struct.pack(f"<{len(shape)}I", *shape)
    with open(path, "wb") as fh:
        fh.write(bytes(header))
        for name in names:
            fh.write(np.ascontiguousarray(store[name].data, dtype="<f8").tobytes())


def load_params(path) -> ParamStore:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != _MAGIC:
        raise CorruptionError(f"{path}: not a parameter checkpoint (bad magic)")
    version, seed, count = struct.unpack_from("<IQI", blob, 4)
    if version != _VERSION:
        raise CorruptionError(f"{path}: unsupported checkpoint version {version}")
    offset = 4 + struct.calcsize("<IQI")
    metas = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        metas.append((name, shape))
    store = ParamStore(rng_seed=seed)
    for name, shape in metas:
        n = int(np.prod(shape)) if shape else 1
        end = offset + 8 * n
        if end > len(blob):
            raise CorruptionError(f"{path}: truncated checkpoint at {name!r}")
        arr = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape)
        offset = end
        t = Tensor(arr.astype(np.float64), requires_grad=True)
        store.entries[name] = t
    return store
