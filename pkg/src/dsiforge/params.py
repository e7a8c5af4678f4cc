"""Named parameter tensors, the Adam optimizer, and the checkpoint container.

Checkpoint files are a length-prefixed binary container: 4-byte magic "DSF1",
a parameter count, then per parameter the name, shape, and little-endian
float64 data, followed by a JSON blob holding the RNG state.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, NumericError

MAGIC = b"DSF1"


class ParameterStore:
    """Mutable set of named tensors plus Adam moment accumulators."""

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, value) -> None:
        if name in self.values:
            raise ConfigError(f"duplicate parameter name: {name}")
        arr = np.asarray(value, dtype=np.float64)
        self.values[name] = arr
        self._m[name] = np.zeros_like(arr)
        self._v[name] = np.zeros_like(arr)

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def node(self, name: str) -> ad.Node:
        """Fresh graph leaf bound to the parameter's current value."""
        return ad.param(name, self.values[name])

    def names(self) -> list[str]:
        return list(self.values)

    def load_values(self, values: dict) -> None:
        for name, arr in values.items():
            if name not in self.values:
                raise ConfigError(f"checkpoint has unknown parameter '{name}'")
            if self.values[name].shape != arr.shape:
                raise ConfigError(
                    f"checkpoint shape mismatch for '{name}': "
                    f"{arr.shape} vs expected {self.values[name].shape}")
            self.values[name] = np.array(arr, dtype=np.float64)
        missing = set(self.values) - set(values)
        if missing:
            raise ConfigError(f"checkpoint missing parameters: {sorted(missing)}")


def adam_step(store: ParameterStore, grads: dict, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One Adam update over all parameters; absent gradients count as zero."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter '{name}'")
        if name not in store.values:
            raise ConfigError(f"gradient for unknown parameter '{name}'")
    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, value in store.values.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(value)
        m = store._m[name]
        v = store._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        value -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def save_checkpoint(path, store: ParameterStore, rng_state: dict) -> None:
    names = sorted(store.values)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(names)))
        for name in names:
            raw = name.encode("utf-8")
            arr = store.values[name]
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<Q", d))
            f.write(arr.astype("<f8").tobytes())
        blob = json.dumps(rng_state, sort_keys=True).encode("utf-8")
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)


def load_checkpoint(path) -> tuple[dict, dict]:
    """Read a container; returns (name -> array, rng_state)."""
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ConfigError(f"{path}: not a DSF1 checkpoint")
        (count,) = struct.unpack("<I", f.read(4))
        values = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = tuple(struct.unpack("<Q", f.read(8))[0] for _ in range(ndim))
            n_items = 1
            for d in shape:
                n_items *= d
            data = np.frombuffer(f.read(8 * n_items), dtype="<f8")
            values[name] = data.reshape(shape).astype(np.float64)
        (blen,) = struct.unpack("<Q", f.read(8))
        rng_state = json.loads(f.read(blen).decode("utf-8"))
    return values, rng_state
