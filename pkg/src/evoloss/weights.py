"""The search-space individual: one weight per loss component, each in [0, 1],
and the weighted total loss they induce."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .schema import KEY_INDEX, N_WEIGHTS, WEIGHT_KEYS


class SchemaError(ValueError):
    """Key set does not match the fixed weight index."""


class LossWeights:
    """Immutable vector of the 16 component weights in canonical key order."""

    __slots__ = ("values",)

    def __init__(self, values) -> None:
        arr = np.array(values, dtype=np.float64)
        if arr.shape != (N_WEIGHTS,):
            raise SchemaError(f"expected {N_WEIGHTS} weights, got shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("LossWeights is immutable")

    def __getitem__(self, key: str) -> float:
        return float(self.values[KEY_INDEX[key]])

    def __eq__(self, other) -> bool:
        return isinstance(other, LossWeights) and np.array_equal(self.values, other.values)

    def __repr__(self) -> str:
        return f"LossWeights({self.values.tolist()})"

    def key_bytes(self) -> bytes:
        return self.values.tobytes()

    def as_dict(self) -> dict[str, float]:
        return {k: float(v) for k, v in zip(WEIGHT_KEYS, self.values)}

    def with_value(self, index: int, value: float) -> "LossWeights":
        arr = self.values.copy()
        arr[index] = value
        return LossWeights(arr)

    @classmethod
    def from_dict(cls, d: Mapping[str, float]) -> "LossWeights":
        _check_keys(set(d))
        return cls([float(d[k]) for k in WEIGHT_KEYS])

    @classmethod
    def zeros(cls) -> "LossWeights":
        return cls(np.zeros(N_WEIGHTS))

    @classmethod
    def ones(cls) -> "LossWeights":
        return cls(np.ones(N_WEIGHTS))

    @classmethod
    def uniform(cls, rng: np.random.Generator) -> "LossWeights":
        return cls(rng.uniform(0.0, 1.0, N_WEIGHTS))

    @classmethod
    def single(cls, key: str, value: float = 1.0) -> "LossWeights":
        return cls.zeros().with_value(KEY_INDEX[key], value)

    # canonical text form: one "key = value" line per entry, 6 decimals,
    # fixed key order. Round-trips exactly at that precision.
    def to_text(self) -> str:
        return "".join(f"{k} = {v:.6f}\n" for k, v in zip(WEIGHT_KEYS, self.values))

    @classmethod
    def from_text(cls, text: str) -> "LossWeights":
        entries: dict[str, float] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise SchemaError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in KEY_INDEX:
                raise SchemaError(f"line {lineno}: unknown weight key {key!r}")
            if key in entries:
                raise SchemaError(f"line {lineno}: duplicate weight key {key!r}")
            try:
                entries[key] = float(val.strip())
            except ValueError:
                raise SchemaError(f"line {lineno}: bad value {val.strip()!r}") from None
        return cls.from_dict(entries)


def validate(w: LossWeights) -> list[str]:
    """Empty list when valid, else one message per violated coordinate."""
    out = []
    for k, v in zip(WEIGHT_KEYS, w.values):
        if not np.isfinite(v) or v < 0.0 or v > 1.0:
            out.append(f"{k} = {v!r} outside [0, 1]")
    return out


def _check_keys(keys: set[str]) -> None:
    expected = set(WEIGHT_KEYS)
    if keys != expected:
        missing = sorted(expected - keys)
        extra = sorted(keys - expected)
        raise SchemaError(f"weight keys mismatch: missing={missing} extra={extra}")


def total_loss(w: LossWeights, components: Mapping[str, float]) -> float:
    """Weighted sum over all task and distillation components."""
    _check_keys(set(components))
    comp = np.array([components[k] for k in WEIGHT_KEYS], dtype=np.float64)
    return float(w.values @ comp)
