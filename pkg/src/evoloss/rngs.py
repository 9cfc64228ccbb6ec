"""Seed derivation helpers.

Every random decision in the pipeline draws from a generator keyed by
(seed, *tags) so that independent components never share a stream: skipping
one component cannot perturb another's draws.
"""

from __future__ import annotations

import zlib

import numpy as np


def _norm(parts: tuple) -> list[int]:
    out = []
    for p in parts:
        if isinstance(p, str):
            out.append(zlib.crc32(p.encode("utf-8")))
        else:
            out.append(int(p) & 0xFFFFFFFFFFFFFFFF)
    return out


def make_rng(*parts) -> np.random.Generator:
    """Deterministic generator keyed by a mixed int/str tag tuple."""
    return np.random.default_rng(_norm(parts))


def derive_seed(*parts) -> int:
    """Fold a tag tuple into a single u32 seed (e.g. for DatasetSpec.seed)."""
    return int(np.random.SeedSequence(_norm(parts)).generate_state(1, np.uint32)[0])
