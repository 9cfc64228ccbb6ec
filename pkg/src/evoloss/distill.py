"""Cross-modal activation matching.

Each slot penalizes the squared gap between an RGB-network layer and the same
layer of another modality's network, computed on the same clips. Training is
joint: by default gradients flow into both networks; `stop_gradient` freezes
the non-RGB side of the penalty instead.
"""

from __future__ import annotations

from dataclasses import dataclass

from .autodiff import ShapeError, Tensor, mse
from .model import ActivationTrace
from .schema import DISTILL_SLOTS


@dataclass(frozen=True)
class DistillSlot:
    source_modality: str   # audio, flow or grey
    layer: str             # layer1 or embedding


SLOTS = tuple(DistillSlot(m, layer) for m, layer in DISTILL_SLOTS)


def distill_loss(main_trace: ActivationTrace, other_trace: ActivationTrace,
                 slot: DistillSlot, *, stop_gradient: bool = False) -> Tensor:
    """Mean squared activation gap at the slot's layer."""
    a: Tensor = getattr(main_trace, slot.layer)
    b: Tensor = getattr(other_trace, slot.layer)
    if a.data.shape[0] != b.data.shape[0]:
        raise ShapeError(
            f"distill batch sizes differ: {a.data.shape[0]} vs {b.data.shape[0]}")
    if stop_gradient:
        b = a.graph.const(b.data)
    return mse(a, b)
