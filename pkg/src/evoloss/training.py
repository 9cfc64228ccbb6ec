"""SGD training of the encoders under a weighted component loss.

Components with weight exactly 0 are skipped: their gradient contribution
would be exactly zero anyway, and per-component seeding guarantees the other
components see identical random draws either way.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import Graph, backward, wsum
from .data import ClipSet
from .model import BoundModel, Model
from .rngs import derive_seed, make_rng
from .schema import WEIGHT_KEYS
from .tasks import component_nodes
from .weights import LossWeights


def sgd_apply(model: Model, bound: BoundModel, grads: dict[int, np.ndarray],
              lr: float) -> None:
    for (modality, name), tensor in bound.bound_items():
        model.encoders[modality].params[name] -= lr * grads[tensor.id]


def train_model(model: Model, w: LossWeights, unlabeled: ClipSet, *,
                steps: int, batch_size: int, lr: float, seed: int,
                pool: ClipSet | None = None, stop_gradient: bool = False,
                on_step: Callable[[int, dict[str, float], float], None] | None = None,
                ) -> None:
    """Train all encoders in place for `steps` SGD steps."""
    active = [k for k in WEIGHT_KEYS if w[k] != 0.0]
    if not active:
        return  # zero total loss: parameters provably stay at initialization
    n = len(unlabeled)
    pool = pool if pool is not None else unlabeled
    for step in range(steps):
        idx = make_rng(seed, "batch", step).choice(n, size=batch_size,
                                                   replace=n < batch_size)
        batch = unlabeled.subset(idx)
        g = Graph()
        bound = BoundModel(g, model)
        nodes = component_nodes(g, bound, batch, pool=pool,
                                seed=derive_seed(seed, "step", step),
                                keys=active, stop_gradient=stop_gradient)
        total = wsum([nodes[k] for k in active], [w[k] for k in active])
        grads = backward(g, total)
        if on_step is not None:
            on_step(step, {k: float(nodes[k].data) for k in active}, float(total.data))
        sgd_apply(model, bound, grads, lr)
