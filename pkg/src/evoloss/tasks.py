"""The self-supervised task zoo.

Each task builds one scalar loss node inside a shared graph. Base forward
passes (untransformed inputs) are cached and reused across tasks and
distillation slots, so e.g. the RGB embedding is computed once per step no
matter how many losses consume it.

Randomness is keyed per component: every task derives its own generator from
(seed, "task", modality, task), so skipping a zero-weight component never
perturbs another component's draws.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (Graph, Tensor, add, affine, binary_ce, linear,
                       margin_mismatch, mse, mul, scale)
from .data import ClipSet, sample_misaligned_audio
from .distill import DistillSlot, distill_loss
from .model import (FUTURE_FRAMES, ActivationTrace, BoundModel, Model,
                    flatten_modality, head_gain)
from .rngs import make_rng
from .schema import WEIGHT_KEYS

JOINT_EMBED_MARGIN = 1.0


def _nonidentity_perm(rng: np.random.Generator, n: int) -> np.ndarray:
    while True:
        p = rng.permutation(n)
        if not np.array_equal(p, np.arange(n)):
            return p


class LossBuilder:
    """Builds the component losses of one training step in one graph."""

    def __init__(self, graph: Graph, bound: BoundModel, batch: ClipSet,
                 pool: ClipSet | None, seed: int):
        self.graph = graph
        self.bound = bound
        self.batch = batch
        self.pool = pool if pool is not None else batch
        self.seed = seed
        self._base: dict[str, ActivationTrace] = {}

    def base_trace(self, modality: str) -> ActivationTrace:
        tr = self._base.get(modality)
        if tr is None:
            tr = self.bound.forward(modality, flatten_modality(modality, self.batch))
            self._base[modality] = tr
        return tr

    def _rng(self, modality: str, task: str) -> np.random.Generator:
        return make_rng(self.seed, "task", modality, task)

    def _binary_head(self, modality: str, task: str, trace: ActivationTrace,
                     labels: np.ndarray) -> Tensor:
        w = self.bound.param(modality, f"{task}_w")
        b = self.bound.param(modality, f"{task}_b")
        logit = affine(trace.embedding, w, b)
        return binary_ce(logit, labels[:, None].astype(np.float64))

    def _order_task(self, modality: str, task: str, reverse: bool) -> Tensor:
        frames = getattr(self.batch, modality)
        n_frames = frames.shape[1]
        if not reverse and n_frames < 3:
            raise ValueError(f"shuffle needs >= 3 frames, got {n_frames}")
        rng = self._rng(modality, task)
        labels = rng.integers(0, 2, frames.shape[0])
        x = frames.copy()
        for i in np.flatnonzero(labels):
            if reverse:
                x[i] = x[i, ::-1]
            else:
                x[i] = x[i, _nonidentity_perm(rng, n_frames)]
        trace = self.bound.forward(modality, x.reshape(x.shape[0], -1))
        return self._binary_head(modality, task, trace, labels)

    def shuffle(self, modality: str) -> Tensor:
        """Detect whether frame order was scrambled by a non-identity permutation."""
        return self._order_task(modality, "shuffle", reverse=False)

    def reverse(self, modality: str) -> Tensor:
        """Detect exact frame reversal."""
        return self._order_task(modality, "reverse", reverse=True)

    def _regression_head(self, modality: str, name: str, emb: Tensor) -> Tensor:
        w = self.bound.param(modality, f"{name}_w")
        b = self.bound.param(modality, f"{name}_b")
        return scale(affine(emb, w, b), head_gain(name, w.data.shape))

    def colorize(self) -> Tensor:
        """Predict the clip's per-channel rgb means from the grey embedding."""
        trace = self.base_trace("grey")
        pred = self._regression_head("grey", "colorize", trace.embedding)
        target = self.graph.const(self.batch.rgb.mean(axis=(1, 3, 4)))
        return mse(pred, target)

    def audio_align(self) -> Tensor:
        """Score whether the audio channel belongs to the clip.

        The head is bilinear, logit = w3 . ((M^T e_rgb) * e_audio) + b: the
        multiplicative term lets the score express agreement between the two
        embeddings, which no additive linear head can.
        """
        if len(self.pool) < 2:
            raise ValueError(f"audio_align pool must hold >= 2 clips, got {len(self.pool)}")
        rng = self._rng("rgb", "audio_align")
        b = len(self.batch)
        labels = rng.integers(0, 2, b)   # 1 = aligned
        audio = self.batch.audio.copy()
        for i in np.flatnonzero(labels == 0):
            audio[i] = sample_misaligned_audio(self.batch[i], self.pool, rng)
        rgb_emb = self.base_trace("rgb").embedding
        aud_emb = self.bound.forward("audio", audio).embedding
        joint = mul(linear(rgb_emb, self.bound.param("rgb", "audio_align_w")), aud_emb)
        # same width correction as the regression heads, applied to the
        # E-dimensional joint feature the score sums over
        logit = scale(affine(joint, self.bound.param("audio", "audio_align_w"),
                             self.bound.param("rgb", "audio_align_b")),
                      float(np.sqrt(aud_emb.data.shape[1])))
        logit = add(logit, linear(rgb_emb, self.bound.param("rgb", "audio_align_u")))
        logit = add(logit, linear(aud_emb, self.bound.param("audio", "audio_align_u")))
        return binary_ce(logit, labels[:, None].astype(np.float64))

    def future_predict(self) -> Tensor:
        """Predict the last FUTURE_FRAMES grey frames from the earlier rgb frames."""
        t = self.batch.rgb.shape[1]
        if t < FUTURE_FRAMES + 1:
            raise ValueError(f"future_predict needs >= {FUTURE_FRAMES + 1} frames, got {t}")
        x = self.batch.rgb.copy()
        x[:, t - FUTURE_FRAMES:] = 0.0
        trace = self.bound.forward("rgb", x.reshape(x.shape[0], -1))
        pred = self._regression_head("rgb", "future_predict", trace.embedding)
        target = self.batch.grey[:, t - FUTURE_FRAMES:].reshape(len(self.batch), -1)
        return mse(pred, self.graph.const(target))

    def flow_predict(self) -> Tensor:
        """Regress the full flow tensor from the rgb embedding."""
        trace = self.base_trace("rgb")
        pred = self._regression_head("rgb", "flow_predict", trace.embedding)
        target = self.batch.flow.reshape(len(self.batch), -1)
        return mse(pred, self.graph.const(target))

    def joint_embed(self) -> Tensor:
        """Pull rgb/grey embeddings of the same clip together, push mismatched
        pairs at least JOINT_EMBED_MARGIN apart."""
        if len(self.batch) < 2:
            raise ValueError("joint_embed needs a batch of at least 2 clips")
        e_rgb = self.base_trace("rgb").embedding
        e_grey = self.base_trace("grey").embedding
        positive = scale(mse(e_rgb, e_grey), e_rgb.data.shape[1])
        negative = margin_mismatch(e_rgb, e_grey, JOINT_EMBED_MARGIN)
        return add(positive, negative)

    def task_node(self, modality: str, task: str) -> Tensor:
        if task in ("shuffle", "reverse"):
            return getattr(self, task)(modality)
        return getattr(self, task)()

    def distill_node(self, modality: str, layer: str, *, stop_gradient: bool = False) -> Tensor:
        return distill_loss(self.base_trace("rgb"), self.base_trace(modality),
                            DistillSlot(modality, layer), stop_gradient=stop_gradient)


def component_nodes(graph: Graph, bound: BoundModel, batch: ClipSet, *,
                    pool: ClipSet | None = None, seed: int = 0,
                    keys=None, stop_gradient: bool = False) -> dict[str, Tensor]:
    """Loss nodes for the requested component keys (default: all 16)."""
    builder = LossBuilder(graph, bound, batch, pool, seed)
    out: dict[str, Tensor] = {}
    for key in (WEIGHT_KEYS if keys is None else keys):
        kind, modality, tail = key.split(".")
        if kind == "task":
            out[key] = builder.task_node(modality, tail)
        else:
            out[key] = builder.distill_node(modality, tail, stop_gradient=stop_gradient)
    return out


def single_component(model: Model, batch: ClipSet, key: str, *,
                     pool: ClipSet | None = None, seed: int = 0,
                     stop_gradient: bool = False) -> tuple[Graph, Tensor]:
    """One component loss in its own graph; handy for gradient checks."""
    g = Graph()
    bound = BoundModel(g, model)
    node = component_nodes(g, bound, batch, pool=pool, seed=seed, keys=[key],
                           stop_gradient=stop_gradient)[key]
    return g, node


def compute_all_losses(model: Model, batch: ClipSet, *, pool: ClipSet | None = None,
                       seed: int = 0, stop_gradient: bool = False) -> dict[str, float]:
    """Every component's loss value; keys exactly match the weight index."""
    g = Graph()
    bound = BoundModel(g, model)
    nodes = component_nodes(g, bound, batch, pool=pool, seed=seed,
                            stop_gradient=stop_gradient)
    return {k: float(nodes[k].data) for k in WEIGHT_KEYS}
