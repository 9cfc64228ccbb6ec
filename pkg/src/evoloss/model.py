"""Per-modality encoder networks.

Every encoder is two affine+relu blocks over the flattened modality input
(input -> hidden -> embedding) plus the linear heads of the tasks keyed under
its modality. Embeddings share one width across modalities so distillation
and the joint-embedding task compare like with like.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, Tensor, affine, relu
from .data import ClipSet, DatasetSpec
from .rngs import make_rng
from .schema import MODALITIES

HIDDEN_DIM = 64
EMBED_DIM = 16
FUTURE_FRAMES = 4   # frames the future-prediction task must reconstruct


class ModalityError(ValueError):
    """Batch modality does not match the encoder."""


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = HIDDEN_DIM
    embed: int = EMBED_DIM


@dataclass(frozen=True)
class ActivationTrace:
    """One forward pass: the hidden layer and the embedding, as graph nodes."""
    layer1: Tensor
    embedding: Tensor


def input_dim(modality: str, spec: DatasetSpec) -> int:
    t, h, w = spec.frames, spec.height, spec.width
    return {
        "rgb": t * 3 * h * w,
        "grey": t * h * w,
        "flow": (t - 1) * 2 * h * w,
        "audio": spec.audio_samples,
    }[modality]


def flatten_modality(modality: str, batch: ClipSet) -> np.ndarray:
    arr = getattr(batch, modality)
    return arr.reshape(arr.shape[0], -1)


def _head_shapes(modality: str, spec: DatasetSpec, embed: int) -> dict[str, tuple[int, ...]]:
    hw = spec.height * spec.width
    shapes: dict[str, tuple[int, ...]] = {}
    if modality == "rgb":
        shapes.update(shuffle_w=(embed, 1), shuffle_b=(1,),
                      reverse_w=(embed, 1), reverse_b=(1,),
                      # bilinear interaction: a linear score of the two
                      # embeddings cannot express agreement between them
                      audio_align_w=(embed, embed), audio_align_u=(embed, 1),
                      audio_align_b=(1,),
                      future_predict_w=(embed, FUTURE_FRAMES * hw),
                      future_predict_b=(FUTURE_FRAMES * hw,),
                      flow_predict_w=(embed, (spec.frames - 1) * 2 * hw),
                      flow_predict_b=((spec.frames - 1) * 2 * hw,))
    elif modality == "audio":
        shapes.update(audio_align_w=(embed, 1), audio_align_u=(embed, 1))
    elif modality == "flow":
        shapes.update(shuffle_w=(embed, 1), shuffle_b=(1,),
                      reverse_w=(embed, 1), reverse_b=(1,))
    elif modality == "grey":
        shapes.update(shuffle_w=(embed, 1), shuffle_b=(1,),
                      colorize_w=(embed, 3), colorize_b=(3,))
    return shapes


def head_gain(name: str, shape: tuple[int, ...]) -> float:
    """Output multiplier for regression heads.

    Under plain SGD a mean-over-all-elements mse gives head gradients a 1/D
    factor for D output dims, so wide heads would need ~D times more steps
    than narrow ones. Writing the head as sqrt(D) * (e @ w_raw) with w_raw
    initialized 1/sqrt(D) smaller leaves the initial function unchanged but
    makes the effective per-output learning rate width-independent.
    """
    if name.split("_")[0] in ("future", "flow", "colorize") and len(shape) == 2:
        return float(np.sqrt(shape[1]))
    return 1.0


def _init(shape: tuple[int, ...], rng: np.random.Generator, gain: float = 1.0) -> np.ndarray:
    if len(shape) == 1:
        return np.zeros(shape)
    fan_in, fan_out = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape) / gain


class Encoder:
    def __init__(self, modality: str, spec: DatasetSpec, cfg: ModelConfig, seed: int):
        self.modality = modality
        self.in_dim = input_dim(modality, spec)
        rng = make_rng(seed, "enc", modality)
        self.params: dict[str, np.ndarray] = {
            "w1": _init((self.in_dim, cfg.hidden), rng),
            "b1": np.zeros(cfg.hidden),
            "w2": _init((cfg.hidden, cfg.embed), rng),
            "b2": np.zeros(cfg.embed),
        }
        for name, shape in _head_shapes(modality, spec, cfg.embed).items():
            self.params[name] = _init(shape, rng, gain=head_gain(name, shape))

    def clone(self) -> "Encoder":
        out = object.__new__(Encoder)
        out.modality = self.modality
        out.in_dim = self.in_dim
        out.params = {k: v.copy() for k, v in self.params.items()}
        return out

    def state_bytes(self) -> bytes:
        return b"".join(self.params[k].tobytes() for k in sorted(self.params))


class Model:
    """The four encoders trained jointly under one weighted loss."""

    def __init__(self, spec: DatasetSpec, cfg: ModelConfig | None = None, *, seed: int = 0):
        self.spec = spec
        self.cfg = cfg or ModelConfig()
        self.encoders = {m: Encoder(m, spec, self.cfg, seed) for m in MODALITIES}

    def clone(self) -> "Model":
        out = object.__new__(Model)
        out.spec = self.spec
        out.cfg = self.cfg
        out.encoders = {m: e.clone() for m, e in self.encoders.items()}
        return out

    def named_params(self):
        for m in MODALITIES:
            for name, arr in self.encoders[m].params.items():
                yield (m, name), arr

    def state_bytes(self) -> bytes:
        return b"".join(self.encoders[m].state_bytes() for m in MODALITIES)


class BoundModel:
    """Per-graph view of a Model: parameters are wrapped lazily so graphs only
    register what their losses actually touch."""

    def __init__(self, graph: Graph, model: Model):
        self.graph = graph
        self.model = model
        self._bound: dict[tuple[str, str], Tensor] = {}

    def param(self, modality: str, name: str) -> Tensor:
        key = (modality, name)
        t = self._bound.get(key)
        if t is None:
            t = self.graph.param(self.model.encoders[modality].params[name])
            self._bound[key] = t
        return t

    def bound_items(self):
        return self._bound.items()

    def forward(self, modality: str, x: np.ndarray) -> ActivationTrace:
        xt = self.graph.const(x)
        h = relu(affine(xt, self.param(modality, "w1"), self.param(modality, "b1")))
        e = relu(affine(h, self.param(modality, "w2"), self.param(modality, "b2")))
        return ActivationTrace(layer1=h, embedding=e)


def encode(enc: Encoder, batch: ClipSet) -> ActivationTrace:
    """Deterministic forward pass of one encoder over a clip batch."""
    x = flatten_modality(enc.modality, batch)
    if x.shape[1] != enc.in_dim:
        raise ModalityError(
            f"{enc.modality} encoder expects input dim {enc.in_dim}, got {x.shape[1]}")
    g = Graph()
    xt = g.const(x)
    h = relu(affine(xt, g.param(enc.params["w1"]), g.param(enc.params["b1"])))
    e = relu(affine(h, g.param(enc.params["w2"]), g.param(enc.params["b2"])))
    return ActivationTrace(layer1=h, embedding=e)


def embeddings(enc: Encoder, batch: ClipSet) -> np.ndarray:
    return encode(enc, batch).embedding.data
