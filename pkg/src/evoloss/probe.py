"""Downstream evaluation of a trained RGB encoder on held-out labeled clips:
k-means clustering accuracy, a linear probe, and full fine-tuning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, affine, backward, relu, softmax_ce
from .data import ClipSet
from .fitness import kmeans
from .model import Encoder, embeddings, flatten_modality
from .rngs import make_rng

PROBE_STEPS = 500
PROBE_LR = 0.5
FINETUNE_STEPS = 500
FINETUNE_LR = 0.05
FINETUNE_BATCH = 32


@dataclass(frozen=True)
class EvalReport:
    kmeans_acc: float
    probe_acc: float
    finetune_acc: float
    seed: int

    def __post_init__(self):
        for name in ("kmeans_acc", "probe_acc", "finetune_acc"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} = {v} outside [0, 1]")


def _head_init(rng: np.random.Generator, d: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    limit = np.sqrt(6.0 / (d + k))
    return rng.uniform(-limit, limit, (d, k)), np.zeros(k)


def kmeans_label_accuracy(emb: np.ndarray, labels: np.ndarray, k: int, seed: int,
                          *, restarts: int = 4) -> float:
    """Cluster embeddings with k clusters; map clusters to labels by majority
    vote on a held-in half; report accuracy on the held-out half."""
    assign = kmeans(emb, k, make_rng(seed, "eval-kmeans").integers(2 ** 32),
                    restarts=restarts)
    perm = make_rng(seed, "split").permutation(len(labels))
    held_in, held_out = perm[: len(labels) // 2], perm[len(labels) // 2:]
    overall = np.bincount(labels[held_in], minlength=k).argmax()
    mapping = np.full(k, overall)
    for c in range(k):
        members = held_in[assign[held_in] == c]
        if len(members):
            mapping[c] = np.bincount(labels[members], minlength=k).argmax()
    pred = mapping[assign[held_out]]
    return float((pred == labels[held_out]).mean())


def linear_probe_accuracy(emb_train: np.ndarray, y_train: np.ndarray,
                          emb_test: np.ndarray, y_test: np.ndarray, k: int,
                          seed: int, *, steps: int = PROBE_STEPS,
                          lr: float = PROBE_LR) -> float:
    """Full-batch softmax-regression head on fixed embeddings."""
    w, b = _head_init(make_rng(seed, "probe-head"), emb_train.shape[1], k)
    for _ in range(steps):
        g = Graph()
        logits = affine(g.const(emb_train), g.param(w), g.param(b))
        loss = softmax_ce(logits, y_train)
        grads = backward(g, loss)
        w -= lr * grads[logits.inputs[1].id]
        b -= lr * grads[logits.inputs[2].id]
    pred = (emb_test @ w + b).argmax(axis=1)
    return float((pred == y_test).mean())


def eval_kmeans(enc: Encoder, test: ClipSet, seed: int, *, restarts: int = 4) -> float:
    if len(test) == 0:
        raise ValueError("test set is empty")
    return kmeans_label_accuracy(embeddings(enc, test), test.class_ids,
                                 test.spec.n_classes, seed, restarts=restarts)


def eval_linear_probe(enc: Encoder, train: ClipSet, test: ClipSet, seed: int, *,
                      steps: int = PROBE_STEPS, lr: float = PROBE_LR) -> float:
    """Train one affine layer + softmax cross-entropy on frozen embeddings.

    The encoder is asserted bit-identical before and after.
    """
    frozen = enc.state_bytes()
    emb_train = embeddings(enc, train)
    emb_test = embeddings(enc, test)
    acc = linear_probe_accuracy(emb_train, train.class_ids, emb_test,
                                test.class_ids, train.spec.n_classes, seed,
                                steps=steps, lr=lr)
    assert enc.state_bytes() == frozen, "probe must not touch encoder parameters"
    return acc


def eval_finetune(enc: Encoder, train: ClipSet, test: ClipSet, fraction: float,
                  seed: int, *, steps: int = FINETUNE_STEPS, lr: float = FINETUNE_LR,
                  batch_size: int = FINETUNE_BATCH) -> float:
    """Copy the encoder and train all of it plus a classifier head on the
    given fraction of the labeled training split."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    tuned = enc.clone()
    n_sub = max(1, int(round(fraction * len(train))))
    order = make_rng(seed, "finetune-subset").permutation(len(train))
    sub = train.subset(order[:n_sub])
    x_sub = flatten_modality(tuned.modality, sub)
    k = train.spec.n_classes
    w_head, b_head = _head_init(make_rng(seed, "finetune-head"),
                                tuned.params["w2"].shape[1], k)
    for step in range(steps):
        idx = make_rng(seed, "finetune-batch", step).choice(
            n_sub, size=min(batch_size, n_sub), replace=n_sub < batch_size)
        g = Graph()
        x = g.const(x_sub[idx])
        params = {name: g.param(arr) for name, arr in
                  ((n, tuned.params[n]) for n in ("w1", "b1", "w2", "b2"))}
        h = relu(affine(x, params["w1"], params["b1"]))
        e = relu(affine(h, params["w2"], params["b2"]))
        wt, bt = g.param(w_head), g.param(b_head)
        loss = softmax_ce(affine(e, wt, bt), sub.class_ids[idx])
        grads = backward(g, loss)
        for name, t in params.items():
            tuned.params[name] -= lr * grads[t.id]
        w_head -= lr * grads[wt.id]
        b_head -= lr * grads[bt.id]
    emb_test = embeddings(tuned, test)
    pred = (emb_test @ w_head + b_head).argmax(axis=1)
    return float((pred == test.class_ids).mean())


def full_report(enc: Encoder, train: ClipSet, test: ClipSet, seed: int, *,
                finetune_fraction: float = 1.0) -> EvalReport:
    return EvalReport(kmeans_acc=eval_kmeans(enc, test, seed),
                      probe_acc=eval_linear_probe(enc, train, test, seed),
                      finetune_acc=eval_finetune(enc, train, test,
                                                 finetune_fraction, seed),
                      seed=seed)
