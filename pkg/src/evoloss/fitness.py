"""Fitness of a weight vector: unsupervised training followed by clustering
of the learned RGB representations against held-out class labels.

The clustering-agreement score is normalized mutual information (sqrt
normalization), bounded in [0, 1] and invariant to relabeling; the adjusted
Rand index is computed alongside for cross-checking but never drives search.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .data import DataBundle
from .model import Model, embeddings
from .rngs import derive_seed, make_rng
from .schema import WEIGHT_KEYS
from .tasks import compute_all_losses
from .training import train_model
from .weights import LossWeights, validate


@dataclass(frozen=True)
class FitnessConfig:
    train_steps: int = 300
    batch_size: int = 16
    learning_rate: float = 0.05
    probe_size: int = 400
    kmeans_restarts: int = 4
    base_seed: int = 0

    def __post_init__(self):
        for name in ("train_steps", "batch_size", "probe_size", "kmeans_restarts"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass(frozen=True)
class FitnessResult:
    fitness: float
    ari: float
    components: dict[str, float]
    seed: int
    wall_time_ms: float

    @staticmethod
    def csv_header() -> str:
        return ",".join(["fitness", "ari", *WEIGHT_KEYS, "seed", "wall_time_ms"])

    def to_csv_row(self) -> str:
        comps = [repr(self.components.get(k, 0.0)) for k in WEIGHT_KEYS]
        return ",".join([repr(self.fitness), repr(self.ari), *comps,
                         str(self.seed), f"{self.wall_time_ms:.1f}"])


# ---------------------------------------------------------------------------
# clustering


def _pairwise_sq(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    p2 = (points * points).sum(axis=1)[:, None]
    c2 = (centers * centers).sum(axis=1)[None, :]
    return np.maximum(p2 + c2 - 2.0 * points @ centers.T, 0.0)


def wcss(points: np.ndarray, assignments: np.ndarray) -> float:
    total = 0.0
    for c in np.unique(assignments):
        member = points[assignments == c]
        total += float(((member - member.mean(axis=0)) ** 2).sum())
    return total


def _kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    for j in range(1, k):
        d2 = _pairwise_sq(points, centers[:j]).min(axis=1)
        total = d2.sum()
        if total <= 0.0:
            centers[j] = points[rng.integers(n)]
        else:
            centers[j] = points[rng.choice(n, p=d2 / total)]
    return centers


def _lloyd(points: np.ndarray, centers: np.ndarray, max_iter: int) -> tuple[np.ndarray, float]:
    n = points.shape[0]
    k = centers.shape[0]
    prev_wcss = np.inf
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        d2 = _pairwise_sq(points, centers)
        new_assign = d2.argmin(axis=1)
        cur = float(d2[np.arange(n), new_assign].sum())
        # Lloyd's algorithm never increases the objective; tiny fp slack only.
        assert cur <= prev_wcss + 1e-9 * max(1.0, abs(prev_wcss) if np.isfinite(prev_wcss) else 1.0), \
            f"WCSS increased: {prev_wcss} -> {cur}"
        converged = np.array_equal(new_assign, assign) and np.isfinite(prev_wcss)
        assign = new_assign
        prev_wcss = cur
        if converged:
            break
        for j in range(k):
            members = points[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
            else:
                # deterministic reseed: farthest point from its current center
                far = d2[np.arange(n), assign].argmax()
                centers[j] = points[far]
    return assign, wcss(points, assign)


def kmeans(points: np.ndarray, k: int, seed: int, *, restarts: int = 1,
           max_iter: int = 100) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; best of `restarts` runs."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not (1 <= k <= n):
        raise ValueError(f"need N >= k >= 1, got N={n} k={k}")
    best_assign, best_w = None, np.inf
    for r in range(restarts):
        rng = make_rng(seed, "kmeans", r)
        centers = _kmeanspp(points, k, rng)
        assign, w = _lloyd(points, centers.copy(), max_iter)
        if w < best_w:
            best_assign, best_w = assign, w
    return best_assign


# ---------------------------------------------------------------------------
# partition agreement


def _contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def nmi(assignments, labels) -> float:
    """I(a;l) / sqrt(H(a) H(l)).

    Convention for degenerate partitions: 1 when both sides are a single
    cluster (identical as partitions), 0 when exactly one side has zero
    entropy.
    """
    a = np.asarray(assignments)
    l = np.asarray(labels)
    if a.shape != l.shape or a.ndim != 1 or a.size == 0:
        raise ValueError(f"length mismatch: {a.shape} vs {l.shape}")
    table = _contingency(a, l)
    n = a.size
    pa = table.sum(axis=1) / n
    pb = table.sum(axis=0) / n
    ha = float(-(pa * np.log(pa, where=pa > 0, out=np.zeros_like(pa))).sum())
    hb = float(-(pb * np.log(pb, where=pb > 0, out=np.zeros_like(pb))).sum())
    if ha == 0.0 and hb == 0.0:
        return 1.0
    if ha == 0.0 or hb == 0.0:
        return 0.0
    pij = table / n
    outer = pa[:, None] * pb[None, :]
    nz = pij > 0
    mi = float((pij[nz] * np.log(pij[nz] / outer[nz])).sum())
    return float(min(1.0, max(0.0, mi / np.sqrt(ha * hb))))


def ari(assignments, labels) -> float:
    """Adjusted Rand index; logged for cross-checking, never drives search."""
    a = np.asarray(assignments)
    l = np.asarray(labels)
    if a.shape != l.shape or a.ndim != 1 or a.size == 0:
        raise ValueError(f"length mismatch: {a.shape} vs {l.shape}")
    table = _contingency(a, l)
    n = a.size

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    expected = sum_a * sum_b / comb2(n)
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0 if np.array_equal(_contingency(a, a), _contingency(a, l)) else 0.0
    return float((sum_ij - expected) / (max_index - expected))


# ---------------------------------------------------------------------------
# the fitness itself


def evaluate_fitness(w: LossWeights, data: DataBundle, cfg: FitnessConfig, *,
                     stop_gradient: bool = False) -> FitnessResult:
    """Fresh init, unsupervised training, k-means on probe embeddings, NMI."""
    violations = validate(w)
    if violations:
        raise ValueError("invalid weights: " + "; ".join(violations))
    if cfg.probe_size > len(data.probe):
        raise ValueError(f"probe_size {cfg.probe_size} exceeds probe set "
                         f"size {len(data.probe)}")
    started = time.perf_counter()
    model = Model(data.unlabeled.spec, seed=derive_seed(cfg.base_seed, "init"))
    train_model(model, w, data.unlabeled, steps=cfg.train_steps,
                batch_size=cfg.batch_size, lr=cfg.learning_rate,
                seed=derive_seed(cfg.base_seed, "train"),
                stop_gradient=stop_gradient)
    probe = data.probe.subset(range(cfg.probe_size))
    emb = embeddings(model.encoders["rgb"], probe)
    k = data.probe.spec.n_classes
    assign = kmeans(emb, k, derive_seed(cfg.base_seed, "cluster"),
                    restarts=cfg.kmeans_restarts)
    fit = nmi(assign, probe.class_ids)
    cross = ari(assign, probe.class_ids)
    final_rng = make_rng(cfg.base_seed, "final-batch")
    final_idx = final_rng.choice(len(data.unlabeled),
                                 size=min(cfg.batch_size, len(data.unlabeled)),
                                 replace=False)
    comps = compute_all_losses(model, data.unlabeled.subset(final_idx),
                               pool=data.unlabeled,
                               seed=derive_seed(cfg.base_seed, "final"),
                               stop_gradient=stop_gradient)
    elapsed_ms = (time.perf_counter() - started) * 1e3
    return FitnessResult(fitness=fit, ari=cross, components=comps,
                         seed=cfg.base_seed, wall_time_ms=elapsed_ms)
