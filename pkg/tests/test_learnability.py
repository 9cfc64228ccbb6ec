"""Each task alone (weight 1, everything else 0) must beat its uninformed
baseline after the standard 300-step training budget on default-size data."""

import numpy as np
import pytest

from evoloss.data import make_bundle
from evoloss.model import Model
from evoloss.rngs import derive_seed, make_rng
from evoloss.tasks import compute_all_losses
from evoloss.training import train_model
from evoloss.weights import LossWeights

LN2 = float(np.log(2.0))

BINARY_KEYS = {"task.rgb.shuffle", "task.rgb.reverse", "task.rgb.audio_align",
               "task.flow.shuffle", "task.flow.reverse", "task.grey.shuffle"}


@pytest.fixture(scope="session")
def default_bundle():
    return make_bundle(n_unlabeled=2000, n_probe=400, n_test=400, n_classes=8,
                       frames=8, height=8, width=8, audio_samples=64,
                       seed=derive_seed(0, "data"))


def _eval_batches(bundle, n_batches=5, batch_size=16):
    rng = make_rng(99, "learnability-eval")
    return [bundle.unlabeled.subset(rng.choice(len(bundle.unlabeled), batch_size,
                                               replace=False))
            for _ in range(n_batches)]


def _mean_loss(model, key, batches, pool):
    vals = [compute_all_losses(model, b, pool=pool, seed=1234 + i)[key]
            for i, b in enumerate(batches)]
    return float(np.mean(vals))


def _trained(key, bundle, steps=300):
    model = Model(bundle.unlabeled.spec, seed=derive_seed(0, "init"))
    train_model(model, LossWeights.single(key), bundle.unlabeled, steps=steps,
                batch_size=16, lr=0.05, seed=derive_seed(0, "train"))
    return model


@pytest.mark.parametrize("key", sorted(BINARY_KEYS))
def test_binary_tasks_beat_ln2(key, default_bundle):
    batches = _eval_batches(default_bundle)
    model = _trained(key, default_bundle)
    loss = _mean_loss(model, key, batches, default_bundle.unlabeled)
    assert loss < LN2, f"{key}: {loss:.4f} !< ln2"


def test_audio_align_reaches_half_nat(default_bundle):
    batches = _eval_batches(default_bundle)
    model = _trained("task.rgb.audio_align", default_bundle)
    loss = _mean_loss(model, "task.rgb.audio_align", batches, default_bundle.unlabeled)
    assert loss < 0.5, f"audio_align loss {loss:.4f} !< 0.5"


@pytest.mark.parametrize("key,target_of", [
    ("task.grey.colorize", lambda b: b.rgb.mean(axis=(1, 3, 4))),
    ("task.rgb.future_predict", lambda b: b.grey[:, b.rgb.shape[1] - 4:]),
    ("task.rgb.flow_predict", lambda b: b.flow),
])
def test_regression_tasks_beat_zero_head(key, target_of, default_bundle):
    batches = _eval_batches(default_bundle)
    zero_head_baseline = float(np.mean(
        [np.mean(target_of(b) ** 2) for b in batches]))
    model = _trained(key, default_bundle)
    loss = _mean_loss(model, key, batches, default_bundle.unlabeled)
    assert loss < zero_head_baseline, f"{key}: {loss:.4f} !< {zero_head_baseline:.4f}"


def test_joint_embed_improves_on_initialization(default_bundle):
    batches = _eval_batches(default_bundle)
    key = "task.rgb.joint_embed"
    init_model = Model(default_bundle.unlabeled.spec, seed=derive_seed(0, "init"))
    before = _mean_loss(init_model, key, batches, default_bundle.unlabeled)
    model = _trained(key, default_bundle)
    after = _mean_loss(model, key, batches, default_bundle.unlabeled)
    assert after < before


def test_hand_tuned_align_plus_flow_beats_random_init_fitness(default_bundle):
    # alignment + flow regression together must clear the untrained baseline
    # by a solid NMI margin
    from evoloss.fitness import FitnessConfig, evaluate_fitness
    from evoloss.schema import KEY_INDEX
    cfg = FitnessConfig(base_seed=derive_seed(0, "fitness"))
    baseline = evaluate_fitness(LossWeights.zeros(), default_bundle, cfg).fitness
    hand = (LossWeights.zeros()
            .with_value(KEY_INDEX["task.rgb.audio_align"], 1.0)
            .with_value(KEY_INDEX["task.rgb.flow_predict"], 1.0))
    tuned = evaluate_fitness(hand, default_bundle, cfg).fitness
    assert tuned >= baseline + 0.05, f"{tuned:.3f} vs baseline {baseline:.3f}"


def test_flow_predict_drops_30_percent(default_bundle):
    key = "task.rgb.flow_predict"
    first: list[float] = []

    def on_step(step, comps, total):
        if step == 0:
            first.append(comps[key])

    model = Model(default_bundle.unlabeled.spec, seed=derive_seed(0, "init"))
    train_model(model, LossWeights.single(key), default_bundle.unlabeled,
                steps=300, batch_size=16, lr=0.05, seed=derive_seed(0, "train"),
                on_step=on_step)
    batches = _eval_batches(default_bundle)
    final = _mean_loss(model, key, batches, default_bundle.unlabeled)
    assert final <= 0.7 * first[0], f"{final:.5f} vs first {first[0]:.5f}"
