import numpy as np
import pytest

from evoloss.autodiff import Graph, ShapeError, backward
from evoloss.distill import SLOTS, DistillSlot, distill_loss
from evoloss.model import BoundModel, Model, ModelConfig, flatten_modality
from evoloss.schema import DISTILL_KEYS
from evoloss.tasks import component_nodes, compute_all_losses, single_component
from evoloss.training import train_model
from evoloss.weights import LossWeights

from conftest import tiny_spec

TINY_CFG = ModelConfig(hidden=8, embed=16)


def test_six_slots_exist():
    assert len(SLOTS) == 6
    assert {s.source_modality for s in SLOTS} == {"audio", "flow", "grey"}
    assert {s.layer for s in SLOTS} == {"layer1", "embedding"}


def _traces(model, batch, g=None):
    g = g or Graph()
    bound = BoundModel(g, model)
    return g, {m: bound.forward(m, flatten_modality(m, batch)) for m in model.encoders}


def test_identical_traces_give_zero(tiny_set):
    model = Model(tiny_spec(), TINY_CFG, seed=0)
    g, tr = _traces(model, tiny_set.subset(range(4)))
    slot = DistillSlot("grey", "embedding")
    assert float(distill_loss(tr["rgb"], tr["rgb"], slot).data) == 0.0


def test_unit_gap_at_embedding():
    from evoloss.model import ActivationTrace
    g = Graph()
    zeros = ActivationTrace(layer1=g.const(np.zeros((3, 4))),
                            embedding=g.param(np.zeros((3, 5))))
    ones = ActivationTrace(layer1=g.const(np.ones((3, 4))),
                           embedding=g.const(np.ones((3, 5))))
    out = distill_loss(zeros, ones, DistillSlot("grey", "embedding"))
    assert float(out.data) == 1.0


def test_penalty_value_is_symmetric(tiny_set):
    model = Model(tiny_spec(), TINY_CFG, seed=1)
    g, tr = _traces(model, tiny_set.subset(range(5)))
    for slot in SLOTS:
        a = float(distill_loss(tr["rgb"], tr[slot.source_modality], slot).data)
        b = float(distill_loss(tr[slot.source_modality], tr["rgb"], slot).data)
        assert abs(a - b) < 1e-12


def test_batch_misalignment_rejected(tiny_set):
    model = Model(tiny_spec(), TINY_CFG, seed=1)
    _, tr_a = _traces(model, tiny_set.subset(range(4)))
    _, tr_b = _traces(model, tiny_set.subset(range(3)))
    with pytest.raises(ShapeError, match="batch"):
        distill_loss(tr_a["rgb"], tr_b["grey"], DistillSlot("grey", "layer1"))


@pytest.mark.parametrize("key", DISTILL_KEYS)
def test_gradients_reach_both_networks(key, tiny_set):
    _, modality, layer = key.split(".")
    model = Model(tiny_spec(), TINY_CFG, seed=2)
    g, node = single_component(model, tiny_set.subset(range(3)), key)
    grads = backward(g, node)
    bound_ids = {mk: t.id for mk, t in g.params.items() for mk in ()}  # unused
    touched = {pid for pid, arr in grads.items() if np.any(arr != 0.0)}
    mods = set()
    for n in g.nodes:
        if n.is_param and n.id in touched:
            mods.add(id(n.data))
    rgb_arrays = {id(a) for a in model.encoders["rgb"].params.values()}
    other_arrays = {id(a) for a in model.encoders[modality].params.values()}
    assert mods & rgb_arrays, "no gradient reached the rgb encoder"
    assert mods & other_arrays, f"no gradient reached the {modality} encoder"


def test_stop_gradient_freezes_other_side(tiny_set):
    model = Model(tiny_spec(), TINY_CFG, seed=3)
    g, node = single_component(model, tiny_set.subset(range(3)),
                               "distill.audio.embedding", stop_gradient=True)
    grads = backward(g, node)
    audio_arrays = {id(a) for a in model.encoders["audio"].params.values()}
    for n in g.nodes:
        if n.is_param and id(n.data) in audio_arrays:
            assert not np.any(grads[n.id]), "gradient leaked into the audio encoder"


@pytest.mark.parametrize("key", ["distill.flow.layer1", "distill.audio.embedding"])
def test_single_slot_training_shrinks_the_gap(key, tiny_set):
    model = Model(tiny_spec(), TINY_CFG, seed=4)
    w = LossWeights.single(key)
    before = compute_all_losses(model, tiny_set.subset(range(8)), pool=tiny_set,
                                seed=0)[key]
    train_model(model, w, tiny_set, steps=300, batch_size=4, lr=0.05, seed=0)
    after = compute_all_losses(model, tiny_set.subset(range(8)), pool=tiny_set,
                               seed=0)[key]
    assert after < before


def test_rgb_gradients_independent_of_other_modalities_when_distill_off(tiny_set):
    # rgb-local tasks only; all distillation weights zero
    keys = ["task.rgb.shuffle", "task.rgb.reverse", "task.rgb.future_predict",
            "task.rgb.flow_predict"]
    batch = tiny_set.subset(range(4))

    def rgb_grads(model):
        from evoloss.autodiff import wsum
        g = Graph()
        bound = BoundModel(g, model)
        nodes = component_nodes(g, bound, batch, pool=tiny_set, seed=5, keys=keys)
        total = wsum([nodes[k] for k in keys], [1.0] * len(keys))
        grads = backward(g, total)
        return {name: grads[t.id].copy() for (mod, name), t in bound.bound_items()
                if mod == "rgb"}

    model_a = Model(tiny_spec(), TINY_CFG, seed=6)
    model_b = model_a.clone()
    for mod in ("audio", "flow", "grey"):
        for arr in model_b.encoders[mod].params.values():
            arr += 123.0
    ga, gb = rgb_grads(model_a), rgb_grads(model_b)
    assert set(ga) == set(gb)
    for name in ga:
        np.testing.assert_array_equal(ga[name], gb[name])
