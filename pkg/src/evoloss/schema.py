"""The fixed search-space layout: which (modality, task) cells and
distillation slots exist, and the canonical key order used everywhere a
weight vector is serialized (configs, history files, reports)."""

from __future__ import annotations

MODALITIES = ("rgb", "audio", "flow", "grey")

# One weighted loss per cell. Binary order-detection tasks run on every
# temporal modality that supports them; the cross-modal tasks are keyed under
# the modality whose encoder they primarily shape.
TASK_CELLS: tuple[tuple[str, str], ...] = (
    ("rgb", "shuffle"),
    ("rgb", "reverse"),
    ("rgb", "audio_align"),
    ("rgb", "future_predict"),
    ("rgb", "flow_predict"),
    ("rgb", "joint_embed"),
    ("flow", "shuffle"),
    ("flow", "reverse"),
    ("grey", "shuffle"),
    ("grey", "colorize"),
)

# Activation-matching regularizers pulling the RGB network toward each other
# modality, at two depths.
DISTILL_LAYERS = ("layer1", "embedding")
DISTILL_SLOTS: tuple[tuple[str, str], ...] = tuple(
    (modality, layer)
    for modality in ("audio", "flow", "grey")
    for layer in DISTILL_LAYERS
)

TASK_KEYS = tuple(f"task.{m}.{t}" for m, t in TASK_CELLS)
DISTILL_KEYS = tuple(f"distill.{m}.{layer}" for m, layer in DISTILL_SLOTS)
WEIGHT_KEYS: tuple[str, ...] = TASK_KEYS + DISTILL_KEYS
N_WEIGHTS = len(WEIGHT_KEYS)

KEY_INDEX = {k: i for i, k in enumerate(WEIGHT_KEYS)}

# Single-letter task codes used in heatmap reports.
TASK_LETTERS = {
    "shuffle": "S",
    "reverse": "B",
    "colorize": "C",
    "audio_align": "A",
    "future_predict": "P",
    "flow_predict": "F",
    "joint_embed": "E",
}


def task_key(modality: str, task: str) -> str:
    return f"task.{modality}.{task}"


def distill_key(modality: str, layer: str) -> str:
    return f"distill.{modality}.{layer}"
