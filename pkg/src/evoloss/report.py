"""Figure-data emission from a finished history: per-weight trajectories of
the best-so-far individual, the final-weights heatmap (CSV grid plus a
self-contained SVG), and the fitness curve. CSV-first: the SVG is a rendering
convenience, the data files are the contract."""

from __future__ import annotations

import numpy as np

from .evolution import EvolutionHistory, Individual
from .schema import (DISTILL_LAYERS, DISTILL_SLOTS, TASK_CELLS, TASK_LETTERS,
                     WEIGHT_KEYS, distill_key, task_key)
from .weights import LossWeights

HEATMAP_ROWS = ("rgb", "audio", "flow", "grey")
HEATMAP_COLS = ("S", "B", "C", "A", "P", "F", "E", "D1", "D2")


def _comment(comment: str | None) -> str:
    return f"# {comment}\n" if comment else ""


def best_so_far_individuals(history: EvolutionHistory) -> list[Individual]:
    """Index r = the best individual after round r."""
    inds = history.individuals
    p = history.population_size
    best = max(inds[:p], key=lambda i: (i.fitness, -i.id))
    out = [best]
    for child in inds[p:]:
        if child.fitness > best.fitness:
            best = child
        out.append(best)
    return out


def trajectory_csv(history: EvolutionHistory, comment: str | None = None) -> str:
    rows = [_comment(comment), "round," + ",".join(WEIGHT_KEYS) + ",fitness\n"]
    for r, ind in enumerate(best_so_far_individuals(history)):
        weights = [f"{v:.6f}" for v in ind.weights.values]
        rows.append(",".join([str(r), *weights, repr(float(ind.fitness))]) + "\n")
    return "".join(rows)


def fitness_curve_csv(history: EvolutionHistory, comment: str | None = None) -> str:
    rows = [_comment(comment), "round,fitness,best_so_far\n"]
    p = history.population_size
    evaluated = [max(i.fitness for i in history.individuals[:p])]
    evaluated += [i.fitness for i in history.individuals[p:]]
    for r, (fit, best) in enumerate(zip(evaluated, history.best_so_far)):
        rows.append(f"{r},{fit!r},{best!r}\n")
    return "".join(rows)


def heatmap_grid(w: LossWeights) -> list[list[float | None]]:
    """4 modalities x 9 task letters; None marks cells outside the grid.
    Exactly the 16 weight coordinates are filled."""
    grid: list[list[float | None]] = [[None] * len(HEATMAP_COLS)
                                      for _ in HEATMAP_ROWS]
    row_of = {m: i for i, m in enumerate(HEATMAP_ROWS)}
    col_of = {c: i for i, c in enumerate(HEATMAP_COLS)}
    for modality, task in TASK_CELLS:
        grid[row_of[modality]][col_of[TASK_LETTERS[task]]] = w[task_key(modality, task)]
    for modality, layer in DISTILL_SLOTS:
        col = "D1" if layer == DISTILL_LAYERS[0] else "D2"
        grid[row_of[modality]][col_of[col]] = w[distill_key(modality, layer)]
    return grid


def heatmap_csv(w: LossWeights, comment: str | None = None) -> str:
    rows = [_comment(comment), "modality," + ",".join(HEATMAP_COLS) + "\n"]
    for name, row in zip(HEATMAP_ROWS, heatmap_grid(w)):
        cells = ["" if v is None else f"{v:.6f}" for v in row]
        rows.append(",".join([name, *cells]) + "\n")
    return "".join(rows)


def _color(v: float) -> str:
    # dark blue -> yellow, perceptually rough but dependency-free
    lo = np.array([20.0, 42.0, 66.0])
    hi = np.array([250.0, 220.0, 48.0])
    r, g, b = (lo + (hi - lo) * float(v)).round().astype(int)
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(w: LossWeights, comment: str | None = None) -> str:
    cell, pad_left, pad_top = 52, 64, 40
    width = pad_left + cell * len(HEATMAP_COLS) + 10
    height = pad_top + cell * len(HEATMAP_ROWS) + 10
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" font-family="monospace" font-size="12">']
    if comment:
        parts.append(f"<!-- {comment} -->")
    for j, col in enumerate(HEATMAP_COLS):
        x = pad_left + j * cell + cell // 2
        parts.append(f'<text x="{x}" y="{pad_top - 12}" text-anchor="middle">{col}</text>')
    for i, (name, row) in enumerate(zip(HEATMAP_ROWS, heatmap_grid(w))):
        y = pad_top + i * cell
        parts.append(f'<text x="{pad_left - 8}" y="{y + cell // 2 + 4}" '
                     f'text-anchor="end">{name}</text>')
        for j, v in enumerate(row):
            x = pad_left + j * cell
            if v is None:
                parts.append(f'<rect x="{x}" y="{y}" width="{cell - 2}" '
                             f'height="{cell - 2}" fill="none" stroke="#ccc"/>')
                continue
            parts.append(f'<rect x="{x}" y="{y}" width="{cell - 2}" '
                         f'height="{cell - 2}" fill="{_color(v)}"/>')
            text_fill = "#ffffff" if v < 0.5 else "#000000"
            parts.append(f'<text x="{x + cell // 2 - 1}" y="{y + cell // 2 + 4}" '
                         f'text-anchor="middle" fill="{text_fill}">{v:.2f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
