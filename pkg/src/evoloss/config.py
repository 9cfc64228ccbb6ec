"""Run configuration.

Grammar of a config file: one `key = value` assignment per line; blank lines
and lines starting with `#` are skipped; values are parsed by the declared
type of the key. Unknown keys are errors. Every key is optional and falls back
to its default. The single `seed` key drives every derived generator; the
component configs never carry independently chosen seeds.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .data import DataBundle, make_bundle
from .evolution import EvolutionConfig
from .fitness import FitnessConfig
from .rngs import derive_seed


class ConfigError(ValueError):
    """Malformed configuration file or unknown key."""


@dataclass(frozen=True)
class DataConfig:
    n_unlabeled: int = 2000
    n_probe: int = 400
    n_test: int = 400
    n_classes: int = 8
    frames: int = 8
    height: int = 8
    width: int = 8
    audio_samples: int = 64


@dataclass(frozen=True)
class EvalConfig:
    pretrain_steps: int = 300
    probe_steps: int = 500
    finetune_steps: int = 500
    kmeans_restarts: int = 4


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    workers: int = 1
    stop_gradient: bool = False
    data: DataConfig = field(default_factory=DataConfig)
    fitness: FitnessConfig = field(default_factory=FitnessConfig)
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def bundle(self) -> DataBundle:
        d = self.data
        return make_bundle(n_unlabeled=d.n_unlabeled, n_probe=d.n_probe,
                           n_test=d.n_test, n_classes=d.n_classes,
                           frames=d.frames, height=d.height, width=d.width,
                           audio_samples=d.audio_samples,
                           seed=derive_seed(self.seed, "data"))


_BOOL = {"true": True, "false": False, "1": True, "0": False,
         "yes": True, "no": False}

# key -> (section, field, type)
_KEYS: dict[str, tuple[str, str, type]] = {
    "seed": ("", "seed", int),
    "workers": ("", "workers", int),
    "distill.stop_gradient": ("", "stop_gradient", bool),
    **{f"data.{f}": ("data", f, int) for f in
       ("n_unlabeled", "n_probe", "n_test", "n_classes", "frames", "height",
        "width", "audio_samples")},
    "fitness.train_steps": ("fitness", "train_steps", int),
    "fitness.batch_size": ("fitness", "batch_size", int),
    "fitness.learning_rate": ("fitness", "learning_rate", float),
    "fitness.probe_size": ("fitness", "probe_size", int),
    "fitness.kmeans_restarts": ("fitness", "kmeans_restarts", int),
    "evolution.population_size": ("evolution", "population_size", int),
    "evolution.rounds": ("evolution", "rounds", int),
    "evolution.top_fraction": ("evolution", "top_fraction", float),
    "eval.pretrain_steps": ("eval", "pretrain_steps", int),
    "eval.probe_steps": ("eval", "probe_steps", int),
    "eval.finetune_steps": ("eval", "finetune_steps", int),
    "eval.kmeans_restarts": ("eval", "kmeans_restarts", int),
}


def _parse_value(key: str, raw: str, typ: type):
    raw = raw.strip()
    try:
        if typ is bool:
            return _BOOL[raw.lower()]
        return typ(raw)
    except (KeyError, ValueError):
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text: str, *, seed_override: int | None = None,
                 workers_override: int | None = None) -> RunConfig:
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, val, _KEYS[key][2])
    return _build(values, seed_override, workers_override)


def load_config(path, *, seed_override: int | None = None,
                workers_override: int | None = None) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, seed_override=seed_override,
                        workers_override=workers_override)


def _build(values: dict, seed_override, workers_override) -> RunConfig:
    def section(name: str) -> dict:
        return {f: v for k, v in values.items()
                for s, f, _ in [_KEYS[k]] if s == name}

    top = section("")
    seed = seed_override if seed_override is not None else top.get("seed", 0)
    workers = workers_override if workers_override is not None else top.get("workers", 1)
    try:
        fitness = FitnessConfig(**section("fitness"),
                                base_seed=derive_seed(seed, "fitness"))
        evolution = EvolutionConfig(**section("evolution"), seed=seed,
                                    fitness=fitness)
        return RunConfig(seed=seed, workers=workers,
                         stop_gradient=top.get("stop_gradient", False),
                         data=DataConfig(**section("data")),
                         fitness=fitness, evolution=evolution,
                         eval=EvalConfig(**section("eval")))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def canonical_text(cfg: RunConfig) -> str:
    """Full key set with resolved values; the basis of the config hash."""
    lookup = {"": cfg, "data": cfg.data, "fitness": cfg.fitness,
              "evolution": cfg.evolution, "eval": cfg.eval}
    lines = []
    for key, (sec, fieldname, typ) in _KEYS.items():
        value = getattr(lookup[sec], fieldname)
        if key == "workers":
            continue  # parallelism never changes outputs; keep it out of the hash
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(canonical_text(cfg).encode("utf-8")).hexdigest()[:12]
