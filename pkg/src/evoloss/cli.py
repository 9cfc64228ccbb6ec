"""Command-line entry point: batch runs, no interactivity.

Commands: evolve, eval, report, sweep-data, gen-data. Exit codes: 0 success,
2 usage or config error, 3 runtime failure (with partial history flushed).
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, config_hash, load_config
from .data import save_dataset
from .evolution import (StubFitness, evolve, history_header, history_row,
                        load_history)
from .model import Model
from .probe import eval_finetune, eval_kmeans, eval_linear_probe
from .report import fitness_curve_csv, heatmap_csv, heatmap_svg, trajectory_csv
from .rngs import derive_seed, make_rng
from .schema import KEY_INDEX, N_WEIGHTS
from .training import train_model
from .weights import LossWeights, SchemaError, validate


def _comment(cfg: RunConfig) -> str:
    return f"evoloss v{__version__} config_hash={config_hash(cfg)}"


def _pretrain(cfg: RunConfig, bundle, w: LossWeights, tag: str) -> Model:
    model = Model(bundle.unlabeled.spec,
                  seed=derive_seed(cfg.seed, "eval-init", tag))
    train_model(model, w, bundle.unlabeled, steps=cfg.eval.pretrain_steps,
                batch_size=cfg.fitness.batch_size, lr=cfg.fitness.learning_rate,
                seed=derive_seed(cfg.seed, "eval-train", tag),
                stop_gradient=cfg.stop_gradient)
    return model


def _eval_all(cfg: RunConfig, bundle, w: LossWeights, tag: str) -> tuple[float, float, float]:
    enc = _pretrain(cfg, bundle, w, tag).encoders["rgb"]
    seed = derive_seed(cfg.seed, "eval-protocols", tag)
    return (eval_kmeans(enc, bundle.test, seed, restarts=cfg.eval.kmeans_restarts),
            eval_linear_probe(enc, bundle.probe, bundle.test, seed,
                              steps=cfg.eval.probe_steps),
            eval_finetune(enc, bundle.probe, bundle.test, 1.0, seed,
                          steps=cfg.eval.finetune_steps))


# ---------------------------------------------------------------------------
# subcommands


def cmd_evolve(args) -> int:
    cfg = load_config(args.config, seed_override=args.seed,
                      workers_override=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    comment = _comment(cfg)

    fitness_fn = None
    if args.stub_fitness is not None:
        coord = (int(make_rng(cfg.seed, "stub-coord").integers(N_WEIGHTS))
                 if args.stub_fitness == "auto" else args.stub_fitness)
        fitness_fn = StubFitness(coord)
    resume_from = load_history(args.resume) if args.resume else None
    bundle = None if fitness_fn is not None else cfg.bundle()

    history_path = out / "history.csv"
    fh = open(history_path, "w", encoding="utf-8")
    fh.write(history_header(comment))
    if resume_from is not None:
        for ind in resume_from.individuals:
            fh.write(history_row(ind))
    try:
        hist = evolve(cfg.evolution, bundle, fitness_fn=fitness_fn,
                      workers=cfg.workers, resume_from=resume_from,
                      stop_gradient=cfg.stop_gradient,
                      on_round=lambda ind, best: (fh.write(history_row(ind)),
                                                  fh.flush()))
    except Exception as exc:  # partial history already flushed
        fh.close()
        print(f"evolve failed after partial history ({history_path}): {exc}",
              file=sys.stderr)
        return 3
    fh.close()

    (out / "best_weights.txt").write_text(hist.best().weights.to_text(),
                                          encoding="utf-8")
    (out / "fitness_curve.csv").write_text(fitness_curve_csv(hist, comment),
                                           encoding="utf-8")
    print(f"wrote {history_path}, best_weights.txt, fitness_curve.csv "
          f"(best fitness {hist.best_so_far[-1]:.4f})")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config, seed_override=args.seed,
                      workers_override=args.workers)
    try:
        w = LossWeights.from_text(Path(args.weights).read_text(encoding="utf-8"))
    except OSError as exc:
        print(f"cannot read weights file: {exc}", file=sys.stderr)
        return 2
    violations = validate(w)
    if violations:
        for v in violations:
            print(f"invalid weights: {v}", file=sys.stderr)
        return 2

    bundle = cfg.bundle()
    jobs: list[tuple[str, LossWeights, str]] = [
        (f"weights:{Path(args.weights).stem}", w, "main")]
    rng = make_rng(cfg.seed, "random-weights")
    randoms = [LossWeights.uniform(rng) for _ in range(args.random_weights or 0)]
    for i, rw in enumerate(randoms):
        jobs.append((f"random:{i}", rw, f"random-{i}"))

    def run(job):
        name, weights, tag = job
        return name, _eval_all(cfg, bundle, weights, tag)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"# {_comment(cfg)}\n", "method,kmeans,1-layer,fine-tune\n"]
    name, accs = results[0]
    lines.append(f"{name},{accs[0]!r},{accs[1]!r},{accs[2]!r}\n")
    if randoms:
        import numpy as np
        mean = [float(v) for v in np.mean([a for _, a in results[1:]], axis=0)]
        lines.append(f"random_loss({len(randoms)}),{mean[0]!r},{mean[1]!r},{mean[2]!r}\n")
    report_path = out / "eval_report.csv"
    report_path.write_text("".join(lines), encoding="utf-8")
    print(f"wrote {report_path}")
    return 0


def cmd_report(args) -> int:
    path = Path(args.history)
    try:
        hist = load_history(path)
    except (OSError, ValueError) as exc:
        print(f"malformed history: {exc}", file=sys.stderr)
        return 2
    first = path.read_text(encoding="utf-8").splitlines()[0]
    if first.startswith("#"):
        comment = first[1:].strip()
    else:
        import hashlib
        digest = hashlib.sha256(path.read_bytes()).hexdigest()[:12]
        comment = f"evoloss v{__version__} config_hash={digest}"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    best = hist.best().weights
    (out / "trajectory.csv").write_text(trajectory_csv(hist, comment), encoding="utf-8")
    (out / "heatmap.csv").write_text(heatmap_csv(best, comment), encoding="utf-8")
    (out / "heatmap.svg").write_text(heatmap_svg(best, comment), encoding="utf-8")
    (out / "fitness_curve.csv").write_text(fitness_curve_csv(hist, comment),
                                           encoding="utf-8")
    print(f"wrote trajectory.csv, heatmap.csv, heatmap.svg, fitness_curve.csv in {out}")
    return 0


def cmd_sweep_data(args) -> int:
    cfg = load_config(args.config, seed_override=args.seed,
                      workers_override=args.workers)
    try:
        w = LossWeights.from_text(Path(args.weights).read_text(encoding="utf-8"))
    except OSError as exc:
        print(f"cannot read weights file: {exc}", file=sys.stderr)
        return 2
    try:
        amounts = [int(a) for a in args.amounts.split(",") if a.strip()]
    except ValueError:
        print(f"bad --amounts list: {args.amounts!r}", file=sys.stderr)
        return 2
    bundle = cfg.bundle()
    n_full = len(bundle.unlabeled)
    if not amounts or any(a <= 0 or a > n_full for a in amounts):
        print(f"amounts must be in [1, {n_full}], got {amounts}", file=sys.stderr)
        return 2

    jobs = []
    for amount in amounts:
        for regime in ("fixed_steps", "fixed_epochs"):
            steps = (cfg.eval.pretrain_steps if regime == "fixed_steps"
                     else max(1, round(cfg.eval.pretrain_steps * amount / n_full)))
            jobs.append((amount, regime, steps))

    def run(job):
        amount, regime, steps = job
        subset = bundle.unlabeled.subset(range(amount))
        model = Model(bundle.unlabeled.spec,
                      seed=derive_seed(cfg.seed, "sweep-init", amount))
        train_model(model, w, subset, steps=steps,
                    batch_size=cfg.fitness.batch_size,
                    lr=cfg.fitness.learning_rate,
                    seed=derive_seed(cfg.seed, "sweep-train", amount),
                    stop_gradient=cfg.stop_gradient)
        acc = eval_linear_probe(model.encoders["rgb"], bundle.probe, bundle.test,
                                derive_seed(cfg.seed, "sweep-probe", amount),
                                steps=cfg.eval.probe_steps)
        return amount, regime, acc

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"# {_comment(cfg)}\n", "amount,regime,probe_acc\n"]
    for amount, regime, acc in results:
        lines.append(f"{amount},{regime},{acc!r}\n")
    sweep_path = out / "sweep.csv"
    sweep_path.write_text("".join(lines), encoding="utf-8")
    print(f"wrote {sweep_path}")
    return 0


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config, seed_override=args.seed)
    bundle = cfg.bundle()
    split = getattr(bundle, args.split)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(split, out)
    print(f"wrote {out} ({len(split)} clips, split={args.split})")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evoloss",
        description="Evolve multi-modal self-supervised loss weightings on "
                    "synthetic clip data.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_workers=True):
        p.add_argument("--config", required=True, help="key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=".", help="output directory")
        if with_workers:
            p.add_argument("--workers", type=int, default=None,
                           help="parallel fitness evaluations (never changes outputs)")

    p = sub.add_parser("evolve", help="run the evolutionary search")
    common(p)
    p.add_argument("--stub-fitness", nargs="?", const="auto", default=None,
                   metavar="KEY", help="replace fitness by one weight coordinate "
                   "(search-loop testing); KEY optional, default derived from seed")
    p.add_argument("--resume", default=None, metavar="HISTORY",
                   help="resume bit-exactly from a history file")
    p.set_defaults(fn=cmd_evolve)

    p = sub.add_parser("eval", help="train with given weights, run all eval protocols")
    p.add_argument("weights", help="canonical LossWeights text file")
    common(p)
    p.add_argument("--random-weights", type=int, default=0, metavar="N",
                   help="also report the mean of N random weight vectors")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="emit figure data from a history file")
    p.add_argument("history", help="history CSV from evolve")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("sweep-data", help="probe accuracy vs unlabeled-data amount")
    common(p)
    p.add_argument("--weights", required=True, help="weights file to train with")
    p.add_argument("--amounts", required=True,
                   help="comma-separated clip counts, e.g. 250,500,1000,2000")
    p.set_defaults(fn=cmd_sweep_data)

    p = sub.add_parser("gen-data", help="export a dataset split to binary")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output file")
    p.add_argument("--split", choices=("unlabeled", "probe", "test"),
                   default="unlabeled")
    p.set_defaults(fn=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    if getattr(args, "stub_fitness", None) not in (None, "auto"):
        if args.stub_fitness not in KEY_INDEX:
            print(f"unknown stub-fitness key {args.stub_fitness!r}", file=sys.stderr)
            return 2
    try:
        return args.fn(args)
    except (ConfigError, SchemaError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
