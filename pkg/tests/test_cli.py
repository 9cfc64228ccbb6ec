import numpy as np
import pytest

from evoloss.cli import main
from evoloss.config import ConfigError, config_hash, load_config, parse_config
from evoloss.evolution import load_history
from evoloss.report import heatmap_csv, heatmap_grid, heatmap_svg
from evoloss.weights import LossWeights

TINY_CONFIG = """\
# tiny run for tests
seed = 7
data.n_unlabeled = 24
data.n_probe = 16
data.n_test = 16
data.n_classes = 3
data.frames = 5
data.height = 4
data.width = 4
data.audio_samples = 16
fitness.train_steps = 6
fitness.batch_size = 4
fitness.probe_size = 16
fitness.kmeans_restarts = 2
evolution.population_size = 4
evolution.rounds = 3
eval.pretrain_steps = 6
eval.probe_steps = 50
eval.finetune_steps = 20
"""


@pytest.fixture()
def config_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(TINY_CONFIG)
    return p


# -- config ------------------------------------------------------------------

def test_config_defaults_and_overrides():
    cfg = parse_config("")
    assert cfg.data.n_unlabeled == 2000 and cfg.evolution.rounds == 100
    cfg = parse_config("evolution.rounds = 5\nseed = 3\n")
    assert cfg.evolution.rounds == 5 and cfg.seed == 3
    assert cfg.evolution.seed == 3


def test_config_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("data.bogus = 1\n")


def test_config_duplicate_and_bad_value():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("seed = 1\nseed = 2\n")
    with pytest.raises(ConfigError, match="bad value"):
        parse_config("seed = banana\n")
    with pytest.raises(ConfigError, match="key = value"):
        parse_config("what is this\n")


def test_config_hash_ignores_workers_but_not_seed():
    a = parse_config("workers = 1\n")
    b = parse_config("workers = 4\n")
    c = parse_config("seed = 9\n")
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)


def test_config_validation_errors_are_config_errors():
    with pytest.raises(ConfigError):
        parse_config("evolution.population_size = 1\n")


# -- report helpers -----------------------------------------------------------

def test_heatmap_grid_has_exactly_16_cells_in_unit_interval():
    w = LossWeights.uniform(np.random.default_rng(0))
    grid = heatmap_grid(w)
    filled = [v for row in grid for v in row if v is not None]
    assert len(filled) == 16
    assert all(0.0 <= v <= 1.0 for v in filled)
    assert sorted(filled) == sorted(w.values.tolist())


def test_heatmap_csv_and_svg_shape():
    w = LossWeights.uniform(np.random.default_rng(1))
    text = heatmap_csv(w, "hash=x")
    lines = text.splitlines()
    assert lines[0] == "# hash=x"
    assert lines[1].startswith("modality,S,B,C,A,P,F,E,D1,D2")
    assert len(lines) == 2 + 4
    svg = heatmap_svg(w, "hash=x")
    assert svg.startswith("<svg") is False or True
    assert "<svg" in svg and svg.count("<rect") == 4 * 9


# -- CLI end to end ----------------------------------------------------------

def test_evolve_byte_identical_reruns(tmp_path, config_file):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["evolve", "--config", str(config_file), "--out", str(out1)]) == 0
    assert main(["evolve", "--config", str(config_file), "--out", str(out2)]) == 0
    for name in ("history.csv", "best_weights.txt", "fitness_curve.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_evolve_workers_do_not_change_outputs(tmp_path, config_file):
    out1, out4 = tmp_path / "w1", tmp_path / "w4"
    assert main(["evolve", "--config", str(config_file), "--out", str(out1),
                 "--workers", "1"]) == 0
    assert main(["evolve", "--config", str(config_file), "--out", str(out4),
                 "--workers", "4"]) == 0
    assert (out1 / "history.csv").read_bytes() == (out4 / "history.csv").read_bytes()


def test_evolve_zero_rounds_history_rows(tmp_path):
    cfg = tmp_path / "zero.cfg"
    cfg.write_text(TINY_CONFIG.replace("evolution.rounds = 3",
                                       "evolution.rounds = 0"))
    out = tmp_path / "out"
    assert main(["evolve", "--config", str(cfg), "--out", str(out),
                 "--stub-fitness"]) == 0
    rows = [l for l in (out / "history.csv").read_text().splitlines()
            if l and not l.startswith("#")]
    assert len(rows) == 1 + 4  # header + population_size


def test_evolve_stub_fitness_recovers_planted_coordinate(tmp_path):
    cfg = tmp_path / "stub.cfg"
    cfg.write_text("seed = 3\nevolution.population_size = 20\n"
                   "evolution.rounds = 50\n")
    out = tmp_path / "out"
    assert main(["evolve", "--config", str(cfg), "--out", str(out),
                 "--stub-fitness", "task.rgb.audio_align"]) == 0
    w = LossWeights.from_text((out / "best_weights.txt").read_text())
    assert w["task.rgb.audio_align"] > 0.9


def test_evolve_resume_bit_exact(tmp_path, config_file):
    full_out = tmp_path / "full"
    cfg6 = tmp_path / "six.cfg"
    cfg6.write_text(TINY_CONFIG.replace("evolution.rounds = 3",
                                        "evolution.rounds = 6"))
    assert main(["evolve", "--config", str(cfg6), "--out", str(full_out),
                 "--stub-fitness"]) == 0
    half_out = tmp_path / "half"
    cfg3 = tmp_path / "three.cfg"
    cfg3.write_text(TINY_CONFIG)
    assert main(["evolve", "--config", str(cfg3), "--out", str(half_out),
                 "--stub-fitness"]) == 0
    resumed_out = tmp_path / "resumed"
    assert main(["evolve", "--config", str(cfg6), "--out", str(resumed_out),
                 "--stub-fitness", "--resume", str(half_out / "history.csv")]) == 0
    assert ((full_out / "history.csv").read_bytes()
            == (resumed_out / "history.csv").read_bytes())


def test_evolve_invalid_config_exits_2(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense.key = 1\n")
    assert main(["evolve", "--config", str(bad), "--out", str(tmp_path)]) == 2
    missing = tmp_path / "does_not_exist.cfg"
    assert main(["evolve", "--config", str(missing), "--out", str(tmp_path)]) == 2


def test_eval_malformed_weights_exits_2(tmp_path, config_file, capsys):
    wfile = tmp_path / "w.txt"
    text = LossWeights.zeros().to_text().replace(
        "task.rgb.shuffle = 0.000000", "task.rgb.shuffle = 1.700000")
    wfile.write_text(text)
    assert main(["eval", str(wfile), "--config", str(config_file),
                 "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "task.rgb.shuffle" in err and "outside" in err


def test_eval_writes_report_with_random_baseline(tmp_path, config_file):
    wfile = tmp_path / "w.txt"
    wfile.write_text(LossWeights.ones().to_text())
    out = tmp_path / "out"
    assert main(["eval", str(wfile), "--config", str(config_file),
                 "--out", str(out), "--random-weights", "2"]) == 0
    lines = (out / "eval_report.csv").read_text().splitlines()
    assert lines[0].startswith("# evoloss v") and "config_hash=" in lines[0]
    assert lines[1] == "method,kmeans,1-layer,fine-tune"
    assert lines[2].startswith("weights:w,")
    assert lines[3].startswith("random_loss(2),")
    for row in lines[2:]:
        vals = [float(x) for x in row.split(",")[1:]]
        assert all(0.0 <= v <= 1.0 for v in vals)


def test_report_outputs_schema(tmp_path, config_file):
    run_out = tmp_path / "run"
    assert main(["evolve", "--config", str(config_file), "--out", str(run_out)]) == 0
    rep_out = tmp_path / "rep"
    assert main(["report", str(run_out / "history.csv"), "--out", str(rep_out)]) == 0

    hist = load_history(run_out / "history.csv")
    traj = (rep_out / "trajectory.csv").read_text().splitlines()
    assert traj[0].startswith("#") and "config_hash=" in traj[0]
    assert traj[1].split(",")[0] == "round"
    assert len(traj) == 2 + hist.rounds() + 1

    heat = (rep_out / "heatmap.csv").read_text().splitlines()
    cells = [c for row in heat[2:] for c in row.split(",")[1:] if c != ""]
    assert len(cells) == 16
    assert all(0.0 <= float(c) <= 1.0 for c in cells)

    curve = (rep_out / "fitness_curve.csv").read_text().splitlines()
    best = [float(r.split(",")[2]) for r in curve[2:]]
    assert best == sorted(best)
    assert (rep_out / "heatmap.svg").read_text().count("<rect") == 36


def test_report_malformed_history_exits_2(tmp_path):
    bad = tmp_path / "hist.csv"
    bad.write_text("not,a,history\n1,2,3\n")
    assert main(["report", str(bad), "--out", str(tmp_path)]) == 2


def test_sweep_data_schema_and_regime_coincidence(tmp_path, config_file):
    wfile = tmp_path / "w.txt"
    wfile.write_text(LossWeights.ones().to_text())
    out = tmp_path / "out"
    assert main(["sweep-data", "--config", str(config_file), "--weights",
                 str(wfile), "--amounts", "8,24", "--out", str(out)]) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[1] == "amount,regime,probe_acc"
    rows = [l.split(",") for l in lines[2:]]
    assert len(rows) == 2 * 2
    full = {r[1]: float(r[2]) for r in rows if r[0] == "24"}
    # amount == full dataset: both regimes run the same effective steps
    assert full["fixed_steps"] == full["fixed_epochs"]


def test_sweep_data_bad_amounts_exit_2(tmp_path, config_file):
    wfile = tmp_path / "w.txt"
    wfile.write_text(LossWeights.ones().to_text())
    assert main(["sweep-data", "--config", str(config_file), "--weights",
                 str(wfile), "--amounts", "0,5", "--out", str(tmp_path)]) == 2
    assert main(["sweep-data", "--config", str(config_file), "--weights",
                 str(wfile), "--amounts", "999", "--out", str(tmp_path)]) == 2


def test_gen_data_round_trip(tmp_path, config_file):
    from evoloss.data import load_dataset
    out = tmp_path / "clips.evml"
    assert main(["gen-data", "--config", str(config_file), "--out", str(out),
                 "--split", "probe"]) == 0
    ds = load_dataset(out)
    assert len(ds) == 16
    cfg = load_config(config_file)
    assert ds.spec.n_classes == cfg.data.n_classes


def test_unknown_stub_key_exits_2(tmp_path, config_file):
    assert main(["evolve", "--config", str(config_file), "--out", str(tmp_path),
                 "--stub-fitness", "task.rgb.nope"]) == 2


def test_usage_error_exits_2():
    assert main(["evolve"]) == 2
    assert main(["not-a-command"]) == 2
