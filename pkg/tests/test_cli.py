import json
from math import comb

import numpy as np
import pytest

from krompc import experiments, io
from krompc.cli import EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK, main, parse_overrides
from krompc.plant import CyclicSchedule, LinearTestPlant, simulate

LINEAR = {"plant": "linear", "plant_params": {"dim": 2, "spectral_radius": 0.8, "plant_seed": 4},
          "degree": 1, "duration": 3.0, "collect_duration": 12.0, "horizon": 2}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(LINEAR))
    return path


def _cli(config, command, out, *extra):
    return main([command, "--config", str(config), "--out-dir", str(out), *extra])


def test_parse_overrides():
    assert parse_overrides(["--a=1", "--b.c=x", "--d=[1, 2]"]) == {"a": 1, "b.c": "x", "d": [1, 2]}
    with pytest.raises(ValueError):
        parse_overrides(["--novalue"])


def test_dotted_override_reaches_nested_field():
    cfg = experiments.load_config(None, {"plant": "linear", "plant_params.dim": 3})
    assert cfg.plant_params == {"dim": 3}
    with pytest.raises(ValueError):
        experiments.load_config(None, {"bogus": 1})


def test_pipeline_and_audit(config, tmp_path, capsys):
    out = tmp_path / "a"
    assert _cli(config, "collect", out) == EXIT_OK
    capsys.readouterr()
    assert sorted(p.name for p in (out / "snapshots").glob("u*.csv")) == ["u0.csv", "u1.csv", "u2.csv"]
    assert _cli(config, "fit", out) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["k"] == 3
    assert _cli(config, "run", out, "--compare=[\"bilinear\", \"localized\"]") == EXIT_OK
    summary = io.read_json(out / "run" / "summary.json")
    assert set(summary["runs"]) == {"switched", "bilinear", "localized", "oracle", "oracle-continuous"}
    assert summary["runs"]["switched"]["n_steps"] == 30
    assert main(["audit", str(out)]) == EXIT_OK

    # tamper with a reported metric: the audit must notice
    summary["runs"]["switched"]["total_cost"] *= 1.01
    io.write_json(out / "run" / "summary.json", summary)
    assert main(["audit", str(out)]) == EXIT_INVALID
    assert "MISMATCH run/switched: total_cost" in capsys.readouterr().out


def test_outputs_are_deterministic(config, tmp_path):
    for name in ("a", "b"):
        assert _cli(config, "run", tmp_path / name, "--seed=5") == EXIT_OK
    for rel in ("snapshots/u1.csv", "models/model_u2.json", "run/switched/trace.csv", "run/oracle/trace.csv"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_refit_is_identical_and_degree_sets_k(config, tmp_path):
    out = tmp_path / "a"
    assert _cli(config, "fit", out, "--degree=3") == EXIT_OK
    first = (out / "models" / "model_u0.json").read_bytes()
    assert _cli(config, "fit", out, "--degree=3") == EXIT_OK
    assert (out / "models" / "model_u0.json").read_bytes() == first
    model = io.read_model(out / "models" / "model_u0.json")
    assert model.dictionary.size == comb(2 + 3, 3)


def test_exit_codes(config, tmp_path):
    assert _cli(config, "run", tmp_path / "x", "--surrogate=magic") == EXIT_INVALID
    assert _cli(config, "run", tmp_path / "x", "--no-such-field=1") == EXIT_INVALID
    assert _cli(config, "collect", tmp_path / "x", "--collect_duration=0") == EXIT_INVALID
    assert main(["audit", str(tmp_path / "missing")]) == EXIT_INVALID
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == EXIT_INVALID
    # an unstable plant blows up during collection
    assert _cli(config, "collect", tmp_path / "y", "--plant_params.spectral_radius=1e12",
                "--collect_duration=30") == EXIT_NUMERICAL


def test_sweep_grid(config, tmp_path):
    out = tmp_path / "s"
    assert _cli(config, "sweep", out, "--sweep_volumes=[20, 40, 80]", "--duration=1") == EXIT_OK
    header, rows = io.read_table(out / "sweep" / "results.csv")
    recs = [dict(zip(header, r)) for r in rows]
    assert len(recs) == 9
    assert all(r["status"] == "ok" for r in recs)
    assert {(int(r["degree"]), int(r["k"])) for r in recs} == {(1, 3), (2, 6), (3, 10)}
    assert {int(r["n_pairs"]) for r in recs} == {20, 40, 80}
    assert main(["audit", str(out)]) == EXIT_OK


def test_parallel_sweep_matches_serial(config, tmp_path):
    args = ["--sweep_volumes=[30]", "--sweep_degrees=[1, 2]", "--duration=1"]
    assert _cli(config, "sweep", tmp_path / "s1", *args) == EXIT_OK
    assert _cli(config, "sweep", tmp_path / "s2", *args, "--jobs", "2") == EXIT_OK
    a = (tmp_path / "s1" / "sweep" / "results.csv").read_bytes()
    assert a == (tmp_path / "s2" / "sweep" / "results.csv").read_bytes()


def test_single_cell_sweep_matches_run(config, tmp_path):
    assert _cli(config, "run", tmp_path / "r") == EXIT_OK
    assert _cli(config, "sweep", tmp_path / "s", "--sweep_degrees=[1]", "--sweep_volumes=[null]") == EXIT_OK
    summary = io.read_json(tmp_path / "r" / "run" / "summary.json")
    header, rows = io.read_table(tmp_path / "s" / "sweep" / "results.csv")
    rec = dict(zip(header, rows[0]))
    assert float(rec["total_cost"]) == pytest.approx(summary["runs"]["switched"]["total_cost"], rel=1e-12)


def test_import_route(tmp_path):
    plant = LinearTestPlant([[0.7, 0.2], [0.0, 0.4]], [1.0, 0.5], 0.1)
    traj = simulate(plant, [1.0, -1.0], CyclicSchedule([-1.0, 0.0, 1.0], 0.5), 6.0, 0.1)
    io.write_trajectory(tmp_path / "ext", traj, names=["p", "q"])
    cfg = {"plant": "import", "import_files": [str(tmp_path / "ext")], "lag": 0.1, "degree": 1}
    (tmp_path / "imp.json").write_text(json.dumps(cfg))
    out = tmp_path / "o"
    assert _cli(tmp_path / "imp.json", "fit", out) == EXIT_OK
    bank = io.read_ensemble(out / "models" / "ensemble_switched.json")
    np.testing.assert_allclose(bank.control_values, [-1.0, 0.0, 1.0])
    # the data are exact and rich enough to recover the plant
    K = bank.models[2].U_transpose
    np.testing.assert_allclose(K[1:3, 1:3], plant.M, atol=1e-8)
    np.testing.assert_allclose(K[1:3, 0], plant.N, atol=1e-8)
    assert _cli(tmp_path / "imp.json", "fit", out, "--lag=0.15") == EXIT_INVALID


def test_burgers_default_collection_bookkeeping(tmp_path):
    cfg = experiments.load_config(None, {"out_dir": str(tmp_path)})
    snaps = experiments.collect_snapshots(cfg)
    steps = round(cfg.collect_duration / cfg.dt_sample)
    lag = round(cfg.lag / cfg.dt_sample)
    n_ic = 3
    const = steps + 1 - lag
    # cyclic run: a pair belongs to the bucket of the control applied at its start,
    # and only pairs whose whole lag window stays inside one switch block count
    # (both end samples of a block belong to it)
    block = round(cfg.switch_period / cfg.dt_sample)
    per_block = block - lag + 1
    blocks = steps // block
    counts = {}
    for b in range(blocks):
        u = sorted(cfg.anchors)[b % len(cfg.anchors)]
        counts[u] = counts.get(u, 0) + per_block
    assert len(snaps) == 3
    for u, s in snaps.items():
        assert s.Z.shape == (4, n_ic * (const + counts[u]))
